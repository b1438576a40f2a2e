#pragma once

#include <algorithm>
#include <cstdint>
#include <numeric>
#include <string>

#include "histo/tape.hpp"
#include "histo/tensor.hpp"

namespace histo {

// Stable sort order of every last-axis slice; ties keep their original order.
template <class T>
PermutationIndex argsort_last(const Tensor<T>& x, bool ascending = true) {
  const auto n = x.dim(-1);
  const auto rows = x.numel() / n;
  PermutationIndex p{x.shape(), std::vector<std::int32_t>(static_cast<std::size_t>(x.numel()))};
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* v = x.ptr() + r * n;
    auto first = p.indices.begin() + r * n;
    auto last = first + n;
    std::iota(first, last, 0);
    if (ascending)
      std::stable_sort(first, last, [v](std::int32_t a, std::int32_t b) { return v[a] < v[b]; });
    else
      std::stable_sort(first, last, [v](std::int32_t a, std::int32_t b) { return v[a] > v[b]; });
  }
  return p;
}

// Sorting is piecewise constant in its index output, so it records nothing on
// the tape; the permutation is only logged for finite-difference checks.
template <class T>
PermutationIndex argsort_last(const Var<T>& x, bool ascending = true) {
  const PermutationIndex* replayed = x.tape().next_replayed_permutation(x.shape());
  auto p = replayed ? *replayed : argsort_last(x.value(), ascending);
  x.tape().log_permutation(p);
  return p;
}

namespace detail {

inline void check_index_shape(const Shape& s, const PermutationIndex& p, const char* op) {
  if (p.shape != s)
    throw DimensionError(std::string(op) + ": index shape " + shape_str(p.shape) + " does not match tensor " +
                         shape_str(s));
}

template <class T>
Tensor<T> gather_last_raw(const Tensor<T>& x, const PermutationIndex& p) {
  check_index_shape(x.shape(), p, "gather_last");
  const auto n = x.dim(-1);
  const auto rows = x.numel() / n;
  Tensor<T> out(x.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.ptr() + r * n;
    const std::int32_t* idx = p.indices.data() + r * n;
    T* dst = out.ptr() + r * n;
    for (std::int64_t j = 0; j < n; ++j) {
      const auto k = idx[j];
      if (k < 0 || k >= n) throw IndexError("gather_last: index " + std::to_string(k) + " outside [0," + std::to_string(n) + ")");
      dst[j] = src[k];
    }
  }
  return out;
}

// out[p[j]] = x[j] (accumulate=false) or += (accumulate=true, used by VJPs).
template <class T>
void scatter_last_into(const Tensor<T>& x, const PermutationIndex& p, Tensor<T>& out, bool accumulate) {
  const auto n = x.dim(-1);
  const auto rows = x.numel() / n;
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = x.ptr() + r * n;
    const std::int32_t* idx = p.indices.data() + r * n;
    T* dst = out.ptr() + r * n;
    if (accumulate)
      for (std::int64_t j = 0; j < n; ++j) dst[idx[j]] += src[j];
    else
      for (std::int64_t j = 0; j < n; ++j) dst[idx[j]] = src[j];
  }
}

}  // namespace detail

template <class T>
Tensor<T> gather_last(const Tensor<T>& x, const PermutationIndex& p) {
  return detail::gather_last_raw(x, p);
}

template <class T>
Tensor<T> scatter_last(const Tensor<T>& x, const PermutationIndex& p) {
  detail::check_index_shape(x.shape(), p, "scatter_last");
  if (!p.is_permutation()) throw IndexError("scatter_last: index is not a permutation of every slice");
  Tensor<T> out(x.shape());
  detail::scatter_last_into(x, p, out, false);
  return out;
}

// out[..., j] = x[..., p[..., j]]; the VJP routes gradients back through p.
template <class T>
Var<T> gather_last(const Var<T>& x, const PermutationIndex& p) {
  Tensor<T> out = detail::gather_last_raw(x.value(), p);
  return x.tape().emit("gather_last", std::move(out), {&x}, [nx = x.node(), p](const Tensor<T>& g) {
    if (nx->requires_grad) detail::scatter_last_into(g, p, nx->grad_buffer(), true);
  });
}

// Exact inverse of gather_last with the same p.
template <class T>
Var<T> scatter_last(const Var<T>& x, const PermutationIndex& p) {
  Tensor<T> out = scatter_last(x.value(), p);
  return x.tape().emit("scatter_last", std::move(out), {&x}, [nx = x.node(), p](const Tensor<T>& g) {
    if (!nx->requires_grad) return;
    Tensor<T> back = detail::gather_last_raw(g, p);
    nx->accumulate(back);
  });
}

// Repeats every slice of `p` along a new leading block: for an index over
// [C, L], returns one over [times*C, L] where slice k*C + c equals slice c.
inline PermutationIndex tile_slices(const PermutationIndex& p, int times) {
  PermutationIndex out;
  out.shape = p.shape;
  out.shape[0] *= times;
  out.indices.reserve(p.indices.size() * static_cast<std::size_t>(times));
  for (int t = 0; t < times; ++t) out.indices.insert(out.indices.end(), p.indices.begin(), p.indices.end());
  return out;
}

}  // namespace histo
