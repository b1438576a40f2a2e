#pragma once

// Differentiable primitives over Var handles. Every op computes its value
// eagerly and, when the tape is recording, registers its vector-Jacobian
// product.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "histo/tape.hpp"
#include "histo/tensor.hpp"

namespace histo {

namespace detail {

template <class T>
Tape<T>& tape_of(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.tape_ptr() != b.tape_ptr()) throw StateError(std::string(op) + ": operands live on different tapes");
  return a.tape();
}

template <class T>
void require_same_shape(const Var<T>& a, const Var<T>& b, const char* op) {
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

// c[m,n] += op(a) * op(b); a is [m,p] (or [p,m] if ta), b is [p,n] (or [n,p] if tb).
template <class T>
void gemm_acc(const T* __restrict a, const T* __restrict b, T* __restrict c, std::int64_t m, std::int64_t p, std::int64_t n, bool ta, bool tb) {
  if (!ta && !tb) {
    std::int64_t i = 0;
    for (; i + 4 <= m; i += 4) {
      T* c0 = c + i * n;
      T* c1 = c0 + n;
      T* c2 = c1 + n;
      T* c3 = c2 + n;
      for (std::int64_t k = 0; k < p; ++k) {
        const T a0 = a[i * p + k], a1 = a[(i + 1) * p + k], a2 = a[(i + 2) * p + k], a3 = a[(i + 3) * p + k];
        const T* bk = b + k * n;
        for (std::int64_t j = 0; j < n; ++j) {
          const T bv = bk[j];
          c0[j] += a0 * bv;
          c1[j] += a1 * bv;
          c2[j] += a2 * bv;
          c3[j] += a3 * bv;
        }
      }
    }
    for (; i < m; ++i) {
      T* ci = c + i * n;
      for (std::int64_t k = 0; k < p; ++k) {
        const T aik = a[i * p + k];
        const T* bk = b + k * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += aik * bk[j];
      }
    }
  } else if (!ta && tb) {
    for (std::int64_t i = 0; i < m; ++i) {
      const T* ai = a + i * p;
      for (std::int64_t j = 0; j < n; ++j) {
        const T* bj = b + j * p;
        T s = 0;
        for (std::int64_t k = 0; k < p; ++k) s += ai[k] * bj[k];
        c[i * n + j] += s;
      }
    }
  } else if (ta && !tb) {
    for (std::int64_t k = 0; k < p; ++k) {
      const T* ak = a + k * m;
      const T* bk = b + k * n;
      for (std::int64_t i = 0; i < m; ++i) {
        const T aki = ak[i];
        T* ci = c + i * n;
        for (std::int64_t j = 0; j < n; ++j) ci[j] += aki * bk[j];
      }
    }
  } else {
    for (std::int64_t i = 0; i < m; ++i)
      for (std::int64_t j = 0; j < n; ++j) {
        T s = 0;
        for (std::int64_t k = 0; k < p; ++k) s += a[k * m + i] * b[j * p + k];
        c[i * n + j] += s;
      }
  }
}

template <class T>
Tensor<T> permute_tensor(const Tensor<T>& x, const std::vector<int>& axes) {
  const int r = x.rank();
  if (static_cast<int>(axes.size()) != r) throw DimensionError("permute: axes length must equal rank");
  std::vector<char> seen(static_cast<std::size_t>(r), 0);
  Shape out_shape(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int a = axes[static_cast<std::size_t>(i)];
    if (a < 0 || a >= r || seen[static_cast<std::size_t>(a)]) throw DimensionError("permute: invalid axes");
    seen[static_cast<std::size_t>(a)] = 1;
    out_shape[static_cast<std::size_t>(i)] = x.shape()[static_cast<std::size_t>(a)];
  }
  std::vector<std::int64_t> in_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i + 1)] * x.shape()[static_cast<std::size_t>(i + 1)];
  std::vector<std::int64_t> step(static_cast<std::size_t>(r));
  for (int i = 0; i < r; ++i) step[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(axes[static_cast<std::size_t>(i)])];

  Tensor<T> out(out_shape);
  std::vector<std::int64_t> idx(static_cast<std::size_t>(r), 0);
  const T* src = x.ptr();
  T* dst = out.ptr();
  const std::int64_t inner = out_shape.back();
  const std::int64_t inner_step = step.back();
  std::int64_t offset = 0;
  const std::int64_t total = out.numel();
  for (std::int64_t o = 0; o < total; o += inner) {
    const T* s = src + offset;
    for (std::int64_t j = 0; j < inner; ++j) dst[o + j] = s[j * inner_step];
    // advance the multi-index over all axes but the last
    for (int ax = r - 2; ax >= 0; --ax) {
      const auto a = static_cast<std::size_t>(ax);
      if (++idx[a] < out_shape[a]) {
        offset += step[a];
        break;
      }
      offset -= step[a] * (out_shape[a] - 1);
      idx[a] = 0;
    }
  }
  return out;
}

inline std::vector<int> inverse_axes(const std::vector<int>& axes) {
  std::vector<int> inv(axes.size());
  for (std::size_t i = 0; i < axes.size(); ++i) inv[static_cast<std::size_t>(axes[i])] = static_cast<int>(i);
  return inv;
}

}  // namespace detail

// ---- elementwise -----------------------------------------------------------

template <class T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b, "add");
  detail::require_same_shape(a, b, "add");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  T* po = out.ptr();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] += pb[i];
  return tape.emit("add", std::move(out), {&a, &b}, [na = a.node(), nb = b.node()](const Tensor<T>& g) {
    accumulate_into(na, g);
    accumulate_into(nb, g);
  });
}

template <class T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b, "sub");
  detail::require_same_shape(a, b, "sub");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  T* po = out.ptr();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] -= pb[i];
  return tape.emit("sub", std::move(out), {&a, &b}, [na = a.node(), nb = b.node()](const Tensor<T>& g) {
    accumulate_into(na, g);
    if (nb->requires_grad) {
      Tensor<T> neg = g;
      for (auto& v : neg.data()) v = -v;
      nb->accumulate(neg);
    }
  });
}

template <class T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b, "mul");
  detail::require_same_shape(a, b, "mul");
  Tensor<T> out = a.value();
  const T* pb = b.value().ptr();
  T* po = out.ptr();
  for (std::int64_t i = 0; i < out.numel(); ++i) po[i] *= pb[i];
  return tape.emit("mul", std::move(out), {&a, &b}, [na = a.node(), nb = b.node()](const Tensor<T>& g) {
    const std::int64_t n = g.numel();
    if (na->requires_grad) {
      Tensor<T> ga(g.shape());
      for (std::int64_t i = 0; i < n; ++i) ga[i] = g[i] * nb->value[i];
      na->accumulate(ga);
    }
    if (nb->requires_grad) {
      Tensor<T> gb(g.shape());
      for (std::int64_t i = 0; i < n; ++i) gb[i] = g[i] * na->value[i];
      nb->accumulate(gb);
    }
  });
}

template <class T>
Var<T> scale(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v *= s;
  return a.tape().emit("scale", std::move(out), {&a}, [na = a.node(), s](const Tensor<T>& g) {
    Tensor<T> ga = g;
    for (auto& v : ga.data()) v *= s;
    accumulate_into(na, ga);
  });
}

template <class T>
Var<T> add_scalar(const Var<T>& a, T s) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v += s;
  return a.tape().emit("add_scalar", std::move(out), {&a},
                       [na = a.node()](const Tensor<T>& g) { accumulate_into(na, g); });
}

// Subgradient 0 at exactly 0.
template <class T>
Var<T> abs(const Var<T>& a) {
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = std::abs(v);
  return a.tape().emit("abs", std::move(out), {&a}, [na = a.node()](const Tensor<T>& g) {
    Tensor<T> ga(g.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const T x = na->value[i];
      ga[i] = x > 0 ? g[i] : (x < 0 ? -g[i] : T(0));
    }
    accumulate_into(na, ga);
  });
}

// x * tanh(softplus(x))
template <class T>
Var<T> mish(const Var<T>& a) {
  auto softplus = [](T x) { return std::max(x, T(0)) + std::log1p(std::exp(-std::abs(x))); };
  Tensor<T> out = a.value();
  for (auto& v : out.data()) v = v * std::tanh(softplus(v));
  return a.tape().emit("mish", std::move(out), {&a}, [na = a.node(), softplus](const Tensor<T>& g) {
    Tensor<T> ga(g.shape());
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const T x = na->value[i];
      const T t = std::tanh(softplus(x));
      const T sig = T(1) / (T(1) + std::exp(-x));
      ga[i] = g[i] * (t + x * (T(1) - t * t) * sig);
    }
    accumulate_into(na, ga);
  });
}

// ---- reductions ------------------------------------------------------------

template <class T>
Var<T> sum(const Var<T>& a) {
  T s = 0;
  for (T v : a.value().data()) s += v;
  return a.tape().emit("sum", Tensor<T>::scalar(s), {&a}, [na = a.node()](const Tensor<T>& g) {
    accumulate_into(na, Tensor<T>(na->value.shape(), g[0]));
  });
}

template <class T>
Var<T> mean(const Var<T>& a) {
  const T n = static_cast<T>(a.value().numel());
  return scale(sum(a), T(1) / n);
}

// ---- layout ----------------------------------------------------------------

template <class T>
Var<T> reshape(const Var<T>& a, Shape s) {
  Tensor<T> out = a.value().reshaped(std::move(s));
  return a.tape().emit("reshape", std::move(out), {&a}, [na = a.node()](const Tensor<T>& g) {
    if (na->requires_grad) na->accumulate(g.reshaped(na->value.shape()));
  });
}

template <class T>
Var<T> permute(const Var<T>& a, std::vector<int> axes) {
  Tensor<T> out = detail::permute_tensor(a.value(), axes);
  return a.tape().emit("permute", std::move(out), {&a}, [na = a.node(), axes](const Tensor<T>& g) {
    if (na->requires_grad) na->accumulate(detail::permute_tensor(g, detail::inverse_axes(axes)));
  });
}

// Rows [begin, end) of axis 0.
template <class T>
Var<T> slice0(const Var<T>& a, std::int64_t begin, std::int64_t end) {
  const auto n0 = a.dim(0);
  if (begin < 0 || end > n0 || begin >= end)
    throw DimensionError("slice0: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(a.shape()));
  const std::int64_t inner = a.value().numel() / n0;
  Shape s = a.shape();
  s[0] = end - begin;
  Tensor<T> out(s);
  std::copy_n(a.value().ptr() + begin * inner, (end - begin) * inner, out.ptr());
  return a.tape().emit("slice0", std::move(out), {&a}, [na = a.node(), begin, inner](const Tensor<T>& g) {
    if (!na->requires_grad) return;
    T* dst = na->grad_buffer().ptr() + begin * inner;
    for (std::int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  });
}

template <class T>
Var<T> concat0(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b, "concat0");
  Shape sa = a.shape(), sb = b.shape();
  if (sa.size() != sb.size() || !std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1))
    throw DimensionError("concat0: trailing shapes differ " + shape_str(sa) + " vs " + shape_str(sb));
  Shape s = sa;
  s[0] = sa[0] + sb[0];
  Tensor<T> out(s);
  std::copy_n(a.value().ptr(), a.value().numel(), out.ptr());
  std::copy_n(b.value().ptr(), b.value().numel(), out.ptr() + a.value().numel());
  return tape.emit("concat0", std::move(out), {&a, &b}, [na = a.node(), nb = b.node()](const Tensor<T>& g) {
    const auto split = na->value.numel();
    if (na->requires_grad) {
      T* d = na->grad_buffer().ptr();
      for (std::int64_t i = 0; i < split; ++i) d[i] += g[i];
    }
    if (nb->requires_grad) {
      T* d = nb->grad_buffer().ptr();
      for (std::int64_t i = 0; i < nb->value.numel(); ++i) d[i] += g[split + i];
    }
  });
}

// Extends the last axis to `len` by repeating each slice's final element.
template <class T>
Var<T> pad_last_repeat(const Var<T>& a, std::int64_t len) {
  const auto n = a.dim(-1);
  if (len < n) throw DimensionError("pad_last_repeat: target shorter than input");
  const auto rows = a.value().numel() / n;
  Shape s = a.shape();
  s.back() = len;
  Tensor<T> out(s);
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* src = a.value().ptr() + r * n;
    T* dst = out.ptr() + r * len;
    std::copy_n(src, n, dst);
    std::fill(dst + n, dst + len, src[n - 1]);
  }
  return a.tape().emit("pad_last_repeat", std::move(out), {&a}, [na = a.node(), n, len, rows](const Tensor<T>& g) {
    if (!na->requires_grad) return;
    T* d = na->grad_buffer().ptr();
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* gr = g.ptr() + r * len;
      for (std::int64_t j = 0; j < n; ++j) d[r * n + j] += gr[j];
      for (std::int64_t j = n; j < len; ++j) d[r * n + n - 1] += gr[j];
    }
  });
}

// Keeps the first `len` entries of the last axis.
template <class T>
Var<T> crop_last(const Var<T>& a, std::int64_t len) {
  const auto n = a.dim(-1);
  if (len > n || len <= 0) throw DimensionError("crop_last: invalid length");
  const auto rows = a.value().numel() / n;
  Shape s = a.shape();
  s.back() = len;
  Tensor<T> out(s);
  for (std::int64_t r = 0; r < rows; ++r) std::copy_n(a.value().ptr() + r * n, len, out.ptr() + r * len);
  return a.tape().emit("crop_last", std::move(out), {&a}, [na = a.node(), n, len, rows](const Tensor<T>& g) {
    if (!na->requires_grad) return;
    T* d = na->grad_buffer().ptr();
    for (std::int64_t r = 0; r < rows; ++r)
      for (std::int64_t j = 0; j < len; ++j) d[r * n + j] += g[r * len + j];
  });
}

// ---- linear algebra ----------------------------------------------------------

// Batched [..., m, p] x [..., p, n] -> [..., m, n]; leading axes must match.
template <class T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b, "matmul");
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa.size() < 2 || sa.size() != sb.size() || !std::equal(sa.begin(), sa.end() - 2, sb.begin()) ||
      sa[sa.size() - 1] != sb[sb.size() - 2])
    throw DimensionError("matmul: cannot multiply " + shape_str(sa) + " by " + shape_str(sb));
  const auto m = sa[sa.size() - 2], p = sa.back(), n = sb.back();
  const auto batch = a.value().numel() / (m * p);
  Shape so = sa;
  so.back() = n;
  Tensor<T> out(so);
  for (std::int64_t bi = 0; bi < batch; ++bi)
    detail::gemm_acc(a.value().ptr() + bi * m * p, b.value().ptr() + bi * p * n, out.ptr() + bi * m * n, m, p, n,
                     false, false);
  return tape.emit("matmul", std::move(out), {&a, &b},
                   [na = a.node(), nb = b.node(), m, p, n, batch](const Tensor<T>& g) {
                     if (na->requires_grad) {
                       Tensor<T>& ga = na->grad_buffer();
                       for (std::int64_t bi = 0; bi < batch; ++bi)
                         detail::gemm_acc(g.ptr() + bi * m * n, nb->value.ptr() + bi * p * n, ga.ptr() + bi * m * p,
                                          m, n, p, false, true);
                     }
                     if (nb->requires_grad) {
                       Tensor<T>& gb = nb->grad_buffer();
                       for (std::int64_t bi = 0; bi < batch; ++bi)
                         detail::gemm_acc(na->value.ptr() + bi * m * p, g.ptr() + bi * m * n, gb.ptr() + bi * p * n,
                                          p, m, n, true, false);
                     }
                   });
}

// Max-subtracted softmax over the last axis.
template <class T>
Var<T> softmax_last(const Var<T>& a) {
  const auto n = a.dim(-1);
  const auto rows = a.value().numel() / n;
  Tensor<T> out(a.shape());
  for (std::int64_t r = 0; r < rows; ++r) {
    const T* x = a.value().ptr() + r * n;
    T* y = out.ptr() + r * n;
    T mx = -std::numeric_limits<T>::infinity();
    for (std::int64_t j = 0; j < n; ++j) {
      if (std::isnan(x[j])) throw NumericError("softmax_last: NaN input");
      mx = std::max(mx, x[j]);
    }
    T s = 0;
    for (std::int64_t j = 0; j < n; ++j) s += (y[j] = std::exp(x[j] - mx));
    const T inv = T(1) / s;
    for (std::int64_t j = 0; j < n; ++j) y[j] *= inv;
  }
  return a.tape().emit("softmax_last", std::move(out), {&a},
                       [na = a.node(), n, rows](const Tensor<T>& g, const Tensor<T>& y) {
                         if (!na->requires_grad) return;
                         Tensor<T>& gx = na->grad_buffer();
                         for (std::int64_t r = 0; r < rows; ++r) {
                           const T* yr = y.ptr() + r * n;
                           const T* gr = g.ptr() + r * n;
                           T dot = 0;
                           for (std::int64_t j = 0; j < n; ++j) dot += gr[j] * yr[j];
                           T* gxr = gx.ptr() + r * n;
                           for (std::int64_t j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dot);
                         }
                       });
}

// Per-pixel normalization across channels of a [C,H,W] tensor, then
// per-channel affine.
template <class T>
Var<T> layer_norm_channels(const Var<T>& x, const Var<T>& gain, const Var<T>& bias, T eps = T(1e-6)) {
  auto& tape = detail::tape_of(x, gain, "layer_norm_channels");
  if (x.value().rank() != 3) throw DimensionError("layer_norm_channels: expected [C,H,W], got " + shape_str(x.shape()));
  const auto c = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (gain.value().numel() != c || bias.value().numel() != c)
    throw DimensionError("layer_norm_channels: gain/bias must have " + std::to_string(c) + " entries");
  Tensor<T> xhat(x.shape());
  Tensor<T> inv_std(Shape{hw});
  const T* px = x.value().ptr();
  for (std::int64_t p = 0; p < hw; ++p) {
    T mu = 0;
    for (std::int64_t ch = 0; ch < c; ++ch) mu += px[ch * hw + p];
    mu /= static_cast<T>(c);
    T var = 0;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T d = px[ch * hw + p] - mu;
      var += d * d;
    }
    var /= static_cast<T>(c);
    const T is = T(1) / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(p)] = is;
    for (std::int64_t ch = 0; ch < c; ++ch) xhat[static_cast<std::size_t>(ch * hw + p)] = (px[ch * hw + p] - mu) * is;
  }
  Tensor<T> out(x.shape());
  for (std::int64_t ch = 0; ch < c; ++ch) {
    const T gch = gain.value()[static_cast<std::size_t>(ch)], bch = bias.value()[static_cast<std::size_t>(ch)];
    for (std::int64_t p = 0; p < hw; ++p)
      out[static_cast<std::size_t>(ch * hw + p)] = gch * xhat[static_cast<std::size_t>(ch * hw + p)] + bch;
  }
  return tape.emit("layer_norm_channels", std::move(out), {&x, &gain, &bias},
                   [nx = x.node(), ng = gain.node(), nb = bias.node(), xhat = std::move(xhat),
                    inv_std = std::move(inv_std), c, hw](const Tensor<T>& g) {
                     if (ng->requires_grad || nb->requires_grad) {
                       Tensor<T> gg(ng->value.shape()), gb(nb->value.shape());
                       for (std::int64_t ch = 0; ch < c; ++ch) {
                         T sg = 0, sb = 0;
                         for (std::int64_t p = 0; p < hw; ++p) {
                           const auto i = static_cast<std::size_t>(ch * hw + p);
                           sg += g[i] * xhat[i];
                           sb += g[i];
                         }
                         gg[static_cast<std::size_t>(ch)] = sg;
                         gb[static_cast<std::size_t>(ch)] = sb;
                       }
                       accumulate_into(ng, gg);
                       accumulate_into(nb, gb);
                     }
                     if (!nx->requires_grad) return;
                     Tensor<T>& gx = nx->grad_buffer();
                     const T inv_c = T(1) / static_cast<T>(c);
                     for (std::int64_t p = 0; p < hw; ++p) {
                       T m1 = 0, m2 = 0;
                       for (std::int64_t ch = 0; ch < c; ++ch) {
                         const auto i = static_cast<std::size_t>(ch * hw + p);
                         const T gh = g[i] * ng->value[static_cast<std::size_t>(ch)];
                         m1 += gh;
                         m2 += gh * xhat[i];
                       }
                       m1 *= inv_c;
                       m2 *= inv_c;
                       const T is = inv_std[static_cast<std::size_t>(p)];
                       for (std::int64_t ch = 0; ch < c; ++ch) {
                         const auto i = static_cast<std::size_t>(ch * hw + p);
                         const T gh = g[i] * ng->value[static_cast<std::size_t>(ch)];
                         gx[i] += is * (gh - m1 - xhat[i] * m2);
                       }
                     }
                   });
}

}  // namespace histo
