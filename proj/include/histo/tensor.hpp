#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "histo/error.hpp"

namespace histo {

using Shape = std::vector<std::int64_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

inline std::int64_t shape_numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::int64_t{1}, std::multiplies<>());
}

// Dense row-major array, last axis fastest. Value semantics.
template <class T>
class Tensor {
 public:
  using value_type = T;

  Tensor() = default;

  explicit Tensor(Shape shape, T fill = T(0)) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), fill);
  }

  Tensor(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape(shape_);
    if (static_cast<std::int64_t>(data_.size()) != shape_numel(shape_))
      throw DimensionError("tensor data length " + std::to_string(data_.size()) +
                           " does not match shape " + shape_str(shape_));
  }

  static Tensor scalar(T v) { return Tensor(Shape{1}, std::vector<T>{v}); }

  const Shape& shape() const noexcept { return shape_; }
  int rank() const noexcept { return static_cast<int>(shape_.size()); }
  // Negative axes count from the back.
  std::int64_t dim(int axis) const {
    const int r = rank();
    if (axis < 0) axis += r;
    if (axis < 0 || axis >= r) throw DimensionError("axis out of range for " + shape_str(shape_));
    return shape_[static_cast<std::size_t>(axis)];
  }
  std::int64_t numel() const noexcept { return static_cast<std::int64_t>(data_.size()); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<T> data() noexcept { return data_; }
  std::span<const T> data() const noexcept { return data_; }
  T* ptr() noexcept { return data_.data(); }
  const T* ptr() const noexcept { return data_.data(); }

  T& operator[](std::size_t i) noexcept { return data_[i]; }
  const T& operator[](std::size_t i) const noexcept { return data_[i]; }

  // (c, h, w) access for rank-3 tensors.
  T& at(std::int64_t c, std::int64_t h, std::int64_t w) {
    return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
  }
  const T& at(std::int64_t c, std::int64_t h, std::int64_t w) const {
    return data_[static_cast<std::size_t>((c * shape_[1] + h) * shape_[2] + w)];
  }

  // Reinterprets the shape; never moves data.
  void reshape(Shape s) {
    check_shape(s);
    if (shape_numel(s) != numel())
      throw DimensionError("cannot reshape " + shape_str(shape_) + " to " + shape_str(s));
    shape_ = std::move(s);
  }
  Tensor reshaped(Shape s) const {
    Tensor t = *this;
    t.reshape(std::move(s));
    return t;
  }

  void fill(T v) { std::fill(data_.begin(), data_.end(), v); }

  template <class U>
  Tensor<U> cast() const {
    std::vector<U> out(data_.size());
    for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  // Bitwise comparison of shape and contents.
  bool bitwise_equal(const Tensor& o) const {
    return shape_ == o.shape_ &&
           (data_.empty() || std::memcmp(data_.data(), o.data_.data(), data_.size() * sizeof(T)) == 0);
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](T v) { return std::isfinite(v); });
  }

 private:
  static void check_shape(const Shape& s) {
    for (auto e : s)
      if (e <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(s));
  }

  Shape shape_;
  std::vector<T> data_;
};

// Per-slice sort order along the last axis of a tensor with the same shape.
struct PermutationIndex {
  Shape shape;
  std::vector<std::int32_t> indices;

  std::int64_t axis_extent() const { return shape.empty() ? 0 : shape.back(); }
  std::int64_t slices() const { return axis_extent() ? shape_numel(shape) / axis_extent() : 0; }

  static PermutationIndex identity(const Shape& s) {
    PermutationIndex p{s, std::vector<std::int32_t>(static_cast<std::size_t>(shape_numel(s)))};
    const auto n = s.back();
    for (std::size_t i = 0; i < p.indices.size(); ++i)
      p.indices[i] = static_cast<std::int32_t>(static_cast<std::int64_t>(i) % n);
    return p;
  }

  // True when every slice holds each index of [0, extent) exactly once.
  bool is_permutation() const {
    const auto n = axis_extent();
    std::vector<char> seen(static_cast<std::size_t>(n));
    for (std::int64_t s = 0; s < slices(); ++s) {
      std::fill(seen.begin(), seen.end(), 0);
      for (std::int64_t j = 0; j < n; ++j) {
        const auto v = indices[static_cast<std::size_t>(s * n + j)];
        if (v < 0 || v >= n || seen[static_cast<std::size_t>(v)]) return false;
        seen[static_cast<std::size_t>(v)] = 1;
      }
    }
    return true;
  }

  std::uint64_t hash() const {
    std::uint64_t h = 1469598103934665603ull;
    for (auto v : indices) {
      h ^= static_cast<std::uint64_t>(static_cast<std::uint32_t>(v));
      h *= 1099511628211ull;
    }
    return h;
  }

  bool operator==(const PermutationIndex&) const = default;
};

}  // namespace histo
