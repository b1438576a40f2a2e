#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "histo/ops.hpp"

namespace histo {

struct LossConfig {
  double alpha = 1.0;  // weight of the correlation term

  void validate() const {
    if (!(alpha >= 0.0)) throw ConfigError("loss alpha must be >= 0, got " + std::to_string(alpha));
  }
};

template <class T>
struct PearsonResult {
  Var<T> rho;
  bool degenerate = false;  // one of the inputs had zero variance; rho forced to 0
};

namespace detail {

struct PearsonStats {
  double mean_a = 0, mean_b = 0, sd_a = 0, sd_b = 0, cov = 0;
  bool degenerate = false;
};

template <class T>
PearsonStats pearson_stats(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape())
    throw DimensionError("pearson: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const auto n = a.numel();
  if (n < 2) throw DimensionError("pearson: needs at least 2 elements");
  PearsonStats s;
  for (std::int64_t i = 0; i < n; ++i) {
    s.mean_a += static_cast<double>(a[static_cast<std::size_t>(i)]);
    s.mean_b += static_cast<double>(b[static_cast<std::size_t>(i)]);
  }
  s.mean_a /= static_cast<double>(n);
  s.mean_b /= static_cast<double>(n);
  double va = 0, vb = 0, cov = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double da = static_cast<double>(a[static_cast<std::size_t>(i)]) - s.mean_a;
    const double db = static_cast<double>(b[static_cast<std::size_t>(i)]) - s.mean_b;
    va += da * da;
    vb += db * db;
    cov += da * db;
  }
  s.sd_a = std::sqrt(va / static_cast<double>(n));
  s.sd_b = std::sqrt(vb / static_cast<double>(n));
  s.cov = cov / static_cast<double>(n);
  // exact test: rounding in the mean leaves a tiny nonzero variance for
  // constant inputs
  auto constant = [n](const Tensor<T>& x) {
    for (std::int64_t i = 1; i < n; ++i)
      if (x[static_cast<std::size_t>(i)] != x[0]) return false;
    return true;
  };
  s.degenerate = va == 0.0 || vb == 0.0 || constant(a) || constant(b);
  return s;
}

constexpr double kPearsonEps = 1e-8;

}  // namespace detail

// Pearson correlation over all elements treated as one sequence:
// cov(a,b) / (sd(a) sd(b) + 1e-8), population moments.
template <class T>
double pearson_value(const Tensor<T>& a, const Tensor<T>& b, bool* degenerate = nullptr) {
  const auto s = detail::pearson_stats(a, b);
  if (degenerate) *degenerate = s.degenerate;
  if (s.degenerate) return 0.0;
  return s.cov / (s.sd_a * s.sd_b + detail::kPearsonEps);
}

template <class T>
PearsonResult<T> pearson(const Var<T>& a, const Var<T>& b) {
  auto& tape = detail::tape_of(a, b, "pearson");
  const auto s = detail::pearson_stats(a.value(), b.value());
  const double denom = s.sd_a * s.sd_b + detail::kPearsonEps;
  const double rho = s.degenerate ? 0.0 : s.cov / denom;
  auto out = tape.emit("pearson", Tensor<T>::scalar(static_cast<T>(rho)), {&a, &b},
                       [na = a.node(), nb = b.node(), s, denom, rho](const Tensor<T>& g) {
                         if (s.degenerate) return;  // zero-variance convention: constant output
                         const auto n = na->value.numel();
                         const double gn = static_cast<double>(g[0]) / static_cast<double>(n);
                         // d rho / d a_i = (b_i - mb)/(n D) - rho * sd_b * (a_i - ma) / (n sd_a D)
                         if (na->requires_grad) {
                           Tensor<T> ga(na->value.shape());
                           const double k = rho * s.sd_b / (s.sd_a * denom);
                           for (std::int64_t i = 0; i < n; ++i) {
                             const auto u = static_cast<std::size_t>(i);
                             const double da = static_cast<double>(na->value[u]) - s.mean_a;
                             const double db = static_cast<double>(nb->value[u]) - s.mean_b;
                             ga[u] = static_cast<T>(gn * (db / denom - k * da));
                           }
                           na->accumulate(ga);
                         }
                         if (nb->requires_grad) {
                           Tensor<T> gb(nb->value.shape());
                           const double k = rho * s.sd_a / (s.sd_b * denom);
                           for (std::int64_t i = 0; i < n; ++i) {
                             const auto u = static_cast<std::size_t>(i);
                             const double da = static_cast<double>(na->value[u]) - s.mean_a;
                             const double db = static_cast<double>(nb->value[u]) - s.mean_b;
                             gb[u] = static_cast<T>(gn * (da / denom - k * db));
                           }
                           nb->accumulate(gb);
                         }
                       });
  return {out, s.degenerate};
}

// Mean absolute difference.
template <class T>
Var<T> l1_loss(const Var<T>& restored, const Var<T>& target) {
  return mean(abs(sub(restored, target)));
}

// (1 - rho) / 2, in [0, 1].
template <class T>
Var<T> correlation_loss(const Var<T>& restored, const Var<T>& target) {
  auto r = pearson(restored, target).rho;
  return add_scalar(scale(r, T(-0.5)), T(0.5));
}

template <class T>
Var<T> total_loss(const Var<T>& restored, const Var<T>& target, const LossConfig& cfg) {
  cfg.validate();
  auto rec = l1_loss(restored, target);
  if (cfg.alpha == 0.0) return rec;
  return add(rec, scale(correlation_loss(restored, target), static_cast<T>(cfg.alpha)));
}

}  // namespace histo
