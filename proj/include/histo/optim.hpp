#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>

#include "histo/parameter_store.hpp"

namespace histo {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

// One AdamW update over every store entry. Weight decay is decoupled: it
// shrinks the weights directly and never enters the moment estimates.
template <class T>
void adamw_step(ParameterStore<T>& store, double lr, const AdamWConfig& cfg = {}) {
  if (!store.grads_ready) throw StateError("adamw_step: gradients not populated; run backward first");
  store.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(store.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(store.step));
  for (auto& e : store.entries()) {
    T* p = e.value.ptr();
    const T* g = e.grad.ptr();
    T* m = e.m.ptr();
    T* v = e.v.ptr();
    for (std::int64_t i = 0; i < e.value.numel(); ++i) {
      const double gi = static_cast<double>(g[i]);
      const double mi = cfg.beta1 * static_cast<double>(m[i]) + (1.0 - cfg.beta1) * gi;
      const double vi = cfg.beta2 * static_cast<double>(v[i]) + (1.0 - cfg.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      double pi = static_cast<double>(p[i]);
      pi -= lr * cfg.weight_decay * pi;
      pi -= lr * (mi / bc1) / (std::sqrt(vi / bc2) + cfg.eps);
      p[i] = static_cast<T>(pi);
    }
  }
  store.grads_ready = false;
}

// Constant lr_init for the first `warm_iters` steps, then cosine annealing to
// lr_final at the last step.
struct LrSchedule {
  std::int64_t iterations = 500;
  std::int64_t warm_iters = 0;
  double lr_init = 3e-4;
  double lr_final = 1e-6;

  void validate() const {
    if (iterations <= 0) throw ConfigError("iterations must be > 0");
    if (warm_iters < 0 || warm_iters >= iterations) throw ConfigError("warm_iters must lie in [0, iterations)");
    if (!(lr_final <= lr_init) || lr_final < 0) throw ConfigError("need 0 <= lr_final <= lr_init");
  }
};

inline double cosine_lr(std::int64_t step, const LrSchedule& s) {
  if (step < s.warm_iters) return s.lr_init;
  const std::int64_t span = s.iterations - 1 - s.warm_iters;
  if (span <= 0) return s.lr_final;
  const double progress = std::min(1.0, static_cast<double>(step - s.warm_iters) / static_cast<double>(span));
  return s.lr_final + (s.lr_init - s.lr_final) * (1.0 + std::cos(std::numbers::pi * progress)) / 2.0;
}

}  // namespace histo
