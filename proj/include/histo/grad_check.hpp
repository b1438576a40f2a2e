#pragma once

// Finite-difference verification of reverse-mode gradients.
//
// The computation is a callable usable with any scalar type:
//   f(Tape<S>& tape, const std::vector<Var<S>>& inputs) -> Var<S> (scalar)
// so the analytic pass and the numeric oracle may run in different
// precisions (e.g. float gradients checked against double differences).

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "histo/tape.hpp"

namespace histo {

struct GradCheckOptions {
  double eps = 1e-5;
  // Central differences at eps and eps/2 combined by Richardson extrapolation
  // (cancels the O(eps^2) term). Off: plain central difference at eps.
  bool richardson = true;
  // Checks at most this many coordinates per input (0 = all), chosen by `seed`.
  std::int64_t max_coords_per_input = 0;
  // Per-input override of the above where present.
  std::vector<std::int64_t> max_coords;
  std::uint64_t seed = 1234;
  // When a perturbation changes any sort permutation, eps is divided by 4 up
  // to this many times before the coordinate is reported unstable.
  int max_shrinks = 8;
};

struct GradCheckResult {
  double max_rel_error = 0;
  std::int64_t coords_checked = 0;
  std::int64_t unstable_coords = 0;  // permutation never settled
  std::size_t worst_input = 0;
  std::int64_t worst_coord = 0;
  double worst_analytic = 0;
  double worst_numeric = 0;

  bool passed(double tol) const { return unstable_coords == 0 && max_rel_error <= tol; }
};

namespace detail {

template <class S, class F>
double eval_scalar(F& f, const std::vector<Tensor<S>>& inputs, std::vector<std::uint64_t>* perm_log,
                   const std::vector<PermutationIndex>* replay = nullptr) {
  Tape<S> tape;
  tape.set_recording(false);
  tape.set_log_permutations(perm_log != nullptr);
  tape.set_permutation_replay(replay);
  std::vector<Var<S>> vars;
  vars.reserve(inputs.size());
  for (const auto& t : inputs) vars.push_back(tape.leaf(t, false));
  Var<S> out = f(tape, vars);
  if (out.value().numel() != 1) throw DimensionError("grad_check: computation must return a scalar");
  if (perm_log) *perm_log = tape.permutation_log();
  return static_cast<double>(out.value()[0]);
}

}  // namespace detail

// Max over checked coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
template <class Analytic, class Numeric = Analytic, class F>
GradCheckResult grad_check(F&& f, const std::vector<Tensor<Analytic>>& inputs, const GradCheckOptions& opt = {}) {
  // analytic gradients
  // With mixed precision, rounding can reorder near-tied values, so the
  // numeric passes replay the analytic pass's permutations (gradients treat
  // them as constants) instead of re-sorting.
  constexpr bool mixed = !std::is_same_v<Analytic, Numeric>;
  std::vector<PermutationIndex> analytic_perms;
  std::vector<Tensor<Analytic>> grads;
  {
    Tape<Analytic> tape;
    tape.set_keep_permutations(mixed);
    std::vector<Var<Analytic>> vars;
    for (const auto& t : inputs) vars.push_back(tape.leaf(t, true));
    Var<Analytic> out = f(tape, vars);
    if (out.value().numel() != 1) throw DimensionError("grad_check: computation must return a scalar");
    tape.backward(out);
    for (const auto& v : vars) grads.push_back(v.grad().empty() ? Tensor<Analytic>(v.shape()) : v.grad());
    analytic_perms = tape.kept_permutations();
  }
  const std::vector<PermutationIndex>* replay = mixed ? &analytic_perms : nullptr;

  std::vector<Tensor<Numeric>> base;
  for (const auto& t : inputs) base.push_back(t.template cast<Numeric>());
  std::vector<std::uint64_t> base_log;
  detail::eval_scalar<Numeric>(f, base, &base_log, replay);

  GradCheckResult res;
  std::mt19937_64 rng(opt.seed);
  for (std::size_t k = 0; k < base.size(); ++k) {
    std::vector<std::int64_t> coords(static_cast<std::size_t>(base[k].numel()));
    std::iota(coords.begin(), coords.end(), 0);
    const std::int64_t limit = k < opt.max_coords.size() ? opt.max_coords[k] : opt.max_coords_per_input;
    if (limit > 0 && static_cast<std::int64_t>(coords.size()) > limit) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(limit));
      std::sort(coords.begin(), coords.end());
    }
    for (auto c : coords) {
      const auto u = static_cast<std::size_t>(c);
      const Numeric x0 = base[k][u];
      auto probe = [&](double h, double& d) {
        std::vector<std::uint64_t> log;
        base[k][u] = static_cast<Numeric>(static_cast<double>(x0) + h);
        const double fp = detail::eval_scalar<Numeric>(f, base, &log, replay);
        bool same = log == base_log;
        base[k][u] = static_cast<Numeric>(static_cast<double>(x0) - h);
        const double fm = detail::eval_scalar<Numeric>(f, base, &log, replay);
        same = same && log == base_log;
        base[k][u] = x0;
        d = (fp - fm) / (2 * h);
        return same;
      };
      double h = opt.eps, numeric = 0;
      bool stable = false;
      for (int s = 0; s <= opt.max_shrinks && !stable; ++s, h /= 4) {
        double d1 = 0, d2 = 0;
        if (!probe(h, d1)) continue;
        if (opt.richardson) {
          if (!probe(h / 2, d2)) continue;
          numeric = (4 * d2 - d1) / 3;
        } else {
          numeric = d1;
        }
        stable = true;
      }
      ++res.coords_checked;
      if (!stable) {
        ++res.unstable_coords;
        continue;
      }
      const double analytic = static_cast<double>(grads[k][u]);
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_error || !std::isfinite(rel)) {
        res.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        res.worst_input = k;
        res.worst_coord = c;
        res.worst_analytic = analytic;
        res.worst_numeric = numeric;
      }
    }
  }
  return res;
}

}  // namespace histo
