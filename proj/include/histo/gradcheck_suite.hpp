#pragma once

// Named finite-difference checks for every differentiable primitive, the
// attention and feed-forward blocks, one transformer block and the tiny model.

#include <chrono>
#include <functional>
#include <memory>
#include <random>
#include <string>
#include <type_traits>
#include <vector>

#include "histo/backbone.hpp"
#include "histo/grad_check.hpp"
#include "histo/losses.hpp"

namespace histo {

enum class GradScope { ops, dhsa, dgff, htb, model };

inline GradScope parse_grad_scope(const std::string& s) {
  if (s == "ops") return GradScope::ops;
  if (s == "dhsa") return GradScope::dhsa;
  if (s == "dgff") return GradScope::dgff;
  if (s == "htb") return GradScope::htb;
  if (s == "model") return GradScope::model;
  throw ConfigError("unknown gradcheck scope '" + s + "' (expected ops, dhsa, dgff, htb or model)");
}

struct GradCheckCase {
  std::string name;
  double tol_f64;
  std::function<GradCheckResult(bool f64)> run;
};

struct GradCheckReport {
  std::string name;
  GradCheckResult result;
  double tolerance = 0;
  double seconds = 0;
  bool passed() const { return result.passed(tolerance); }
};

// Analytic gradients in single precision are compared with double-precision
// differences at this tolerance.
inline constexpr double kGradTolF32 = 1e-3;

namespace gc {

inline Tensor<double> uniform(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

// Magnitudes in [lo, hi] with random signs; keeps kinks (|x| at 0) out of reach.
inline Tensor<double> away_from_zero(Shape s, std::uint64_t seed, double lo = 0.2, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = (rng() & 1) ? d(rng) : -d(rng);
  return t;
}

// Distinct values with pairwise gaps of at least `gap`, shuffled; sorts stay
// put under small perturbations.
inline Tensor<double> spread(Shape s, std::uint64_t seed, double gap = 0.05) {
  std::mt19937_64 rng(seed);
  Tensor<double> t(std::move(s));
  std::vector<double> vals(static_cast<std::size_t>(t.numel()));
  std::uniform_real_distribution<double> jitter(0, 0.3 * gap);
  for (std::size_t i = 0; i < vals.size(); ++i)
    vals[i] = (static_cast<double>(i) - static_cast<double>(vals.size()) / 2) * gap + jitter(rng);
  std::shuffle(vals.begin(), vals.end(), rng);
  std::copy(vals.begin(), vals.end(), t.data().begin());
  return t;
}

// sum(out * R) for a fixed pseudo-random R; avoids symmetric cancellations.
template <class S>
Var<S> weighted_sum(const Var<S>& out, std::uint64_t seed = 99) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(0.5, 1.5);
  Tensor<S> r(out.shape());
  for (auto& v : r.data()) v = static_cast<S>((rng() & 1) ? d(rng) : -d(rng));
  return sum(mul(out, out.tape().constant(std::move(r))));
}

template <class F>
GradCheckCase make_case(std::string name, double tol, std::vector<Tensor<double>> inputs, F f, GradCheckOptions opt = {}) {
  return {std::move(name), tol, [inputs = std::move(inputs), f, opt](bool f64) {
            if (f64) return grad_check<double, double>(f, inputs, opt);
            std::vector<Tensor<float>> in32;
            for (const auto& t : inputs) in32.push_back(t.template cast<float>());
            return grad_check<float, double>(f, in32, opt);
          }};
}

template <class V>
using scalar_t = typename std::decay_t<V>::value_type;

// Block weights drawn from vars[first...] in BlockWeights field order.
template <class S>
BlockWeights<S> block_from(const std::vector<Var<S>>& v, std::size_t i) {
  return {v[i], v[i + 1], {v[i + 2], v[i + 3], v[i + 4], v[i + 5], v[i + 6], v[i + 7]}, v[i + 8], v[i + 9],
          {v[i + 10], v[i + 11], v[i + 12], v[i + 13], v[i + 14], v[i + 15], v[i + 16], v[i + 17]}};
}

inline std::vector<Tensor<double>> dhsa_weight_inputs(std::int64_t c, std::uint64_t seed) {
  return {uniform({5 * c, c}, seed + 1, -0.6, 0.6), uniform({5 * c}, seed + 2, -0.2, 0.2),
          uniform({5 * c, 3, 3}, seed + 3, -0.4, 0.4), uniform({5 * c}, seed + 4, -0.2, 0.2),
          uniform({c, c}, seed + 5, -0.6, 0.6),        uniform({c}, seed + 6, -0.2, 0.2)};
}

inline std::vector<Tensor<double>> dgff_weight_inputs(std::int64_t c, double r, std::uint64_t seed) {
  const auto e = dgff_hidden_channels(c, r, 2), path = e / 8;
  return {uniform({e, c}, seed + 1, -0.6, 0.6),     uniform({e}, seed + 2, -0.2, 0.2),
          uniform({path, 5, 5}, seed + 3, -0.3, 0.3), uniform({path}, seed + 4, -0.2, 0.2),
          uniform({path, 3, 3}, seed + 5, -0.4, 0.4), uniform({path}, seed + 6, -0.2, 0.2),
          uniform({c, e / 2}, seed + 7, -0.4, 0.4),   uniform({c}, seed + 8, -0.2, 0.2)};
}

inline std::vector<Tensor<double>> block_weight_inputs(std::int64_t c, double r, std::uint64_t seed) {
  std::vector<Tensor<double>> in{uniform({c}, seed + 10, 0.7, 1.3), uniform({c}, seed + 11, -0.2, 0.2)};
  for (auto& t : dhsa_weight_inputs(c, seed + 20)) in.push_back(std::move(t));
  in.push_back(uniform({c}, seed + 12, 0.7, 1.3));
  in.push_back(uniform({c}, seed + 13, -0.2, 0.2));
  for (auto& t : dgff_weight_inputs(c, r, seed + 40)) in.push_back(std::move(t));
  return in;
}

}  // namespace gc

inline std::vector<GradCheckCase> gradcheck_cases(GradScope scope) {
  using namespace gc;
  std::vector<GradCheckCase> cases;
  constexpr double op_tol = 1e-6, block_tol = 1e-5;
  GradCheckOptions opt;
  opt.eps = 1e-3;

  switch (scope) {
    case GradScope::ops: {
      const Shape s{2, 3, 4};
      cases.push_back(make_case("add", op_tol, {uniform(s, 1), uniform(s, 2)},
                                [](auto&, const auto& v) { return weighted_sum(add(v[0], v[1])); }, opt));
      cases.push_back(make_case("sub", op_tol, {uniform(s, 3), uniform(s, 4)},
                                [](auto&, const auto& v) { return weighted_sum(sub(v[0], v[1])); }, opt));
      cases.push_back(make_case("mul", op_tol, {uniform(s, 5), uniform(s, 6)},
                                [](auto&, const auto& v) { return weighted_sum(mul(v[0], v[1])); }, opt));
      cases.push_back(make_case("scale", op_tol, {uniform(s, 7)}, [](auto&, const auto& v) {
        using S = scalar_t<decltype(v[0])>;
        return weighted_sum(scale(v[0], S(1.7)));
      }, opt));
      cases.push_back(make_case("add_scalar", op_tol, {uniform(s, 8)}, [](auto&, const auto& v) {
        using S = scalar_t<decltype(v[0])>;
        return weighted_sum(mul(add_scalar(v[0], S(0.3)), v[0]));
      }, opt));
      cases.push_back(make_case("abs", op_tol, {away_from_zero(s, 9)},
                                [](auto&, const auto& v) { return weighted_sum(abs(v[0])); }, opt));
      cases.push_back(make_case("mish", op_tol, {uniform(s, 10, -3, 3)},
                                [](auto&, const auto& v) { return weighted_sum(mish(v[0])); }, opt));
      cases.push_back(make_case("sum", op_tol, {uniform(s, 11)},
                                [](auto&, const auto& v) { return sum(mul(v[0], v[0])); }, opt));
      cases.push_back(make_case("mean", op_tol, {uniform(s, 12)},
                                [](auto&, const auto& v) { return mean(mul(v[0], v[0])); }, opt));
      cases.push_back(make_case("reshape", op_tol, {uniform(s, 13)},
                                [](auto&, const auto& v) { return weighted_sum(reshape(v[0], {4, 6})); }, opt));
      cases.push_back(make_case("permute", op_tol, {uniform(s, 14)},
                                [](auto&, const auto& v) { return weighted_sum(permute(v[0], {2, 0, 1})); }, opt));
      cases.push_back(make_case("slice0", op_tol, {uniform({4, 3, 2}, 15)},
                                [](auto&, const auto& v) { return weighted_sum(slice0(v[0], 1, 3)); }, opt));
      cases.push_back(make_case("concat0", op_tol, {uniform({2, 3}, 16), uniform({3, 3}, 17)},
                                [](auto&, const auto& v) { return weighted_sum(concat0(v[0], v[1])); }, opt));
      cases.push_back(make_case("pad_last_repeat", op_tol, {uniform({2, 3, 5}, 18)},
                                [](auto&, const auto& v) { return weighted_sum(pad_last_repeat(v[0], 8)); }, opt));
      cases.push_back(make_case("crop_last", op_tol, {uniform({2, 3, 5}, 19)},
                                [](auto&, const auto& v) { return weighted_sum(crop_last(v[0], 3)); }, opt));
      cases.push_back(make_case("matmul", op_tol, {uniform({2, 3, 4}, 20), uniform({2, 4, 5}, 21)},
                                [](auto&, const auto& v) { return weighted_sum(matmul(v[0], v[1])); }, opt));
      cases.push_back(make_case("softmax_last", op_tol, {uniform({3, 6}, 22, -2, 2)},
                                [](auto&, const auto& v) { return weighted_sum(softmax_last(v[0])); }, opt));
      cases.push_back(make_case("layer_norm_channels", op_tol,
                                {uniform({4, 3, 3}, 23), uniform({4}, 24, 0.5, 1.5), uniform({4}, 25)},
                                [](auto&, const auto& v) { return weighted_sum(layer_norm_channels(v[0], v[1], v[2])); },
                                opt));
      cases.push_back(make_case("gather_last", op_tol, {uniform({3, 5}, 26)}, [](auto&, const auto& v) {
        PermutationIndex p{{3, 5}, {4, 0, 3, 1, 2, 1, 2, 0, 4, 3, 0, 4, 1, 3, 2}};
        return weighted_sum(gather_last(v[0], p));
      }, opt));
      cases.push_back(make_case("scatter_last", op_tol, {uniform({3, 5}, 27)}, [](auto&, const auto& v) {
        PermutationIndex p{{3, 5}, {4, 0, 3, 1, 2, 1, 2, 0, 4, 3, 0, 4, 1, 3, 2}};
        return weighted_sum(scatter_last(v[0], p));
      }, opt));
      cases.push_back(make_case("argsort_gather", op_tol, {spread({3, 6}, 28)}, [](auto&, const auto& v) {
        return weighted_sum(gather_last(v[0], argsort_last(v[0])));
      }, opt));
      cases.push_back(make_case("conv2d_depthwise_k3", op_tol,
                                {uniform({3, 5, 6}, 29), uniform({3, 3, 3}, 30), uniform({3}, 31)},
                                [](auto&, const auto& v) { return weighted_sum(conv2d_depthwise(v[0], v[1], &v[2], 1)); },
                                opt));
      cases.push_back(make_case("conv2d_depthwise_k5", op_tol,
                                {uniform({2, 6, 5}, 32), uniform({2, 5, 5}, 33), uniform({2}, 34)},
                                [](auto&, const auto& v) { return weighted_sum(conv2d_depthwise(v[0], v[1], &v[2], 1)); },
                                opt));
      cases.push_back(make_case("conv2d_depthwise_dilated", op_tol,
                                {uniform({2, 6, 7}, 35), uniform({2, 3, 3}, 36), uniform({2}, 37)},
                                [](auto&, const auto& v) { return weighted_sum(conv2d_depthwise(v[0], v[1], &v[2], 2)); },
                                opt));
      cases.push_back(make_case("conv2d_pointwise", op_tol,
                                {uniform({3, 4, 4}, 38), uniform({5, 3}, 39), uniform({5}, 40)},
                                [](auto&, const auto& v) { return weighted_sum(conv2d_pointwise(v[0], v[1], &v[2])); },
                                opt));
      cases.push_back(make_case("conv2d", op_tol,
                                {uniform({3, 4, 5}, 41), uniform({2, 3, 3, 3}, 42), uniform({2}, 43)},
                                [](auto&, const auto& v) { return weighted_sum(conv2d(v[0], v[1], &v[2])); }, opt));
      cases.push_back(make_case("pixel_shuffle", op_tol, {uniform({8, 2, 3}, 44)},
                                [](auto&, const auto& v) { return weighted_sum(pixel_shuffle(v[0], 2)); }, opt));
      cases.push_back(make_case("pixel_unshuffle", op_tol, {uniform({2, 4, 6}, 45)},
                                [](auto&, const auto& v) { return weighted_sum(pixel_unshuffle(v[0], 2)); }, opt));
      cases.push_back(make_case("avg_pool2d", op_tol, {uniform({2, 4, 6}, 46)},
                                [](auto&, const auto& v) { return weighted_sum(avg_pool2d(v[0], 2, 2)); }, opt));
      cases.push_back(make_case("sort_horizontal", op_tol, {spread({2, 3, 4}, 47)},
                                [](auto&, const auto& v) { return weighted_sum(sort_horizontal(v[0])); }, opt));
      cases.push_back(make_case("sort_vertical", op_tol, {spread({2, 3, 4}, 48)},
                                [](auto&, const auto& v) { return weighted_sum(sort_vertical(v[0])); }, opt));
      cases.push_back(make_case("histogram_reshape_bhr", op_tol, {uniform({2, 3, 8}, 49)}, [](auto&, const auto& v) {
        return weighted_sum(mul(histogram_reshape_bhr(v[0], 4), histogram_reshape_bhr(v[0], 4)));
      }, opt));
      cases.push_back(make_case("histogram_reshape_fhr", op_tol, {uniform({2, 3, 8}, 50)}, [](auto&, const auto& v) {
        return weighted_sum(mul(histogram_reshape_fhr(v[0], 4), histogram_reshape_fhr(v[0], 4)));
      }, opt));
      cases.push_back(make_case("scaled_dot_attention", op_tol,
                                {uniform({2, 3, 4}, 51), uniform({2, 3, 4}, 52), uniform({2, 3, 5}, 53)},
                                [](auto&, const auto& v) {
                                  using S = scalar_t<decltype(v[0])>;
                                  return weighted_sum(scaled_dot_attention(v[0], v[1], v[2], S(0.5)));
                                },
                                opt));
      cases.push_back(make_case("histogram_attention", op_tol,
                                {spread({4, 3, 3}, 54), uniform({8, 3, 3}, 55), uniform({8, 3, 3}, 56)},
                                [](auto&, const auto& v) {
                                  return weighted_sum(histogram_attention(v[0], v[1], v[2], AttentionConfig{2, 4}));
                                },
                                opt));
      cases.push_back(make_case("pearson", op_tol, {uniform({3, 4, 4}, 57), uniform({3, 4, 4}, 58)},
                                [](auto&, const auto& v) { return pearson(v[0], v[1]).rho; }, opt));
      cases.push_back(make_case("l1_loss", op_tol, {uniform({3, 4, 4}, 59), away_from_zero({3, 4, 4}, 60, 0.1, 0.5)},
                                [](auto&, const auto& v) { return l1_loss(add(v[0], v[1]), v[0]); }, opt));
      cases.push_back(make_case("correlation_loss", op_tol, {uniform({3, 4, 4}, 61), uniform({3, 4, 4}, 62)},
                                [](auto&, const auto& v) { return correlation_loss(v[0], v[1]); }, opt));
      cases.push_back(make_case("total_loss", op_tol, {uniform({3, 4, 4}, 63), away_from_zero({3, 4, 4}, 64, 0.1, 0.5)},
                                [](auto&, const auto& v) { return total_loss(add(v[0], v[1]), v[0], LossConfig{1.0}); },
                                opt));
      break;
    }
    case GradScope::dhsa: {
      const std::int64_t c = 4;
      auto w = dhsa_weight_inputs(c, 71);
      std::vector<Tensor<double>> in{spread({c, 6, 6}, 70, 0.02), w[0], w[2], w[4], w[5]};
      Tensor<double> pw_b = w[1], dw_b = w[3];
      cases.push_back(make_case("dhsa_forward", block_tol, std::move(in), [pw_b, dw_b](auto& tape, const auto& v) {
        using S = scalar_t<decltype(v[0])>;
        DhsaWeights<S> dw{v[1], tape.constant(pw_b.template cast<S>()), v[2], tape.constant(dw_b.template cast<S>()),
                          v[3], v[4]};
        return weighted_sum(dhsa_forward(v[0], dw, AttentionConfig{2, 6}));
      }, opt));
      break;
    }
    case GradScope::dgff: {
      const std::int64_t c = 4;
      std::vector<Tensor<double>> in{uniform({c, 8, 8}, 80)};
      for (auto& t : dgff_weight_inputs(c, 2.667, 81)) in.push_back(std::move(t));
      cases.push_back(make_case("dgff_forward", block_tol, std::move(in), [](auto&, const auto& v) {
        using S = scalar_t<decltype(v[0])>;
        DgffWeights<S> w{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]};
        return weighted_sum(dgff_forward(v[0], w, DgffConfig{}));
      }, opt));
      break;
    }
    case GradScope::htb: {
      const std::int64_t c = 4;
      auto w = block_weight_inputs(c, 2.667, 91);
      // expand biases (indices 3 and 5) enter as constants
      std::vector<Tensor<double>> in{spread({c, 8, 8}, 90, 0.02)};
      for (std::size_t i = 0; i < w.size(); ++i)
        if (i != 3 && i != 5) in.push_back(w[i]);
      Tensor<double> pw_b = w[3], dw_b = w[5];
      cases.push_back(make_case("htb_forward", block_tol, std::move(in), [pw_b, dw_b](auto& tape, const auto& v) {
        using S = scalar_t<decltype(v[0])>;
        std::vector<Var<S>> all(v.begin(), v.begin() + 4);
        all.push_back(tape.constant(pw_b.template cast<S>()));
        all.push_back(v[4]);
        all.push_back(tape.constant(dw_b.template cast<S>()));
        all.insert(all.end(), v.begin() + 5, v.end());
        return weighted_sum(htb_forward(v[0], block_from(all, 1), AttentionConfig{2, 8}, DgffConfig{}));
      }, opt));
      break;
    }
    case GradScope::model: {
      // Tiny configuration on a distinct-valued 16x16 input with every
      // parameter moved away from its initialization (the zero head would
      // otherwise make most gradients vanish identically). Attention expand
      // biases stay fixed. Coordinates are sampled: 48 of the input, one per
      // parameter tensor.
      const ModelConfig cfg = ModelConfig::tiny();
      auto m64 = std::make_shared<Histoformer<double>>(cfg, 7);
      std::uint64_t seed = 101;
      for (auto& e : m64->store().entries()) {
        const auto noise = uniform(e.value.shape(), seed++, -0.1, 0.1);
        for (std::int64_t i = 0; i < e.value.numel(); ++i)
          e.value.data()[static_cast<std::size_t>(i)] += noise[static_cast<std::size_t>(i)];
      }
      ParameterStore<float> s32;
      for (const auto& e : m64->store().entries()) s32.add(e.name, e.value.cast<float>());
      auto m32 = std::make_shared<const Histoformer<float>>(cfg, std::move(s32));

      Tensor<double> image = spread({3, 16, 16}, 100, 1.0 / 768);
      for (auto& x : image.data()) x += 0.5;
      std::vector<std::string> names;
      std::vector<Tensor<double>> in{image};
      GradCheckOptions mopt = opt;
      mopt.max_coords = {48};
      for (const auto& e : m64->store().entries()) {
        const bool expand_bias = e.name.ends_with("attn.expand_pw.b") || e.name.ends_with("attn.expand_dw.b");
        if (expand_bias) continue;
        names.push_back(e.name);
        in.push_back(e.value);
        mopt.max_coords.push_back(1);
      }
      std::shared_ptr<const Histoformer<double>> c64 = m64;
      auto f = [m32, c64, names](auto& tape, const auto& v) {
        using S = scalar_t<decltype(v[0])>;
        const Histoformer<S>* model = nullptr;
        if constexpr (std::is_same_v<S, double>)
          model = c64.get();
        else
          model = m32.get();
        ParamBinder<S> binder(tape, model->store());
        for (std::size_t i = 0; i < names.size(); ++i) binder.bind(names[i], v[i + 1]);
        return weighted_sum(model->forward(binder, v[0]));
      };
      cases.push_back(make_case("model_forward", block_tol, std::move(in), f, mopt));
      break;
    }
  }
  return cases;
}

inline std::vector<GradCheckReport> run_gradcheck(GradScope scope, bool f64) {
  std::vector<GradCheckReport> out;
  for (auto& c : gradcheck_cases(scope)) {
    const auto t0 = std::chrono::steady_clock::now();
    GradCheckReport r;
    r.name = c.name;
    r.tolerance = f64 ? c.tol_f64 : kGradTolF32;
    r.result = c.run(f64);
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace histo
