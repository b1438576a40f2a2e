#pragma once

// Wall-time and memory measurements of every primitive and block over a grid
// of square feature-map sizes.

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "histo/backbone.hpp"
#include "histo/losses.hpp"
#include "histo/metrics.hpp"

namespace histo {

struct BenchGrid {
  std::vector<std::int64_t> sizes{16, 32, 64};  // square H = W
  std::int64_t channels = 16;
  std::int64_t bins = 16;
  int heads = 2;
  int repeats = 5;
};

// "16,32,64" or "16,32,64:c=16:b=16:h=2:r=5".
inline BenchGrid parse_bench_grid(const std::string& spec) {
  BenchGrid g;
  std::stringstream ss(spec);
  std::string part;
  bool first = true;
  while (std::getline(ss, part, ':')) {
    if (first) {
      first = false;
      g.sizes.clear();
      std::stringstream ls(part);
      std::string item;
      while (std::getline(ls, item, ',')) {
        try {
          std::size_t used = 0;
          const auto v = std::stoll(item, &used);
          if (used != item.size() || v <= 0) throw std::invalid_argument(item);
          g.sizes.push_back(v);
        } catch (const std::exception&) {
          throw ConfigError("bench grid: bad size '" + item + "'");
        }
      }
      continue;
    }
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ConfigError("bench grid: expected key=value, got '" + part + "'");
    const std::string key = part.substr(0, eq);
    std::int64_t v = 0;
    try {
      v = std::stoll(part.substr(eq + 1));
    } catch (const std::exception&) {
      throw ConfigError("bench grid: bad value in '" + part + "'");
    }
    if (key == "c") g.channels = v;
    else if (key == "b") g.bins = v;
    else if (key == "h") g.heads = static_cast<int>(v);
    else if (key == "r") g.repeats = static_cast<int>(v);
    else throw ConfigError("bench grid: unknown key '" + key + "'");
  }
  if (g.sizes.empty()) throw ConfigError("bench grid: no sizes");
  if (g.repeats < 5) throw ConfigError("bench grid: at least 5 repeats required");
  if (g.channels < 2 || g.channels % 2 != 0 || g.channels % g.heads != 0)
    throw ConfigError("bench grid: channels must be even and divisible by heads");
  for (auto s : g.sizes) {
    if (s % 8 != 0) throw ConfigError("bench grid: sizes must be multiples of 8");
    if (g.bins > s * s) throw ConfigError("bench grid: bins exceed H*W at size " + std::to_string(s));
  }
  return g;
}

struct BenchRow {
  std::string name;
  std::int64_t size = 0;
  double median_ms = 0;
  double peak_rss_mb = 0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
  double attention_slope = 0;  // d log(time) / d log(H*W) for histogram attention
};

inline double peak_rss_mb() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return static_cast<double>(u.ru_maxrss) / 1024.0;
}

inline double median_ms(const std::function<void()>& fn, int repeats) {
  fn();  // warm-up
  std::vector<double> t;
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    t.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

// Least-squares slope of log(y) against log(x).
inline double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double lx = std::log(x[i]), ly = std::log(std::max(y[i], 1e-9));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  const double den = n * sxx - sx * sx;
  return den == 0 ? 0 : (n * sxy - sx * sy) / den;
}

inline BenchReport run_bench(const BenchGrid& g, const std::function<void(const BenchRow&)>& on_row = {}) {
  BenchReport rep;
  std::mt19937_64 rng(42);
  std::uniform_real_distribution<float> d(-1, 1);
  auto rnd = [&](Shape s) {
    Tensor<float> t(std::move(s));
    for (auto& v : t.data()) v = d(rng);
    return t;
  };
  std::vector<double> hw, attn_ms;
  const std::int64_t c = g.channels;
  const std::int64_t e = dgff_hidden_channels(c, 2.667, 2);

  for (const auto s : g.sizes) {
    const auto x = rnd({c, s, s});
    const auto y = rnd({c, s, s});
    const auto qk1 = rnd({2 * c, s, s}), qk2 = rnd({2 * c, s, s});
    const auto w_pw = rnd({c, c}), b_c = rnd({c}), w_dw3 = rnd({c, 3, 3}), w_dw5 = rnd({c, 5, 5});
    const auto w_dense = rnd({c, c, 3, 3}), gain = rnd({c});
    const auto mm_a = rnd({4, 64, 64}), mm_b = rnd({4, 64, 64});
    const auto dh = std::vector<Tensor<float>>{rnd({5 * c, c}), rnd({5 * c}), rnd({5 * c, 3, 3}), rnd({5 * c}),
                                               rnd({c, c}), rnd({c})};
    const auto ff = std::vector<Tensor<float>>{rnd({e, c}), rnd({e}), rnd({e / 8, 5, 5}), rnd({e / 8}),
                                               rnd({e / 8, 3, 3}), rnd({e / 8}), rnd({c, e / 2}), rnd({c})};
    const AttentionConfig attn{g.heads, static_cast<int>(g.bins)};

    // op(tape, vars) -> output; timed as forward only, then forward+backward.
    auto cell = [&](const std::string& name, std::vector<const Tensor<float>*> inputs,
                    const std::function<Var<float>(Tape<float>&, std::vector<Var<float>>&)>& op, bool backward) {
      auto fwd = [&] {
        Tape<float> tape;
        tape.set_recording(false);
        std::vector<Var<float>> v;
        for (auto* t : inputs) v.push_back(tape.constant(*t));
        op(tape, v);
      };
      BenchRow r{name, s, median_ms(fwd, g.repeats), peak_rss_mb()};
      rep.rows.push_back(r);
      if (on_row) on_row(r);
      if (!backward) return r.median_ms;
      auto fb = [&] {
        Tape<float> tape;
        std::vector<Var<float>> v;
        for (auto* t : inputs) v.push_back(tape.leaf(*t, true));
        tape.backward(sum(op(tape, v)));
      };
      BenchRow rb{name + "+backward", s, median_ms(fb, g.repeats), peak_rss_mb()};
      rep.rows.push_back(rb);
      if (on_row) on_row(rb);
      return r.median_ms;
    };

    using V = std::vector<Var<float>>;
    cell("add", {&x, &y}, [](auto&, V& v) { return add(v[0], v[1]); }, true);
    cell("sub", {&x, &y}, [](auto&, V& v) { return sub(v[0], v[1]); }, true);
    cell("mul", {&x, &y}, [](auto&, V& v) { return mul(v[0], v[1]); }, true);
    cell("scale", {&x}, [](auto&, V& v) { return scale(v[0], 0.5f); }, true);
    cell("add_scalar", {&x}, [](auto&, V& v) { return add_scalar(v[0], 0.5f); }, true);
    cell("abs", {&x}, [](auto&, V& v) { return abs(v[0]); }, true);
    cell("mish", {&x}, [](auto&, V& v) { return mish(v[0]); }, true);
    cell("sum", {&x}, [](auto&, V& v) { return sum(v[0]); }, true);
    cell("mean", {&x}, [](auto&, V& v) { return mean(v[0]); }, true);
    cell("reshape", {&x}, [s, c](auto&, V& v) { return reshape(v[0], {c, s * s}); }, true);
    cell("permute", {&x}, [](auto&, V& v) { return permute(v[0], {0, 2, 1}); }, true);
    cell("slice0", {&x}, [c](auto&, V& v) { return slice0(v[0], 0, c / 2); }, true);
    cell("concat0", {&x, &y}, [](auto&, V& v) { return concat0(v[0], v[1]); }, true);
    cell("pad_last_repeat", {&x}, [s](auto&, V& v) { return pad_last_repeat(v[0], s + 3); }, true);
    cell("crop_last", {&x}, [s](auto&, V& v) { return crop_last(v[0], s - 3); }, true);
    cell("matmul", {&mm_a, &mm_b}, [](auto&, V& v) { return matmul(v[0], v[1]); }, true);
    cell("softmax_last", {&x}, [](auto&, V& v) { return softmax_last(v[0]); }, true);
    cell("layer_norm_channels", {&x, &gain, &b_c}, [](auto&, V& v) { return layer_norm_channels(v[0], v[1], v[2]); },
         true);
    cell("argsort_gather", {&x}, [](auto&, V& v) { return gather_last(v[0], argsort_last(v[0])); }, true);
    cell("scatter_last", {&x}, [](auto&, V& v) { return scatter_last(v[0], argsort_last(v[0])); }, true);
    cell("conv2d_depthwise_k3", {&x, &w_dw3, &b_c}, [](auto&, V& v) { return conv2d_depthwise(v[0], v[1], &v[2], 1); },
         true);
    cell("conv2d_depthwise_k5", {&x, &w_dw5, &b_c}, [](auto&, V& v) { return conv2d_depthwise(v[0], v[1], &v[2], 1); },
         true);
    cell("conv2d_depthwise_dilated", {&x, &w_dw3, &b_c},
         [](auto&, V& v) { return conv2d_depthwise(v[0], v[1], &v[2], 2); }, true);
    cell("conv2d_pointwise", {&x, &w_pw, &b_c}, [](auto&, V& v) { return conv2d_pointwise(v[0], v[1], &v[2]); }, true);
    cell("conv2d", {&x, &w_dense, &b_c}, [](auto&, V& v) { return conv2d(v[0], v[1], &v[2]); }, true);
    cell("pixel_shuffle", {&x}, [](auto&, V& v) { return pixel_shuffle(v[0], 2); }, true);
    cell("pixel_unshuffle", {&x}, [](auto&, V& v) { return pixel_unshuffle(v[0], 2); }, true);
    cell("avg_pool2d", {&x}, [](auto&, V& v) { return avg_pool2d(v[0], 2, 2); }, true);
    cell("sort_horizontal", {&x}, [](auto&, V& v) { return sort_horizontal(v[0]); }, true);
    cell("sort_vertical", {&x}, [](auto&, V& v) { return sort_vertical(v[0]); }, true);
    cell("l1_loss", {&x, &y}, [](auto&, V& v) { return l1_loss(v[0], v[1]); }, true);
    cell("correlation_loss", {&x, &y}, [](auto&, V& v) { return correlation_loss(v[0], v[1]); }, true);
    const double a_ms = cell("histogram_attention", {&x, &qk1, &qk2},
                             [attn](auto&, V& v) { return histogram_attention(v[0], v[1], v[2], attn); }, true);
    hw.push_back(static_cast<double>(s * s));
    attn_ms.push_back(a_ms);
    cell("dhsa_forward", {&x, &dh[0], &dh[1], &dh[2], &dh[3], &dh[4], &dh[5]}, [attn](auto&, V& v) {
      return dhsa_forward(v[0], DhsaWeights<float>{v[1], v[2], v[3], v[4], v[5], v[6]}, attn);
    }, true);
    cell("dgff_forward", {&x, &ff[0], &ff[1], &ff[2], &ff[3], &ff[4], &ff[5], &ff[6], &ff[7]}, [](auto&, V& v) {
      return dgff_forward(v[0], DgffWeights<float>{v[1], v[2], v[3], v[4], v[5], v[6], v[7], v[8]});
    }, true);
    cell("htb_forward",
         {&x, &gain, &b_c, &dh[0], &dh[1], &dh[2], &dh[3], &dh[4], &dh[5], &gain, &b_c, &ff[0], &ff[1], &ff[2], &ff[3],
          &ff[4], &ff[5], &ff[6], &ff[7]},
         [attn](auto&, V& v) {
           BlockWeights<float> w{v[1], v[2], {v[3], v[4], v[5], v[6], v[7], v[8]}, v[9], v[10],
                                 {v[11], v[12], v[13], v[14], v[15], v[16], v[17], v[18]}};
           return htb_forward(v[0], w, attn, DgffConfig{});
         },
         true);

    // metrics are not differentiable ops but are part of the toolkit
    const auto img_a = rnd({3, s, s}), img_b = rnd({3, s, s});
    auto metric_row = [&](const std::string& name, const std::function<void()>& fn) {
      BenchRow r{name, s, median_ms(fn, g.repeats), peak_rss_mb()};
      rep.rows.push_back(r);
      if (on_row) on_row(r);
    };
    metric_row("psnr", [&] { (void)psnr(img_a, img_b); });
    metric_row("ssim", [&] { (void)ssim(img_a, img_b); });
  }
  rep.attention_slope = hw.size() >= 2 ? loglog_slope(hw, attn_ms) : 0;
  return rep;
}

}  // namespace histo
