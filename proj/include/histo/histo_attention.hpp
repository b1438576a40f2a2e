#pragma once

// Dynamic-range histogram self-attention.
//
// Pixels of each Value channel are sorted by intensity and cut into
// equal-population bins. Two attention branches run over the sorted
// sequences: the bin-wise branch attends across B bins, the frequency-wise
// branch attends within each bin of B consecutive sorted elements. Their
// outputs are multiplied and scattered back to the original pixel order.

#include <cmath>
#include <cstdint>
#include <string>

#include "histo/ops.hpp"
#include "histo/ops_conv.hpp"
#include "histo/ops_sort.hpp"

namespace histo {

enum class ScoreScaling : std::int32_t {
  heads = 0,    // divide scores by sqrt(number of heads)
  key_dim = 1,  // divide by sqrt(per-token feature length)
};

struct AttentionConfig {
  int heads = 1;
  int bins = 1;
  ScoreScaling scaling = ScoreScaling::heads;
};

template <class T>
struct DhsaWeights {
  Var<T> expand_pw_w;  // [5C, C]
  Var<T> expand_pw_b;  // [5C]
  Var<T> expand_dw_w;  // [5C, 3, 3]
  Var<T> expand_dw_b;  // [5C]
  Var<T> out_pw_w;     // [C, C]
  Var<T> out_pw_b;     // [C]
};

struct SortContext {
  PermutationIndex flat_perm;  // sort order of V over the flattened H*W axis, per channel
  std::int64_t pad_count = 0;  // sentinel copies appended to reach a multiple of B
};

// Sorts every row of every channel ascending (the horizontal pass).
template <class T>
Var<T> sort_horizontal(const Var<T>& x) {
  return gather_last(x, argsort_last(x));
}

// Sorts every column of every channel ascending (the vertical pass).
template <class T>
Var<T> sort_vertical(const Var<T>& x) {
  auto xt = permute(x, {0, 2, 1});
  return permute(gather_last(xt, argsort_last(xt)), {0, 2, 1});
}

// Splits channels in half, sorts the first half horizontally then
// vertically, re-concatenates and applies pointwise C->5C then depthwise 3x3.
template <class T>
Var<T> dynamic_range_conv(const Var<T>& x, const DhsaWeights<T>& w) {
  detail::require_rank3(x.shape(), "dynamic_range_conv");
  const auto c = x.dim(0);
  if (c % 2 != 0) throw ConfigError("dynamic_range_conv: channel count must be even, got " + std::to_string(c));
  auto f1 = sort_vertical(sort_horizontal(slice0(x, 0, c / 2)));
  auto f2 = slice0(x, c / 2, c);
  auto y = conv2d_pointwise(concat0(f1, f2), w.expand_pw_w, &w.expand_pw_b);
  return conv2d_depthwise(y, w.expand_dw_w, &w.expand_dw_b, 1);
}

// [heads, C/k, L] -> [heads, B, (C/k) * L/B]: bin j holds sorted positions
// [j*L/B, (j+1)*L/B) of every channel in the head.
template <class T>
Var<T> histogram_reshape_bhr(const Var<T>& x, std::int64_t bins) {
  const auto h = x.dim(0), c = x.dim(1), l = x.dim(2);
  if (l % bins != 0)
    throw StateError("histogram_reshape_bhr: length " + std::to_string(l) + " not divisible by " + std::to_string(bins));
  auto y = permute(reshape(x, {h, c, bins, l / bins}), {0, 2, 1, 3});
  return reshape(y, {h, bins, c * (l / bins)});
}

template <class T>
Var<T> histogram_unreshape_bhr(const Var<T>& x, std::int64_t channels_per_head) {
  const auto h = x.dim(0), bins = x.dim(1), per = x.dim(2) / channels_per_head;
  auto y = permute(reshape(x, {h, bins, channels_per_head, per}), {0, 2, 1, 3});
  return reshape(y, {h * channels_per_head, bins * per});
}

// [heads, C/k, L] -> [heads * L/B, B, C/k]: sorted element i lands in bin
// floor(i/B) at slot i mod B.
template <class T>
Var<T> histogram_reshape_fhr(const Var<T>& x, std::int64_t bins) {
  const auto h = x.dim(0), c = x.dim(1), l = x.dim(2);
  if (l % bins != 0)
    throw StateError("histogram_reshape_fhr: length " + std::to_string(l) + " not divisible by " + std::to_string(bins));
  auto y = permute(reshape(x, {h, c, l / bins, bins}), {0, 2, 3, 1});
  return reshape(y, {h * (l / bins), bins, c});
}

template <class T>
Var<T> histogram_unreshape_fhr(const Var<T>& x, std::int64_t heads) {
  const auto groups = x.dim(0) / heads, bins = x.dim(1), c = x.dim(2);
  auto y = permute(reshape(x, {heads, groups, bins, c}), {0, 3, 1, 2});
  return reshape(y, {heads * c, groups * bins});
}

// softmax(q k^T * scale) v over batched [N, tokens, features] operands.
template <class T>
Var<T> scaled_dot_attention(const Var<T>& q, const Var<T>& k, const Var<T>& v, T scale_factor) {
  auto scores = scale(matmul(q, permute(k, {0, 2, 1})), scale_factor);
  return matmul(softmax_last(scores), v);
}

// Sorts V per channel, gathers both query/key pairs by V's order, runs the
// bin-wise and frequency-wise branches, fuses them elementwise and scatters
// the result back to the original pixel order.
template <class T>
Var<T> histogram_attention(const Var<T>& v, const Var<T>& qk1, const Var<T>& qk2, const AttentionConfig& cfg,
                           SortContext* ctx = nullptr) {
  detail::require_rank3(v.shape(), "histogram_attention");
  const auto c = v.dim(0), h = v.dim(1), w = v.dim(2), hw = h * w;
  const Shape qk_shape{2 * c, h, w};
  if (qk1.shape() != qk_shape || qk2.shape() != qk_shape)
    throw DimensionError("histogram_attention: query/key tensors must be " + shape_str(qk_shape));
  if (cfg.heads < 1 || c % cfg.heads != 0)
    throw ConfigError("histogram_attention: " + std::to_string(c) + " channels not divisible by " +
                      std::to_string(cfg.heads) + " heads");
  const std::int64_t bins = cfg.bins;
  if (bins < 1 || bins > hw)
    throw ConfigError("histogram_attention: bins " + std::to_string(bins) + " must lie in [1, H*W=" +
                      std::to_string(hw) + "]");
  const std::int64_t heads = cfg.heads, cph = c / heads;

  auto vf = reshape(v, {c, hw});
  PermutationIndex d = argsort_last(vf);
  auto vs = gather_last(vf, d);
  const PermutationIndex d2 = tile_slices(d, 2);
  auto qk1s = gather_last(reshape(qk1, {2 * c, hw}), d2);
  auto qk2s = gather_last(reshape(qk2, {2 * c, hw}), d2);
  auto q1 = slice0(qk1s, 0, c), k1 = slice0(qk1s, c, 2 * c);
  auto q2 = slice0(qk2s, 0, c), k2 = slice0(qk2s, c, 2 * c);

  const std::int64_t len = bins * ((hw + bins - 1) / bins);
  if (len > hw) {
    vs = pad_last_repeat(vs, len);
    q1 = pad_last_repeat(q1, len);
    k1 = pad_last_repeat(k1, len);
    q2 = pad_last_repeat(q2, len);
    k2 = pad_last_repeat(k2, len);
  }
  const Shape headed{heads, cph, len};
  auto vh = reshape(vs, headed);

  auto scale_for = [&](std::int64_t feature_len) {
    const double k = cfg.scaling == ScoreScaling::heads ? static_cast<double>(heads) : static_cast<double>(feature_len);
    return static_cast<T>(1.0 / std::sqrt(k));
  };

  // bin-wise: B tokens per head, each the flattened content of one bin
  auto a_b = scaled_dot_attention(histogram_reshape_bhr(reshape(q1, headed), bins),
                                  histogram_reshape_bhr(reshape(k1, headed), bins),
                                  histogram_reshape_bhr(vh, bins), scale_for(cph * (len / bins)));
  a_b = histogram_unreshape_bhr(a_b, cph);

  // frequency-wise: B tokens inside every bin, bins batched
  auto a_f = scaled_dot_attention(histogram_reshape_fhr(reshape(q2, headed), bins),
                                  histogram_reshape_fhr(reshape(k2, headed), bins),
                                  histogram_reshape_fhr(vh, bins), scale_for(cph));
  a_f = histogram_unreshape_fhr(a_f, heads);

  auto fused = mul(a_b, a_f);
  if (len > hw) fused = crop_last(fused, hw);
  auto out = reshape(scatter_last(fused, d), {c, h, w});
  if (ctx) {
    ctx->flat_perm = std::move(d);
    ctx->pad_count = len - hw;
  }
  return out;
}

// out_pw(histogram_attention(split(dynamic_range_conv(x)))).
template <class T>
Var<T> dhsa_forward(const Var<T>& x, const DhsaWeights<T>& w, const AttentionConfig& cfg) {
  const auto c = x.dim(0);
  auto f = dynamic_range_conv(x, w);
  auto a = histogram_attention(slice0(f, 0, c), slice0(f, c, 3 * c), slice0(f, 3 * c, 5 * c), cfg);
  return conv2d_pointwise(a, w.out_pw_w, &w.out_pw_b);
}

}  // namespace histo
