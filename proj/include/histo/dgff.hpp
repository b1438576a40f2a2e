#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "histo/ops.hpp"
#include "histo/ops_conv.hpp"

namespace histo {

struct DgffConfig {
  int shuffle = 2;   // pixel-shuffle factor around the dual-scale convolutions
  int dilation = 2;  // dilation of the 3x3 path
};

// floor(r * C) rounded up to a multiple of 2 * shuffle^2 so the post-shuffle
// channel split is exact. C = 36, r = 2.667 gives 96.
inline std::int64_t dgff_hidden_channels(std::int64_t channels, double expansion, int shuffle = 2) {
  const std::int64_t unit = 2LL * shuffle * shuffle;
  const auto raw = static_cast<std::int64_t>(std::floor(expansion * static_cast<double>(channels)));
  return std::max<std::int64_t>(unit, (raw + unit - 1) / unit * unit);
}

template <class T>
struct DgffWeights {
  Var<T> in_pw_w;   // [E, C]
  Var<T> in_pw_b;   // [E]
  Var<T> dw5_w;     // [E / (2 s^2), 5, 5]
  Var<T> dw5_b;
  Var<T> dw3d_w;    // [E / (2 s^2), 3, 3], dilated
  Var<T> dw3d_b;
  Var<T> out_pw_w;  // [C, E / 2]
  Var<T> out_pw_b;  // [C]
};

// Expand, shuffle up, split into a 5x5 path and a dilated 3x3 path, gate the
// first with Mish of the second, shuffle down and project back to C.
template <class T>
Var<T> dgff_forward(const Var<T>& x, const DgffWeights<T>& w, const DgffConfig& cfg = {}) {
  detail::require_rank3(x.shape(), "dgff_forward");
  if (x.dim(1) % cfg.shuffle != 0 || x.dim(2) % cfg.shuffle != 0)
    throw ConfigError("dgff_forward: spatial extents " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                      " not divisible by shuffle factor " + std::to_string(cfg.shuffle));
  auto e = conv2d_pointwise(x, w.in_pw_w, &w.in_pw_b);
  if (e.dim(0) % (2 * cfg.shuffle * cfg.shuffle) != 0)
    throw ConfigError("dgff_forward: expanded channels " + std::to_string(e.dim(0)) + " not divisible by " +
                      std::to_string(2 * cfg.shuffle * cfg.shuffle));
  auto s = pixel_shuffle(e, cfg.shuffle);
  const auto half = s.dim(0) / 2;
  auto f1 = conv2d_depthwise(slice0(s, 0, half), w.dw5_w, &w.dw5_b, 1);
  auto f2 = conv2d_depthwise(slice0(s, half, 2 * half), w.dw3d_w, &w.dw3d_b, cfg.dilation);
  auto gated = mul(mish(f2), f1);
  return conv2d_pointwise(pixel_unshuffle(gated, cfg.shuffle), w.out_pw_w, &w.out_pw_b);
}

}  // namespace histo
