#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "histo/tensor.hpp"

namespace histo {

// Returned by psnr() for identical inputs.
inline constexpr double kPsnrIdentical = 100.0;

template <class T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  if (a.shape() != b.shape())
    throw DimensionError("psnr: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  double se = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = static_cast<double>(a[static_cast<std::size_t>(i)]) - static_cast<double>(b[static_cast<std::size_t>(i)]);
    se += d * d;
  }
  const double mse = se / static_cast<double>(a.numel());
  if (mse == 0.0) return kPsnrIdentical;
  return 10.0 * std::log10(peak * peak / mse);
}

namespace detail {

// BT.601 luma of a [3,H,W] image; [1,H,W] and [H,W] pass through.
template <class T>
std::vector<double> luma_plane(const Tensor<T>& x, std::int64_t& h, std::int64_t& w) {
  if (x.rank() == 2) {
    h = x.dim(0);
    w = x.dim(1);
  } else if (x.rank() == 3 && (x.dim(0) == 1 || x.dim(0) == 3)) {
    h = x.dim(1);
    w = x.dim(2);
  } else {
    throw DimensionError("ssim: expected [3,H,W], [1,H,W] or [H,W], got " + shape_str(x.shape()));
  }
  std::vector<double> y(static_cast<std::size_t>(h * w));
  const auto hw = h * w;
  if (x.rank() == 3 && x.dim(0) == 3) {
    for (std::int64_t i = 0; i < hw; ++i)
      y[static_cast<std::size_t>(i)] = 0.299 * static_cast<double>(x[static_cast<std::size_t>(i)]) +
                                       0.587 * static_cast<double>(x[static_cast<std::size_t>(hw + i)]) +
                                       0.114 * static_cast<double>(x[static_cast<std::size_t>(2 * hw + i)]);
  } else {
    for (std::int64_t i = 0; i < hw; ++i) y[static_cast<std::size_t>(i)] = static_cast<double>(x[static_cast<std::size_t>(i)]);
  }
  return y;
}

// Separable "valid" Gaussian filter of a plane.
inline std::vector<double> gaussian_valid(const std::vector<double>& p, std::int64_t h, std::int64_t w,
                                          const std::vector<double>& k) {
  const auto n = static_cast<std::int64_t>(k.size());
  const auto wo = w - n + 1, ho = h - n + 1;
  std::vector<double> tmp(static_cast<std::size_t>(h * wo));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < wo; ++x) {
      double s = 0;
      for (std::int64_t i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * p[static_cast<std::size_t>(y * w + x + i)];
      tmp[static_cast<std::size_t>(y * wo + x)] = s;
    }
  std::vector<double> out(static_cast<std::size_t>(ho * wo));
  for (std::int64_t y = 0; y < ho; ++y)
    for (std::int64_t x = 0; x < wo; ++x) {
      double s = 0;
      for (std::int64_t i = 0; i < n; ++i) s += k[static_cast<std::size_t>(i)] * tmp[static_cast<std::size_t>((y + i) * wo + x)];
      out[static_cast<std::size_t>(y * wo + x)] = s;
    }
  return out;
}

}  // namespace detail

// Mean SSIM on the luma channel: 11x11 Gaussian window (sigma 1.5),
// K1 = 0.01, K2 = 0.03, valid-region averaging. Images smaller than the
// window use the largest odd window that fits.
template <class T>
double ssim(const Tensor<T>& a, const Tensor<T>& b, double peak = 1.0) {
  if (a.shape() != b.shape())
    throw DimensionError("ssim: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::int64_t h = 0, w = 0;
  const auto ya = detail::luma_plane(a, h, w);
  const auto yb = detail::luma_plane(b, h, w);

  std::int64_t win = std::min<std::int64_t>({11, h, w});
  if (win % 2 == 0) --win;
  std::vector<double> k(static_cast<std::size_t>(win));
  const double sigma = 1.5;
  double ks = 0;
  for (std::int64_t i = 0; i < win; ++i) {
    const double d = static_cast<double>(i - win / 2);
    ks += (k[static_cast<std::size_t>(i)] = std::exp(-d * d / (2 * sigma * sigma)));
  }
  for (auto& v : k) v /= ks;

  const auto n = ya.size();
  std::vector<double> aa(n), bb(n), ab(n);
  for (std::size_t i = 0; i < n; ++i) {
    aa[i] = ya[i] * ya[i];
    bb[i] = yb[i] * yb[i];
    ab[i] = ya[i] * yb[i];
  }
  const auto mu_a = detail::gaussian_valid(ya, h, w, k);
  const auto mu_b = detail::gaussian_valid(yb, h, w, k);
  const auto s_aa = detail::gaussian_valid(aa, h, w, k);
  const auto s_bb = detail::gaussian_valid(bb, h, w, k);
  const auto s_ab = detail::gaussian_valid(ab, h, w, k);

  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double total = 0;
  for (std::size_t i = 0; i < mu_a.size(); ++i) {
    const double ma = mu_a[i], mb = mu_b[i];
    const double va = s_aa[i] - ma * ma, vb = s_bb[i] - mb * mb, cov = s_ab[i] - ma * mb;
    total += ((2 * ma * mb + c1) * (2 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
  }
  return total / static_cast<double>(mu_a.size());
}

}  // namespace histo
