#pragma once

// Spatial primitives over [C,H,W] tensors. All convolutions are stride 1,
// shape preserving, with reflect padding (edge sample not repeated).

#include <cstdint>
#include <string>

#include "histo/ops.hpp"

namespace histo {

namespace detail {

inline std::int64_t reflect_index(std::int64_t i, std::int64_t n) {
  if (i < 0) return -i;
  if (i >= n) return 2 * (n - 1) - i;
  return i;
}

inline void require_rank3(const Shape& s, const char* op) {
  if (s.size() != 3) throw DimensionError(std::string(op) + ": expected [C,H,W], got " + shape_str(s));
}

inline void require_reflectable(std::int64_t pad, std::int64_t h, std::int64_t w, const char* op) {
  if (pad >= h || pad >= w)
    throw ConfigError(std::string(op) + ": reflect padding of " + std::to_string(pad) + " needs spatial extent > " +
                      std::to_string(pad) + ", got " + std::to_string(h) + "x" + std::to_string(w));
}

// Reflect-pads one plane into `dst` (Hp x Wp).
template <class T>
void pad_plane(const T* src, std::int64_t h, std::int64_t w, std::int64_t pad, T* dst) {
  const auto wp = w + 2 * pad;
  for (std::int64_t i = 0; i < h + 2 * pad; ++i) {
    const T* row = src + reflect_index(i - pad, h) * w;
    T* out = dst + i * wp;
    for (std::int64_t j = 0; j < wp; ++j) out[j] = row[reflect_index(j - pad, w)];
  }
}

// Adds a padded-plane gradient back onto the unpadded plane.
template <class T>
void fold_plane(const T* gpad, std::int64_t h, std::int64_t w, std::int64_t pad, T* dst) {
  const auto wp = w + 2 * pad;
  for (std::int64_t i = 0; i < h + 2 * pad; ++i) {
    T* row = dst + reflect_index(i - pad, h) * w;
    const T* g = gpad + i * wp;
    for (std::int64_t j = 0; j < wp; ++j) row[reflect_index(j - pad, w)] += g[j];
  }
}

// out (h x w) += wv * padded[oy + y, ox + x]
template <class T>
void axpy_window(const T* padded, std::int64_t wp, std::int64_t oy, std::int64_t ox, T wv, std::int64_t h,
                 std::int64_t w, T* out) {
  for (std::int64_t y = 0; y < h; ++y) {
    const T* src = padded + (oy + y) * wp + ox;
    T* dst = out + y * w;
    for (std::int64_t x = 0; x < w; ++x) dst[x] += wv * src[x];
  }
}

template <class T>
T dot_window(const T* padded, std::int64_t wp, std::int64_t oy, std::int64_t ox, const T* g, std::int64_t h,
             std::int64_t w) {
  T s = 0;
  for (std::int64_t y = 0; y < h; ++y) {
    const T* src = padded + (oy + y) * wp + ox;
    const T* gr = g + y * w;
    for (std::int64_t x = 0; x < w; ++x) s += gr[x] * src[x];
  }
  return s;
}

template <class T>
void scatter_window(T* gpad, std::int64_t wp, std::int64_t oy, std::int64_t ox, T wv, const T* g, std::int64_t h,
                    std::int64_t w) {
  for (std::int64_t y = 0; y < h; ++y) {
    T* dst = gpad + (oy + y) * wp + ox;
    const T* gr = g + y * w;
    for (std::int64_t x = 0; x < w; ++x) dst[x] += wv * gr[x];
  }
}

}  // namespace detail

// Per-channel correlation with a k x k kernel [C,k,k]; optional bias [C].
template <class T>
Var<T> conv2d_depthwise(const Var<T>& x, const Var<T>& w, const Var<T>* bias = nullptr, int dilation = 1) {
  detail::require_rank3(x.shape(), "conv2d_depthwise");
  const auto c = x.dim(0), h = x.dim(1), wd = x.dim(2);
  if (w.value().rank() != 3 || w.dim(0) != c || w.dim(1) != w.dim(2))
    throw DimensionError("conv2d_depthwise: kernel " + shape_str(w.shape()) + " does not fit input " +
                         shape_str(x.shape()));
  const auto k = w.dim(1);
  if (k % 2 == 0) throw ConfigError("conv2d_depthwise: kernel size must be odd, got " + std::to_string(k));
  if (dilation < 1) throw ConfigError("conv2d_depthwise: dilation must be >= 1");
  if (bias && bias->value().numel() != c) throw DimensionError("conv2d_depthwise: bias must have C entries");
  const std::int64_t pad = dilation * (k - 1) / 2;
  detail::require_reflectable(pad, h, wd, "conv2d_depthwise");
  const auto hp = h + 2 * pad, wp = wd + 2 * pad;

  Tensor<T> out(x.shape());
  std::vector<T> plane(static_cast<std::size_t>(hp * wp));
  for (std::int64_t ch = 0; ch < c; ++ch) {
    detail::pad_plane(x.value().ptr() + ch * h * wd, h, wd, pad, plane.data());
    T* o = out.ptr() + ch * h * wd;
    if (bias) std::fill(o, o + h * wd, bias->value()[static_cast<std::size_t>(ch)]);
    const T* kern = w.value().ptr() + ch * k * k;
    for (std::int64_t ky = 0; ky < k; ++ky)
      for (std::int64_t kx = 0; kx < k; ++kx)
        detail::axpy_window(plane.data(), wp, ky * dilation, kx * dilation, kern[ky * k + kx], h, wd, o);
  }

  auto vjp = [nx = x.node(), nw = w.node(), nb = bias ? bias->node() : nullptr, c, h, wd, k, pad, hp, wp,
              dilation](const Tensor<T>& g) {
    std::vector<T> plane(static_cast<std::size_t>(hp * wp));
    std::vector<T> gpad(static_cast<std::size_t>(hp * wp));
    Tensor<T>* gw = nw->requires_grad ? &nw->grad_buffer() : nullptr;
    Tensor<T>* gx = nx->requires_grad ? &nx->grad_buffer() : nullptr;
    for (std::int64_t ch = 0; ch < c; ++ch) {
      const T* gc = g.ptr() + ch * h * wd;
      const T* kern = nw->value.ptr() + ch * k * k;
      if (gw) {
        detail::pad_plane(nx->value.ptr() + ch * h * wd, h, wd, pad, plane.data());
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx)
            (*gw)[static_cast<std::size_t>(ch * k * k + ky * k + kx)] +=
                detail::dot_window(plane.data(), wp, ky * dilation, kx * dilation, gc, h, wd);
      }
      if (gx) {
        std::fill(gpad.begin(), gpad.end(), T(0));
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx)
            detail::scatter_window(gpad.data(), wp, ky * dilation, kx * dilation, kern[ky * k + kx], gc, h, wd);
        detail::fold_plane(gpad.data(), h, wd, pad, gx->ptr() + ch * h * wd);
      }
      if (nb && nb->requires_grad) {
        T s = 0;
        for (std::int64_t i = 0; i < h * wd; ++i) s += gc[i];
        nb->grad_buffer()[static_cast<std::size_t>(ch)] += s;
      }
    }
  };
  if (bias) return x.tape().emit("conv2d_depthwise", std::move(out), {&x, &w, bias}, std::move(vjp));
  return x.tape().emit("conv2d_depthwise", std::move(out), {&x, &w}, std::move(vjp));
}

// Per-pixel linear map across channels: w [Cout,Cin], optional bias [Cout].
template <class T>
Var<T> conv2d_pointwise(const Var<T>& x, const Var<T>& w, const Var<T>* bias = nullptr) {
  detail::require_rank3(x.shape(), "conv2d_pointwise");
  const auto cin = x.dim(0), hw = x.dim(1) * x.dim(2);
  if (w.value().rank() != 2 || w.dim(1) != cin)
    throw DimensionError("conv2d_pointwise: weight " + shape_str(w.shape()) + " does not fit input " +
                         shape_str(x.shape()));
  const auto cout = w.dim(0);
  if (bias && bias->value().numel() != cout) throw DimensionError("conv2d_pointwise: bias must have Cout entries");
  Tensor<T> out(Shape{cout, x.dim(1), x.dim(2)});
  if (bias)
    for (std::int64_t o = 0; o < cout; ++o)
      std::fill(out.ptr() + o * hw, out.ptr() + (o + 1) * hw, bias->value()[static_cast<std::size_t>(o)]);
  detail::gemm_acc(w.value().ptr(), x.value().ptr(), out.ptr(), cout, cin, hw, false, false);

  auto vjp = [nx = x.node(), nw = w.node(), nb = bias ? bias->node() : nullptr, cin, cout, hw](const Tensor<T>& g) {
    if (nx->requires_grad) detail::gemm_acc(nw->value.ptr(), g.ptr(), nx->grad_buffer().ptr(), cin, cout, hw, true, false);
    if (nw->requires_grad) detail::gemm_acc(g.ptr(), nx->value.ptr(), nw->grad_buffer().ptr(), cout, hw, cin, false, true);
    if (nb && nb->requires_grad) {
      Tensor<T>& gb = nb->grad_buffer();
      for (std::int64_t o = 0; o < cout; ++o) {
        T s = 0;
        for (std::int64_t i = 0; i < hw; ++i) s += g[static_cast<std::size_t>(o * hw + i)];
        gb[static_cast<std::size_t>(o)] += s;
      }
    }
  };
  if (bias) return x.tape().emit("conv2d_pointwise", std::move(out), {&x, &w, bias}, std::move(vjp));
  return x.tape().emit("conv2d_pointwise", std::move(out), {&x, &w}, std::move(vjp));
}

// Dense k x k convolution: w [Cout,Cin,k,k], optional bias [Cout].
template <class T>
Var<T> conv2d(const Var<T>& x, const Var<T>& w, const Var<T>* bias = nullptr) {
  detail::require_rank3(x.shape(), "conv2d");
  const auto cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  if (w.value().rank() != 4 || w.dim(1) != cin || w.dim(2) != w.dim(3))
    throw DimensionError("conv2d: weight " + shape_str(w.shape()) + " does not fit input " + shape_str(x.shape()));
  const auto cout = w.dim(0), k = w.dim(2);
  if (k % 2 == 0) throw ConfigError("conv2d: kernel size must be odd, got " + std::to_string(k));
  if (bias && bias->value().numel() != cout) throw DimensionError("conv2d: bias must have Cout entries");
  const std::int64_t pad = (k - 1) / 2;
  detail::require_reflectable(pad, h, wd, "conv2d");
  const auto hp = h + 2 * pad, wp = wd + 2 * pad;

  std::vector<T> padded(static_cast<std::size_t>(cin * hp * wp));
  for (std::int64_t ci = 0; ci < cin; ++ci)
    detail::pad_plane(x.value().ptr() + ci * h * wd, h, wd, pad, padded.data() + ci * hp * wp);
  Tensor<T> out(Shape{cout, h, wd});
  for (std::int64_t co = 0; co < cout; ++co) {
    T* o = out.ptr() + co * h * wd;
    if (bias) std::fill(o, o + h * wd, bias->value()[static_cast<std::size_t>(co)]);
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      const T* kern = w.value().ptr() + (co * cin + ci) * k * k;
      for (std::int64_t ky = 0; ky < k; ++ky)
        for (std::int64_t kx = 0; kx < k; ++kx)
          detail::axpy_window(padded.data() + ci * hp * wp, wp, ky, kx, kern[ky * k + kx], h, wd, o);
    }
  }

  auto vjp = [nx = x.node(), nw = w.node(), nb = bias ? bias->node() : nullptr, padded = std::move(padded), cin,
              cout, h, wd, k, pad, hp, wp](const Tensor<T>& g) {
    std::vector<T> gpad(static_cast<std::size_t>(hp * wp));
    for (std::int64_t ci = 0; ci < cin; ++ci) {
      const T* plane = padded.data() + ci * hp * wp;
      if (nx->requires_grad) std::fill(gpad.begin(), gpad.end(), T(0));
      for (std::int64_t co = 0; co < cout; ++co) {
        const T* gc = g.ptr() + co * h * wd;
        const T* kern = nw->value.ptr() + (co * cin + ci) * k * k;
        for (std::int64_t ky = 0; ky < k; ++ky)
          for (std::int64_t kx = 0; kx < k; ++kx) {
            if (nw->requires_grad)
              nw->grad_buffer()[static_cast<std::size_t>((co * cin + ci) * k * k + ky * k + kx)] +=
                  detail::dot_window(plane, wp, ky, kx, gc, h, wd);
            if (nx->requires_grad) detail::scatter_window(gpad.data(), wp, ky, kx, kern[ky * k + kx], gc, h, wd);
          }
      }
      if (nx->requires_grad) detail::fold_plane(gpad.data(), h, wd, pad, nx->grad_buffer().ptr() + ci * h * wd);
    }
    if (nb && nb->requires_grad) {
      Tensor<T>& gb = nb->grad_buffer();
      for (std::int64_t co = 0; co < cout; ++co) {
        T s = 0;
        for (std::int64_t i = 0; i < h * wd; ++i) s += g[static_cast<std::size_t>(co * h * wd + i)];
        gb[static_cast<std::size_t>(co)] += s;
      }
    }
  };
  if (bias) return x.tape().emit("conv2d", std::move(out), {&x, &w, bias}, std::move(vjp));
  return x.tape().emit("conv2d", std::move(out), {&x, &w}, std::move(vjp));
}

namespace detail {

// [C*r*r, H, W] -> [C, H*r, W*r] with out[c, h*r+i, w*r+j] = in[c*r*r + i*r + j, h, w].
// `inverse` performs the unshuffle direction with the same index map.
template <class T>
void shuffle_map(const T* src, T* dst, std::int64_t c, std::int64_t h, std::int64_t w, std::int64_t r, bool inverse,
                 bool accumulate) {
  const auto ho = h * r, wo = w * r;
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < r; ++i)
      for (std::int64_t j = 0; j < r; ++j) {
        const auto in_c = ch * r * r + i * r + j;
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = 0; x < w; ++x) {
            const auto a = (in_c * h + y) * w + x;
            const auto b = (ch * ho + y * r + i) * wo + x * r + j;
            const auto s = inverse ? b : a;
            const auto d = inverse ? a : b;
            if (accumulate)
              dst[d] += src[s];
            else
              dst[d] = src[s];
          }
      }
}

}  // namespace detail

template <class T>
Tensor<T> pixel_shuffle(const Tensor<T>& x, int r) {
  detail::require_rank3(x.shape(), "pixel_shuffle");
  if (r < 1 || x.dim(0) % (r * r) != 0)
    throw ConfigError("pixel_shuffle: channels " + std::to_string(x.dim(0)) + " not divisible by r^2=" +
                      std::to_string(r * r));
  const auto c = x.dim(0) / (r * r);
  Tensor<T> out(Shape{c, x.dim(1) * r, x.dim(2) * r});
  detail::shuffle_map(x.ptr(), out.ptr(), c, x.dim(1), x.dim(2), r, false, false);
  return out;
}

template <class T>
Tensor<T> pixel_unshuffle(const Tensor<T>& x, int r) {
  detail::require_rank3(x.shape(), "pixel_unshuffle");
  if (r < 1 || x.dim(1) % r != 0 || x.dim(2) % r != 0)
    throw ConfigError("pixel_unshuffle: spatial extents " + std::to_string(x.dim(1)) + "x" + std::to_string(x.dim(2)) +
                      " not divisible by " + std::to_string(r));
  const auto h = x.dim(1) / r, w = x.dim(2) / r, c = x.dim(0);
  Tensor<T> out(Shape{c * r * r, h, w});
  detail::shuffle_map(x.ptr(), out.ptr(), c, h, w, r, true, false);
  return out;
}

template <class T>
Var<T> pixel_shuffle(const Var<T>& x, int r) {
  Tensor<T> out = pixel_shuffle(x.value(), r);
  const auto c = out.dim(0), h = x.dim(1), w = x.dim(2);
  return x.tape().emit("pixel_shuffle", std::move(out), {&x}, [nx = x.node(), c, h, w, r](const Tensor<T>& g) {
    if (nx->requires_grad) detail::shuffle_map(g.ptr(), nx->grad_buffer().ptr(), c, h, w, r, true, true);
  });
}

template <class T>
Var<T> pixel_unshuffle(const Var<T>& x, int r) {
  Tensor<T> out = pixel_unshuffle(x.value(), r);
  const auto c = x.dim(0), h = out.dim(1), w = out.dim(2);
  return x.tape().emit("pixel_unshuffle", std::move(out), {&x}, [nx = x.node(), c, h, w, r](const Tensor<T>& g) {
    if (nx->requires_grad) detail::shuffle_map(g.ptr(), nx->grad_buffer().ptr(), c, h, w, r, false, true);
  });
}

// Window mean with a k x k window and the given stride; no padding.
template <class T>
Var<T> avg_pool2d(const Var<T>& x, int k, int stride) {
  detail::require_rank3(x.shape(), "avg_pool2d");
  const auto c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (k < 1 || stride < 1) throw ConfigError("avg_pool2d: window and stride must be positive");
  if (h < k || w < k)
    throw ConfigError("avg_pool2d: window " + std::to_string(k) + " larger than input " + std::to_string(h) + "x" +
                      std::to_string(w));
  const auto ho = (h - k) / stride + 1, wo = (w - k) / stride + 1;
  const T inv = T(1) / static_cast<T>(k * k);
  Tensor<T> out(Shape{c, ho, wo});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < ho; ++y)
      for (std::int64_t xo = 0; xo < wo; ++xo) {
        T s = 0;
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) s += x.value().at(ch, y * stride + i, xo * stride + j);
        out.at(ch, y, xo) = s * inv;
      }
  return x.tape().emit("avg_pool2d", std::move(out), {&x},
                       [nx = x.node(), c, ho, wo, k, stride, inv](const Tensor<T>& g) {
                         if (!nx->requires_grad) return;
                         Tensor<T>& gx = nx->grad_buffer();
                         for (std::int64_t ch = 0; ch < c; ++ch)
                           for (std::int64_t y = 0; y < ho; ++y)
                             for (std::int64_t xo = 0; xo < wo; ++xo) {
                               const T v = g.at(ch, y, xo) * inv;
                               for (int i = 0; i < k; ++i)
                                 for (int j = 0; j < k; ++j) gx.at(ch, y * stride + i, xo * stride + j) += v;
                             }
                       });
}

}  // namespace histo
