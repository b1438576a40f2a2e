#pragma once

// Deterministic synthetic weather degradation and paired-patch sampling.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <numbers>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "histo/ppm.hpp"
#include "histo/tensor.hpp"

namespace histo {

enum class DegradationKind : std::int32_t { snow = 0, rain_fog = 1, raindrop = 2 };

struct DegradationSpec {
  DegradationKind kind = DegradationKind::snow;
  double density = 0.0;  // particles per 1000 pixels
  double opacity = 1.0;  // (0, 1]
  // snow
  double speck_radius_min = 0.8;
  double speck_radius_max = 2.0;
  // rain
  double streak_length = 8.0;       // pixels
  double streak_angle_deg = 75.0;   // from the horizontal axis
  // fog: I = J t + A (1 - t)
  double transmission = 1.0;  // t in (0, 1]
  double airlight = 1.0;      // A in [0, 1]
  // raindrop
  double drop_radius_min = 2.0;
  double drop_radius_max = 5.0;
  std::uint64_t seed = 0;

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("degradation spec: " + m); };
    if (!(density >= 0)) fail("density must be >= 0");
    if (!(opacity > 0 && opacity <= 1)) fail("opacity must lie in (0,1]");
    if (!(speck_radius_min > 0 && speck_radius_min <= speck_radius_max)) fail("invalid speck radius range");
    if (!(streak_length > 0)) fail("streak length must be positive");
    if (!(transmission > 0 && transmission <= 1)) fail("transmission must lie in (0,1]");
    if (!(airlight >= 0 && airlight <= 1)) fail("airlight must lie in [0,1]");
    if (!(drop_radius_min > 0 && drop_radius_min <= drop_radius_max)) fail("invalid droplet radius range");
  }
};

// Uniform doubles from a 64-bit engine, one draw each, independent of the
// standard library's distribution implementation.
class SplitRng {
 public:
  explicit SplitRng(std::uint64_t seed) : eng_(seed) {}
  double unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit(); }
  std::int64_t below(std::int64_t n) { return static_cast<std::int64_t>(unit() * static_cast<double>(n)); }
  bool coin() { return (eng_() >> 63) != 0; }
  std::mt19937_64& engine() { return eng_; }

 private:
  std::mt19937_64 eng_;
};

struct Speck {
  double cx, cy, rx, ry;
  bool covers(std::int64_t x, std::int64_t y) const {
    const double dx = (static_cast<double>(x) - cx) / rx, dy = (static_cast<double>(y) - cy) / ry;
    return dx * dx + dy * dy <= 1.0;
  }
};

inline std::int64_t particle_count(double density, std::int64_t h, std::int64_t w) {
  return static_cast<std::int64_t>(std::llround(density * static_cast<double>(h * w) / 1000.0));
}

// Snow specks generated from the spec's seed; later specks extend earlier
// ones, so higher density is a superset.
inline std::vector<Speck> snow_specks(const DegradationSpec& spec, std::int64_t h, std::int64_t w) {
  SplitRng rng(spec.seed);
  std::vector<Speck> out;
  const auto n = particle_count(spec.density, h, w);
  for (std::int64_t i = 0; i < n; ++i) {
    Speck s;
    s.cx = rng.uniform(0, static_cast<double>(w));
    s.cy = rng.uniform(0, static_cast<double>(h));
    s.rx = rng.uniform(spec.speck_radius_min, spec.speck_radius_max);
    s.ry = s.rx * rng.uniform(0.6, 1.0);
    out.push_back(s);
  }
  return out;
}

namespace detail {

template <class T>
void blend_toward(Tensor<T>& img, std::int64_t x, std::int64_t y, double target, double alpha) {
  for (std::int64_t c = 0; c < 3; ++c) {
    T& v = img.at(c, y, x);
    v = static_cast<T>(static_cast<double>(v) + alpha * (target - static_cast<double>(v)));
  }
}

template <class T>
void clip01(Tensor<T>& img) {
  for (auto& v : img.data()) v = std::clamp(v, T(0), T(1));
}

}  // namespace detail

// Applies one synthetic weather corruption. Pure function of (clean, spec).
template <class T>
Tensor<T> degrade(const Tensor<T>& clean, const DegradationSpec& spec) {
  spec.validate();
  if (clean.rank() != 3 || clean.dim(0) != 3) throw DimensionError("degrade: expected [3,H,W], got " + shape_str(clean.shape()));
  const auto h = clean.dim(1), w = clean.dim(2);
  Tensor<T> out = clean;

  switch (spec.kind) {
    case DegradationKind::snow: {
      for (const auto& s : snow_specks(spec, h, w)) {
        const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(s.cx - s.rx)));
        const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(s.cx + s.rx)));
        const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(s.cy - s.ry)));
        const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(s.cy + s.ry)));
        for (auto y = y0; y <= y1; ++y)
          for (auto x = x0; x <= x1; ++x)
            if (s.covers(x, y)) detail::blend_toward(out, x, y, 1.0, spec.opacity);
      }
      break;
    }
    case DegradationKind::rain_fog: {
      const double t = spec.transmission, a = spec.airlight;
      if (t < 1.0)
        for (auto& v : out.data()) v = static_cast<T>(static_cast<double>(v) * t + a * (1.0 - t));
      SplitRng rng(spec.seed);
      const auto n = particle_count(spec.density, h, w);
      std::vector<char> mask(static_cast<std::size_t>(h * w));
      for (std::int64_t i = 0; i < n; ++i) {
        const double x0 = rng.uniform(0, static_cast<double>(w));
        const double y0 = rng.uniform(0, static_cast<double>(h));
        const double len = spec.streak_length * rng.uniform(0.75, 1.25);
        const double ang = (spec.streak_angle_deg + rng.uniform(-5, 5)) * std::numbers::pi / 180.0;
        const double strength = spec.opacity * rng.uniform(0.5, 1.0);
        std::fill(mask.begin(), mask.end(), 0);
        const auto steps = static_cast<std::int64_t>(std::ceil(2 * len));
        for (std::int64_t k = 0; k <= steps; ++k) {
          const double f = static_cast<double>(k) / static_cast<double>(steps);
          const auto x = static_cast<std::int64_t>(std::floor(x0 + f * len * std::cos(ang)));
          const auto y = static_cast<std::int64_t>(std::floor(y0 + f * len * std::sin(ang)));
          if (x >= 0 && x < w && y >= 0 && y < h) mask[static_cast<std::size_t>(y * w + x)] = 1;
        }
        for (std::int64_t y = 0; y < h; ++y)
          for (std::int64_t x = 0; x < w; ++x)
            if (mask[static_cast<std::size_t>(y * w + x)]) detail::blend_toward(out, x, y, 1.0, strength);
      }
      break;
    }
    case DegradationKind::raindrop: {
      SplitRng rng(spec.seed);
      const auto n = particle_count(spec.density, h, w);
      for (std::int64_t i = 0; i < n; ++i) {
        const double cx = rng.uniform(0, static_cast<double>(w));
        const double cy = rng.uniform(0, static_cast<double>(h));
        const double r = rng.uniform(spec.drop_radius_min, spec.drop_radius_max);
        const double shift = 0.15 * rng.uniform(0.5, 1.0);
        const auto br = std::max<std::int64_t>(1, static_cast<std::int64_t>(std::ceil(r / 2)));
        const Tensor<T> src = out;
        const auto x0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cx - r)));
        const auto x1 = std::min<std::int64_t>(w - 1, static_cast<std::int64_t>(std::ceil(cx + r)));
        const auto y0 = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(cy - r)));
        const auto y1 = std::min<std::int64_t>(h - 1, static_cast<std::int64_t>(std::ceil(cy + r)));
        for (auto y = y0; y <= y1; ++y)
          for (auto x = x0; x <= x1; ++x) {
            const double dx = static_cast<double>(x) - cx, dy = static_cast<double>(y) - cy;
            if (dx * dx + dy * dy > r * r) continue;
            for (std::int64_t c = 0; c < 3; ++c) {
              double acc = 0;
              int cnt = 0;
              for (auto yy = std::max<std::int64_t>(0, y - br); yy <= std::min(h - 1, y + br); ++yy)
                for (auto xx = std::max<std::int64_t>(0, x - br); xx <= std::min(w - 1, x + br); ++xx) {
                  acc += static_cast<double>(src.at(c, yy, xx));
                  ++cnt;
                }
              const double blurred = acc / cnt + shift;
              T& v = out.at(c, y, x);
              v = static_cast<T>((1 - spec.opacity) * static_cast<double>(v) + spec.opacity * blurred);
            }
          }
      }
      break;
    }
  }
  detail::clip01(out);
  return out;
}

// Procedural clean image: a two-colour gradient modulated by smooth value
// noise with a few overlaid rectangles.
template <class T = float>
Tensor<T> make_clean_image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  SplitRng rng(seed ^ 0x9e3779b97f4a7c15ull);
  std::array<double, 3> c0{}, c1{};
  for (int c = 0; c < 3; ++c) {
    c0[static_cast<std::size_t>(c)] = rng.uniform(0.05, 0.75);
    c1[static_cast<std::size_t>(c)] = rng.uniform(0.05, 0.75);
  }
  const double ang = rng.uniform(0, 2 * std::numbers::pi);
  const double ux = std::cos(ang), uy = std::sin(ang);

  // two octaves of bilinear value noise on lattices of 5 and 9 cells
  auto lattice = [&](int cells) {
    std::vector<double> g(static_cast<std::size_t>((cells + 1) * (cells + 1)));
    for (auto& v : g) v = rng.uniform(-1, 1);
    return g;
  };
  const auto n1 = lattice(4), n2 = lattice(8);
  auto noise = [&](const std::vector<double>& g, int cells, double fx, double fy) {
    const double gx = fx * cells, gy = fy * cells;
    const auto ix = std::min(static_cast<int>(gx), cells - 1), iy = std::min(static_cast<int>(gy), cells - 1);
    double tx = gx - ix, ty = gy - iy;
    tx = tx * tx * (3 - 2 * tx);
    ty = ty * ty * (3 - 2 * ty);
    auto at = [&](int a, int b) { return g[static_cast<std::size_t>(b * (cells + 1) + a)]; };
    const double top = at(ix, iy) * (1 - tx) + at(ix + 1, iy) * tx;
    const double bot = at(ix, iy + 1) * (1 - tx) + at(ix + 1, iy + 1) * tx;
    return top * (1 - ty) + bot * ty;
  };

  Tensor<T> img(Shape{3, h, w});
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x) {
      const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
      const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
      const double s = std::clamp(0.5 + 0.5 * ((fx - 0.5) * ux + (fy - 0.5) * uy) * 1.4, 0.0, 1.0);
      const double nz = 0.12 * noise(n1, 4, fx, fy) + 0.06 * noise(n2, 8, fx, fy);
      for (int c = 0; c < 3; ++c)
        img.at(c, y, x) = static_cast<T>(c0[static_cast<std::size_t>(c)] * (1 - s) + c1[static_cast<std::size_t>(c)] * s + nz);
    }
  const auto rects = 3 + rng.below(5);
  for (std::int64_t r = 0; r < rects; ++r) {
    const auto x0 = rng.below(w), y0 = rng.below(h);
    const auto rw = 2 + rng.below(std::max<std::int64_t>(1, w / 3)), rh = 2 + rng.below(std::max<std::int64_t>(1, h / 3));
    const double alpha = rng.uniform(0.5, 1.0);
    std::array<double, 3> col{rng.uniform(0, 0.85), rng.uniform(0, 0.85), rng.uniform(0, 0.85)};
    for (auto y = y0; y < std::min(h, y0 + rh); ++y)
      for (auto x = x0; x < std::min(w, x0 + rw); ++x)
        for (int c = 0; c < 3; ++c) {
          T& v = img.at(c, y, x);
          v = static_cast<T>((1 - alpha) * static_cast<double>(v) + alpha * col[static_cast<std::size_t>(c)]);
        }
  }
  detail::clip01(img);
  return img;
}

// Draws a degradation from the default training mixture.
inline DegradationSpec random_degradation(std::uint64_t seed) {
  SplitRng rng(seed * 0x2545f4914f6cdd1dull + 17);
  DegradationSpec s;
  s.seed = seed;
  switch (rng.below(3)) {
    case 0:
      s.kind = DegradationKind::snow;
      s.density = rng.uniform(8, 20);
      s.opacity = rng.uniform(0.6, 0.95);
      break;
    case 1:
      s.kind = DegradationKind::rain_fog;
      s.density = rng.uniform(3, 8);
      s.opacity = rng.uniform(0.5, 0.9);
      s.streak_angle_deg = rng.uniform(65, 115);
      s.streak_length = rng.uniform(6, 12);
      s.transmission = rng.uniform(0.6, 0.85);
      s.airlight = rng.uniform(0.75, 0.95);
      break;
    default:
      s.kind = DegradationKind::raindrop;
      s.density = rng.uniform(4, 8);
      s.opacity = rng.uniform(0.7, 1.0);
      break;
  }
  return s;
}

template <class T>
struct ImagePair {
  Tensor<T> clean;
  Tensor<T> degraded;
};

template <class T>
ImagePair<T> make_pair(std::int64_t size, std::uint64_t seed) {
  ImagePair<T> p;
  p.clean = make_clean_image<T>(size, size, seed);
  p.degraded = degrade(p.clean, random_degradation(seed));
  return p;
}

template <class T>
Tensor<T> crop(const Tensor<T>& img, std::int64_t y0, std::int64_t x0, std::int64_t h, std::int64_t w) {
  Tensor<T> out(Shape{img.dim(0), h, w});
  for (std::int64_t c = 0; c < img.dim(0); ++c)
    for (std::int64_t y = 0; y < h; ++y)
      std::copy_n(&img.at(c, y0 + y, x0), w, &out.at(c, y, 0));
  return out;
}

// Mirror index without edge repetition, valid for any offset.
inline std::int64_t mirror_index(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

// Reflect-pads bottom and right edges up to the next multiple of `m`.
template <class T>
Tensor<T> reflect_pad_to_multiple(const Tensor<T>& img, std::int64_t m) {
  const auto h = img.dim(1), w = img.dim(2);
  const auto ph = (h + m - 1) / m * m, pw = (w + m - 1) / m * m;
  if (ph == h && pw == w) return img;
  Tensor<T> out(Shape{img.dim(0), ph, pw});
  for (std::int64_t c = 0; c < img.dim(0); ++c)
    for (std::int64_t y = 0; y < ph; ++y)
      for (std::int64_t x = 0; x < pw; ++x) out.at(c, y, x) = img.at(c, mirror_index(y, h), mirror_index(x, w));
  return out;
}

// Uniform random square crop of side `size` (a multiple of 8).
template <class T>
Tensor<T> sample_patch(const Tensor<T>& image, std::int64_t size, SplitRng& rng, std::int64_t* oy = nullptr,
                       std::int64_t* ox = nullptr) {
  if (size <= 0 || size % 8 != 0) throw ConfigError("sample_patch: size must be a positive multiple of 8");
  if (size > image.dim(1) || size > image.dim(2))
    throw ConfigError("sample_patch: patch " + std::to_string(size) + " larger than image " + shape_str(image.shape()));
  const auto y0 = rng.below(image.dim(1) - size + 1), x0 = rng.below(image.dim(2) - size + 1);
  if (oy) *oy = y0;
  if (ox) *ox = x0;
  return crop(image, y0, x0, size, size);
}

template <class T>
ImagePair<T> sample_pair_patch(const ImagePair<T>& pair, std::int64_t size, SplitRng& rng) {
  std::int64_t y0 = 0, x0 = 0;
  ImagePair<T> out;
  out.clean = sample_patch(pair.clean, size, rng, &y0, &x0);
  out.degraded = crop(pair.degraded, y0, x0, size, size);
  return out;
}

template <class T>
Tensor<T> flip_horizontal(const Tensor<T>& img) {
  Tensor<T> out(img.shape());
  const auto w = img.dim(2);
  for (std::int64_t c = 0; c < img.dim(0); ++c)
    for (std::int64_t y = 0; y < img.dim(1); ++y)
      for (std::int64_t x = 0; x < w; ++x) out.at(c, y, x) = img.at(c, y, w - 1 - x);
  return out;
}

template <class T>
Tensor<T> flip_vertical(const Tensor<T>& img) {
  Tensor<T> out(img.shape());
  const auto h = img.dim(1);
  for (std::int64_t c = 0; c < img.dim(0); ++c)
    for (std::int64_t y = 0; y < h; ++y) std::copy_n(&img.at(c, h - 1 - y, 0), img.dim(2), &out.at(c, y, 0));
  return out;
}

// Random horizontal and vertical flips, applied identically to both members.
template <class T>
ImagePair<T> augment_flips(ImagePair<T> pair, SplitRng& rng) {
  if (rng.coin()) {
    pair.clean = flip_horizontal(pair.clean);
    pair.degraded = flip_horizontal(pair.degraded);
  }
  if (rng.coin()) {
    pair.clean = flip_vertical(pair.clean);
    pair.degraded = flip_vertical(pair.degraded);
  }
  return pair;
}

// `<root>/{clean,degraded}/NNNN.ppm`
inline std::string pair_path(const std::string& root, const char* which, std::size_t index) {
  char name[32];
  std::snprintf(name, sizeof(name), "%04zu.ppm", index);
  return (std::filesystem::path(root) / which / name).string();
}

template <class T>
void write_pair_dir(const std::string& root, const std::vector<ImagePair<T>>& pairs) {
  std::filesystem::create_directories(std::filesystem::path(root) / "clean");
  std::filesystem::create_directories(std::filesystem::path(root) / "degraded");
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    write_ppm(pairs[i].clean, pair_path(root, "clean", i));
    write_ppm(pairs[i].degraded, pair_path(root, "degraded", i));
  }
}

// Loads consecutively numbered pairs starting at 0000 until one is missing.
template <class T>
std::vector<ImagePair<T>> read_pair_dir(const std::string& root) {
  std::vector<ImagePair<T>> pairs;
  for (std::size_t i = 0;; ++i) {
    const auto c = pair_path(root, "clean", i), d = pair_path(root, "degraded", i);
    if (!std::filesystem::exists(c) || !std::filesystem::exists(d)) break;
    ImagePair<T> p{read_ppm<T>(c), read_ppm<T>(d)};
    if (p.clean.shape() != p.degraded.shape()) throw DimensionError("pair " + std::to_string(i) + " has mismatched sizes");
    pairs.push_back(std::move(p));
  }
  if (pairs.empty()) throw IoError("no image pairs found under " + root);
  return pairs;
}

}  // namespace histo
