#pragma once

// Binary PPM (P6, maxval 255) reader/writer. Pixel values map to [0,1].

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "histo/tensor.hpp"

namespace histo {

namespace detail {

struct PpmCursor {
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;

  void skip_space_and_comments() {
    while (pos < buf.size()) {
      if (std::isspace(buf[pos])) {
        ++pos;
      } else if (buf[pos] == '#') {
        while (pos < buf.size() && buf[pos] != '\n') ++pos;
      } else {
        break;
      }
    }
  }

  std::int64_t number(const char* what) {
    skip_space_and_comments();
    if (pos >= buf.size()) throw ParseError(std::string("PPM header truncated before ") + what, pos);
    if (!std::isdigit(buf[pos])) throw ParseError(std::string("PPM header: expected ") + what, pos);
    std::int64_t v = 0;
    while (pos < buf.size() && std::isdigit(buf[pos])) {
      v = v * 10 + (buf[pos] - '0');
      if (v > 1'000'000) throw ParseError(std::string("PPM header: ") + what + " too large", pos);
      ++pos;
    }
    return v;
  }
};

}  // namespace detail

template <class T = float>
Tensor<T> decode_ppm(const std::vector<unsigned char>& bytes) {
  detail::PpmCursor cur{bytes};
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '6') throw ParseError("not a binary PPM (missing P6 magic)", 0);
  cur.pos = 2;
  const auto w = cur.number("width");
  const auto h = cur.number("height");
  const auto maxval = cur.number("maxval");
  if (w <= 0 || h <= 0) throw ParseError("PPM dimensions must be positive", cur.pos);
  if (maxval != 255) throw ParseError("only maxval 255 is supported, got " + std::to_string(maxval), cur.pos);
  if (cur.pos >= bytes.size() || !std::isspace(bytes[cur.pos]))
    throw ParseError("PPM header must end with a single whitespace byte", cur.pos);
  ++cur.pos;
  const auto need = static_cast<std::size_t>(3 * w * h);
  if (bytes.size() - cur.pos < need)
    throw ParseError("PPM pixel data truncated: need " + std::to_string(need) + " bytes, have " +
                         std::to_string(bytes.size() - cur.pos),
                     bytes.size());
  Tensor<T> img(Shape{3, h, w});
  const unsigned char* px = bytes.data() + cur.pos;
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) img.at(c, y, x) = static_cast<T>(px[(y * w + x) * 3 + c]) / T(255);
  return img;
}

template <class T>
std::vector<unsigned char> encode_ppm(const Tensor<T>& img) {
  if (img.rank() != 3 || img.dim(0) != 3) throw DimensionError("write_ppm: expected [3,H,W], got " + shape_str(img.shape()));
  const auto h = img.dim(1), w = img.dim(2);
  const std::string header = "P6\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  std::vector<unsigned char> out(header.begin(), header.end());
  out.reserve(out.size() + static_cast<std::size_t>(3 * h * w));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < w; ++x)
      for (int c = 0; c < 3; ++c) {
        const double v = std::clamp(static_cast<double>(img.at(c, y, x)), 0.0, 1.0);
        out.push_back(static_cast<unsigned char>(std::lround(v * 255.0)));
      }
  return out;
}

template <class T = float>
Tensor<T> read_ppm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image: " + path);
  std::vector<unsigned char> bytes(std::istreambuf_iterator<char>(in), {});
  return decode_ppm<T>(bytes);
}

template <class T>
void write_ppm(const Tensor<T>& img, const std::string& path) {
  const auto bytes = encode_ppm(img);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open image for writing: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing image: " + path);
}

}  // namespace histo
