#pragma once

// Binary checkpoint, all fields little-endian:
//
//   "HISTO1"                         6-byte magic
//   u32 version (1)
//   config: i32 depths[4], i32 base_channels, i32 heads[4], f64 expansion,
//           i32 bins[4], i32 decoder_depths[3], i32 refinement_depth,
//           i32 shuffle, i32 dilation, i32 skip_fusion, i32 score_scaling
//   u32 tensor count, then per tensor in store order:
//     u32 name length, name bytes, u32 rank, u32 dims[rank],
//     u64 byte length, f32 data[byte length / 4]
//   optional optimizer section:
//     "OPTST1", i64 step, then per tensor f32 first moment, f32 second moment

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <vector>

#include "histo/backbone.hpp"

namespace histo {

namespace detail {

class ByteWriter {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), c, c + n);
  }
  template <class U>
  void le(U v) {
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    static_assert(sizeof(U) == 4 || sizeof(U) == 8);
    Raw r = std::bit_cast<Raw>(v);
    for (std::size_t i = 0; i < sizeof(U); ++i) buf_.push_back(static_cast<unsigned char>(r >> (8 * i)));
  }
  const std::vector<unsigned char>& data() const { return buf_; }

 private:
  std::vector<unsigned char> buf_;
};

class ByteReader {
 public:
  explicit ByteReader(std::vector<unsigned char> buf) : buf_(std::move(buf)) {}
  void need(std::size_t n, const char* what) const {
    if (pos_ + n > buf_.size()) throw ParseError(std::string("checkpoint truncated while reading ") + what, pos_);
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(buf_.begin() + static_cast<std::ptrdiff_t>(pos_), buf_.begin() + static_cast<std::ptrdiff_t>(pos_ + n));
    pos_ += n;
    return s;
  }
  template <class U>
  U le(const char* what) {
    using Raw = std::conditional_t<sizeof(U) == 8, std::uint64_t, std::uint32_t>;
    need(sizeof(U), what);
    Raw r = 0;
    for (std::size_t i = 0; i < sizeof(U); ++i) r |= static_cast<Raw>(buf_[pos_ + i]) << (8 * i);
    pos_ += sizeof(U);
    return std::bit_cast<U>(r);
  }
  std::size_t pos() const { return pos_; }
  bool at_end() const { return pos_ == buf_.size(); }

 private:
  std::vector<unsigned char> buf_;
  std::size_t pos_ = 0;
};

inline constexpr char kCheckpointMagic[] = "HISTO1";
inline constexpr char kOptimizerMagic[] = "OPTST1";

}  // namespace detail

template <class T>
void save_checkpoint(const std::string& path, const Histoformer<T>& model, bool with_optimizer = true) {
  detail::ByteWriter w;
  const auto& c = model.config();
  w.bytes(detail::kCheckpointMagic, 6);
  w.le<std::uint32_t>(1);
  for (int d : c.depths) w.le<std::int32_t>(d);
  w.le<std::int32_t>(c.base_channels);
  for (int h : c.heads) w.le<std::int32_t>(h);
  w.le<double>(c.expansion);
  for (int b : c.bins) w.le<std::int32_t>(b);
  for (int d : c.decoder_depths) w.le<std::int32_t>(d);
  w.le<std::int32_t>(c.refinement_depth);
  w.le<std::int32_t>(c.shuffle);
  w.le<std::int32_t>(c.dilation);
  w.le<std::int32_t>(static_cast<std::int32_t>(c.skip_fusion));
  w.le<std::int32_t>(static_cast<std::int32_t>(c.scaling));

  const auto& entries = model.store().entries();
  w.le<std::uint32_t>(static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e.name.size()));
    w.bytes(e.name.data(), e.name.size());
    w.le<std::uint32_t>(static_cast<std::uint32_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.le<std::uint32_t>(static_cast<std::uint32_t>(d));
    w.le<std::uint64_t>(static_cast<std::uint64_t>(e.value.numel()) * 4);
    for (T v : e.value.data()) w.le<float>(static_cast<float>(v));
  }
  if (with_optimizer) {
    w.bytes(detail::kOptimizerMagic, 6);
    w.le<std::int64_t>(model.store().step);
    for (const auto& e : entries) {
      for (T v : e.m.data()) w.le<float>(static_cast<float>(v));
      for (T v : e.v.data()) w.le<float>(static_cast<float>(v));
    }
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(w.data().data()), static_cast<std::streamsize>(w.data().size()));
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

template <class T>
Histoformer<T> load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + path);
  detail::ByteReader r(std::vector<unsigned char>(std::istreambuf_iterator<char>(in), {}));

  if (r.str(6, "magic") != std::string(detail::kCheckpointMagic, 6)) throw ParseError("not a checkpoint (bad magic)", 0);
  const auto version = r.le<std::uint32_t>("version");
  if (version != 1) throw ParseError("unsupported checkpoint version " + std::to_string(version), 6);
  ModelConfig c;
  for (int& d : c.depths) d = r.le<std::int32_t>("depths");
  c.base_channels = r.le<std::int32_t>("base_channels");
  for (int& h : c.heads) h = r.le<std::int32_t>("heads");
  c.expansion = r.le<double>("expansion");
  for (int& b : c.bins) b = r.le<std::int32_t>("bins");
  for (int& d : c.decoder_depths) d = r.le<std::int32_t>("decoder_depths");
  c.refinement_depth = r.le<std::int32_t>("refinement_depth");
  c.shuffle = r.le<std::int32_t>("shuffle");
  c.dilation = r.le<std::int32_t>("dilation");
  c.skip_fusion = static_cast<SkipFusion>(r.le<std::int32_t>("skip_fusion"));
  c.scaling = static_cast<ScoreScaling>(r.le<std::int32_t>("score_scaling"));

  ParameterStore<T> store;
  const auto count = r.le<std::uint32_t>("tensor count");
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.le<std::uint32_t>("name length");
    std::string name = r.str(name_len, "name");
    const auto rank = r.le<std::uint32_t>("rank");
    if (rank == 0 || rank > 8) throw ParseError("bad rank for tensor '" + name + "'", r.pos());
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.le<std::uint32_t>("dims"));
    const auto bytes = r.le<std::uint64_t>("byte length");
    if (shape_numel(shape) <= 0 || bytes != static_cast<std::uint64_t>(shape_numel(shape)) * 4)
      throw ParseError("byte length of '" + name + "' does not match its shape", r.pos());
    Tensor<T> t(shape);
    for (auto& v : t.data()) v = static_cast<T>(r.le<float>("tensor data"));
    store.add(std::move(name), std::move(t));
  }
  if (!r.at_end()) {
    if (r.str(6, "optimizer magic") != std::string(detail::kOptimizerMagic, 6))
      throw ParseError("unexpected trailing data", r.pos() - 6);
    store.step = r.le<std::int64_t>("optimizer step");
    for (auto& e : store.entries()) {
      for (auto& v : e.m.data()) v = static_cast<T>(r.le<float>("first moment"));
      for (auto& v : e.v.data()) v = static_cast<T>(r.le<float>("second moment"));
    }
    if (!r.at_end()) throw ParseError("unexpected trailing data", r.pos());
  }
  return Histoformer<T>(c, std::move(store));
}

}  // namespace histo
