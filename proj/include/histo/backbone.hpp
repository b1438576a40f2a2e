#pragma once

// Histogram transformer blocks and the 4-stage encoder-decoder.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>

#include "histo/dgff.hpp"
#include "histo/histo_attention.hpp"
#include "histo/parameter_store.hpp"

namespace histo {

enum class SkipFusion : std::int32_t {
  concat = 0,  // concatenate decoder and encoder features, then pointwise reduce
  add = 1,
};

struct ModelConfig {
  std::array<int, 4> depths{4, 4, 6, 8};  // encoder stages 1-3 and the latent stage
  int base_channels = 36;
  std::array<int, 4> heads{1, 2, 4, 8};
  double expansion = 2.667;
  std::array<int, 4> bins{0, 0, 0, 0};  // 0: equal to the stage channel count
  std::array<int, 3> decoder_depths{4, 4, 6};  // decoder stages 1-3
  int refinement_depth = 4;
  int shuffle = 2;
  int dilation = 2;
  SkipFusion skip_fusion = SkipFusion::concat;
  ScoreScaling scaling = ScoreScaling::heads;

  static ModelConfig full() { return {}; }

  static ModelConfig tiny() {
    ModelConfig c;
    c.depths = {1, 1, 1, 1};
    c.base_channels = 16;
    c.heads = {1, 1, 2, 2};
    c.decoder_depths = {1, 1, 1};
    c.refinement_depth = 1;
    c.bins = {16, 16, 16, 16};
    return c;
  }

  // Stage index 0..3; channels double per stage.
  std::int64_t stage_channels(int stage) const { return static_cast<std::int64_t>(base_channels) << stage; }
  std::int64_t stage_bins(int stage) const { return bins[stage] > 0 ? bins[stage] : stage_channels(stage); }

  void validate() const {
    auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
    if (base_channels < 2 || base_channels % 2 != 0) fail("base_channels must be a positive even number");
    for (int s = 0; s < 4; ++s) {
      if (depths[s] < 1) fail("stage depths must be positive");
      if (heads[s] < 1) fail("heads must be positive");
      if (bins[s] < 0) fail("bins must be >= 0");
      if (stage_channels(s) % heads[s] != 0)
        fail("stage " + std::to_string(s + 1) + " channels " + std::to_string(stage_channels(s)) +
             " not divisible by " + std::to_string(heads[s]) + " heads");
    }
    for (int d : decoder_depths)
      if (d < 0) fail("decoder depths must be >= 0");
    if (refinement_depth < 0) fail("refinement depth must be >= 0");
    if (!(expansion > 0)) fail("expansion must be positive");
    if (shuffle < 1 || dilation < 1) fail("shuffle and dilation must be positive");
  }

  bool operator==(const ModelConfig&) const = default;
};

// Feed-forward on any spatial size: extents not divisible by the shuffle
// factor are padded by repeating the last row/column and cropped afterwards.
template <class T>
Var<T> dgff_any_extent(const Var<T>& x, const DgffWeights<T>& w, const DgffConfig& cfg) {
  const std::int64_t s = cfg.shuffle, h = x.dim(1), wd = x.dim(2);
  const std::int64_t ph = (h + s - 1) / s * s, pw = (wd + s - 1) / s * s;
  if (ph == h && pw == wd) return dgff_forward(x, w, cfg);
  Var<T> y = x;
  if (pw != wd) y = pad_last_repeat(y, pw);
  if (ph != h) y = permute(pad_last_repeat(permute(y, {0, 2, 1}), ph), {0, 2, 1});
  y = dgff_forward(y, w, cfg);
  if (ph != h) y = permute(crop_last(permute(y, {0, 2, 1}), h), {0, 2, 1});
  if (pw != wd) y = crop_last(y, wd);
  return y;
}

template <class T>
struct BlockWeights {
  Var<T> ln1_gain, ln1_bias;
  DhsaWeights<T> attn;
  Var<T> ln2_gain, ln2_bias;
  DgffWeights<T> ffn;
};

// F <- F + DHSA(LN(F)); F <- F + DGFF(LN(F)).
template <class T>
Var<T> htb_forward(const Var<T>& x, const BlockWeights<T>& w, const AttentionConfig& attn, const DgffConfig& ffn) {
  auto y = add(x, dhsa_forward(layer_norm_channels(x, w.ln1_gain, w.ln1_bias), w.attn, attn));
  return add(y, dgff_any_extent(layer_norm_channels(y, w.ln2_gain, w.ln2_bias), w.ffn, ffn));
}

// [C,H,W] -> [2C,H/2,W/2]: pixel-unshuffle to 4C, then pointwise 4C -> 2C.
template <class T>
Var<T> downsample(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  if (x.dim(1) % 2 != 0 || x.dim(2) % 2 != 0)
    throw ConfigError("downsample: spatial extents must be even, got " + shape_str(x.shape()));
  return conv2d_pointwise(pixel_unshuffle(x, 2), w, &b);
}

// [2C,H,W] -> [C,2H,2W]: pointwise 2C -> 4C, then pixel-shuffle.
template <class T>
Var<T> upsample(const Var<T>& x, const Var<T>& w, const Var<T>& b) {
  return pixel_shuffle(conv2d_pointwise(x, w, &b), 2);
}

// Pools the embedded input down to stage `stage` (1-based, 2..4) resolution,
// projects it to the stage width and applies a depthwise 3x3.
template <class T>
Var<T> crude_skip(const Var<T>& embedded, int stage, const Var<T>& pw_w, const Var<T>& pw_b, const Var<T>& dw_w,
                  const Var<T>& dw_b) {
  if (stage < 2 || stage > 4)
    throw ConfigError("crude_skip: stage must be 2, 3 or 4, got " + std::to_string(stage));
  Var<T> x = embedded;
  for (int i = 1; i < stage; ++i) x = avg_pool2d(x, 2, 2);
  return conv2d_depthwise(conv2d_pointwise(x, pw_w, &pw_b), dw_w, &dw_b, 1);
}

// Learnable parameters of the full restoration network plus its config.
template <class T>
class Histoformer {
 public:
  explicit Histoformer(ModelConfig cfg, std::uint64_t seed = 0) : cfg_(std::move(cfg)) {
    cfg_.validate();
    build(seed);
  }

  // Restores a model from explicit parameter values (e.g. a checkpoint).
  Histoformer(ModelConfig cfg, ParameterStore<T> store) : cfg_(std::move(cfg)), store_(std::move(store)) {
    cfg_.validate();
    Histoformer reference(cfg_, 0);
    const auto& want = reference.store().entries();
    const auto& have = store_.entries();
    if (want.size() != have.size()) throw ConfigError("parameter set does not match the model config");
    for (std::size_t i = 0; i < want.size(); ++i)
      if (want[i].name != have[i].name || want[i].value.shape() != have[i].value.shape())
        throw ConfigError("parameter '" + have[i].name + "' does not match the model config");
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& store() { return store_; }
  const ParameterStore<T>& store() const { return store_; }
  std::int64_t parameter_count() const { return store_.parameter_count(); }

  // I_lq [3,H,W] -> restored [3,H,W]; H and W must be multiples of 8, at least 16.
  Var<T> forward(ParamBinder<T>& p, const Var<T>& input) const {
    const auto& s = input.shape();
    if (s.size() != 3 || s[0] != 3) throw DimensionError("model_forward: expected [3,H,W], got " + shape_str(s));
    if (s[1] % 8 != 0 || s[2] % 8 != 0)
      throw ConfigError("model_forward: H and W must be multiples of 8, got " + std::to_string(s[1]) + "x" +
                        std::to_string(s[2]) + "; reflect-pad to " + std::to_string((s[1] + 7) / 8 * 8) + "x" +
                        std::to_string((s[2] + 7) / 8 * 8));
    if (s[1] < 16 || s[2] < 16)
      throw ConfigError("model_forward: H and W must be at least 16, got " + std::to_string(s[1]) + "x" +
                        std::to_string(s[2]));

    const auto embed_b = p("embed.b");
    auto embedded = conv2d(input, p("embed.w"), &embed_b);
    std::array<Var<T>, 3> skips;
    Var<T> x = embedded;
    for (int st = 0; st < 4; ++st) {
      const std::string name = "enc" + std::to_string(st + 1);
      if (st > 0) {
        const std::string dn = "down" + std::to_string(st);
        x = downsample(x, p(dn + ".w"), p(dn + ".b"));
        const std::string cn = "crude" + std::to_string(st + 1);
        x = add(x, crude_skip(embedded, st + 1, p(cn + ".pw.w"), p(cn + ".pw.b"), p(cn + ".dw.w"), p(cn + ".dw.b")));
      }
      x = run_group(p, name, cfg_.depths[st], st, x);
      if (st < 3) skips[st] = x;
    }
    for (int st = 2; st >= 0; --st) {
      const std::string un = "up" + std::to_string(st + 1);
      x = upsample(x, p(un + ".w"), p(un + ".b"));
      if (cfg_.skip_fusion == SkipFusion::concat) {
        const std::string rn = "reduce" + std::to_string(st + 1);
        const auto rb = p(rn + ".b");
        x = conv2d_pointwise(concat0(x, skips[st]), p(rn + ".w"), &rb);
      } else {
        x = add(x, skips[st]);
      }
      x = run_group(p, "dec" + std::to_string(st + 1), cfg_.decoder_depths[st], st, x);
    }
    x = run_group(p, "refine", cfg_.refinement_depth, 0, x);
    const auto head_b = p("head.b");
    return add(input, conv2d(x, p("head.w"), &head_b));
  }

  // Forward pass without recording.
  Tensor<T> infer(const Tensor<T>& image) const {
    Tape<T> tape;
    tape.set_recording(false);
    ParamBinder<T> binder(tape, store_);
    return forward(binder, tape.constant(image)).value();
  }

 private:
  AttentionConfig attention_config(int stage, const Var<T>& x) const {
    AttentionConfig a;
    a.heads = cfg_.heads[stage];
    a.bins = static_cast<int>(std::min<std::int64_t>(cfg_.stage_bins(stage), x.dim(1) * x.dim(2)));
    a.scaling = cfg_.scaling;
    return a;
  }

  Var<T> run_group(ParamBinder<T>& p, const std::string& name, int depth, int stage, Var<T> x) const {
    const DgffConfig ffn{cfg_.shuffle, cfg_.dilation};
    for (int i = 0; i < depth; ++i) {
      const std::string b = name + ".b" + std::to_string(i) + ".";
      BlockWeights<T> w{p(b + "ln1.g"),
                        p(b + "ln1.b"),
                        {p(b + "attn.expand_pw.w"), p(b + "attn.expand_pw.b"), p(b + "attn.expand_dw.w"),
                         p(b + "attn.expand_dw.b"), p(b + "attn.out_pw.w"), p(b + "attn.out_pw.b")},
                        p(b + "ln2.g"),
                        p(b + "ln2.b"),
                        {p(b + "ffn.in_pw.w"), p(b + "ffn.in_pw.b"), p(b + "ffn.dw5.w"), p(b + "ffn.dw5.b"),
                         p(b + "ffn.dw3d.w"), p(b + "ffn.dw3d.b"), p(b + "ffn.out_pw.w"), p(b + "ffn.out_pw.b")}};
      x = htb_forward(x, w, attention_config(stage, x), ffn);
    }
    return x;
  }

  void build(std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    auto uniform = [&](Shape s, std::int64_t fan_in) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
      std::uniform_real_distribution<double> dist(-bound, bound);
      Tensor<T> t(std::move(s));
      for (auto& v : t.data()) v = static_cast<T>(dist(rng));
      return t;
    };
    auto zeros = [](Shape s) { return Tensor<T>(std::move(s)); };
    auto ones = [](Shape s) { return Tensor<T>(std::move(s), T(1)); };
    const std::int64_t c = cfg_.base_channels;

    auto group = [&](const std::string& name, int depth, int stage) {
      const std::int64_t ch = cfg_.stage_channels(stage);
      const std::int64_t e = dgff_hidden_channels(ch, cfg_.expansion, cfg_.shuffle);
      const std::int64_t path = e / (2 * cfg_.shuffle * cfg_.shuffle);
      for (int i = 0; i < depth; ++i) {
        const std::string b = name + ".b" + std::to_string(i) + ".";
        store_.add(b + "ln1.g", ones({ch}));
        store_.add(b + "ln1.b", zeros({ch}));
        store_.add(b + "attn.expand_pw.w", uniform({5 * ch, ch}, ch));
        store_.add(b + "attn.expand_pw.b", zeros({5 * ch}));
        store_.add(b + "attn.expand_dw.w", uniform({5 * ch, 3, 3}, 9));
        store_.add(b + "attn.expand_dw.b", zeros({5 * ch}));
        store_.add(b + "attn.out_pw.w", uniform({ch, ch}, ch));
        store_.add(b + "attn.out_pw.b", zeros({ch}));
        store_.add(b + "ln2.g", ones({ch}));
        store_.add(b + "ln2.b", zeros({ch}));
        store_.add(b + "ffn.in_pw.w", uniform({e, ch}, ch));
        store_.add(b + "ffn.in_pw.b", zeros({e}));
        store_.add(b + "ffn.dw5.w", uniform({path, 5, 5}, 25));
        store_.add(b + "ffn.dw5.b", zeros({path}));
        store_.add(b + "ffn.dw3d.w", uniform({path, 3, 3}, 9));
        store_.add(b + "ffn.dw3d.b", zeros({path}));
        store_.add(b + "ffn.out_pw.w", uniform({ch, e / 2}, e / 2));
        store_.add(b + "ffn.out_pw.b", zeros({ch}));
      }
    };

    store_.add("embed.w", uniform({c, 3, 3, 3}, 27));
    store_.add("embed.b", zeros({c}));
    for (int st = 0; st < 4; ++st) {
      const std::int64_t ch = cfg_.stage_channels(st);
      if (st > 0) {
        const std::int64_t prev = cfg_.stage_channels(st - 1);
        const std::string dn = "down" + std::to_string(st);
        store_.add(dn + ".w", uniform({ch, 4 * prev}, 4 * prev));
        store_.add(dn + ".b", zeros({ch}));
        const std::string cn = "crude" + std::to_string(st + 1);
        store_.add(cn + ".pw.w", uniform({ch, c}, c));
        store_.add(cn + ".pw.b", zeros({ch}));
        store_.add(cn + ".dw.w", uniform({ch, 3, 3}, 9));
        store_.add(cn + ".dw.b", zeros({ch}));
      }
      group("enc" + std::to_string(st + 1), cfg_.depths[st], st);
    }
    for (int st = 2; st >= 0; --st) {
      const std::int64_t ch = cfg_.stage_channels(st);
      const std::string un = "up" + std::to_string(st + 1);
      store_.add(un + ".w", uniform({4 * ch, 2 * ch}, 2 * ch));
      store_.add(un + ".b", zeros({4 * ch}));
      if (cfg_.skip_fusion == SkipFusion::concat) {
        const std::string rn = "reduce" + std::to_string(st + 1);
        store_.add(rn + ".w", uniform({ch, 2 * ch}, 2 * ch));
        store_.add(rn + ".b", zeros({ch}));
      }
      group("dec" + std::to_string(st + 1), cfg_.decoder_depths[st], st);
    }
    group("refine", cfg_.refinement_depth, 0);
    // zero head: the network starts as the identity map
    store_.add("head.w", zeros({3, c, 3, 3}));
    store_.add("head.b", zeros({3}));
  }

  ModelConfig cfg_;
  ParameterStore<T> store_;
};

}  // namespace histo
