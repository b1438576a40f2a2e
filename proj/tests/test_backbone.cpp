#include <gtest/gtest.h>

#include <filesystem>

#include "histo/checkpoint.hpp"
#include "histo/gradcheck_suite.hpp"

using namespace histo;

namespace {

BlockWeights<double> block(Tape<double>& tape, const std::vector<Tensor<double>>& w) {
  std::vector<Var<double>> v;
  for (const auto& t : w) v.push_back(tape.constant(t));
  return gc::block_from(v, 0);
}

Tensor<float> image(std::int64_t h, std::int64_t w, std::uint64_t seed) {
  return gc::uniform({3, h, w}, seed, 0, 1).cast<float>();
}

}  // namespace

TEST(Block, ZeroOutputProjectionsMakeTheIdentity) {
  for (std::int64_t c : {4, 8}) {
    auto w = gc::block_weight_inputs(c, 2.667, 1);
    for (int i : {6, 7, 16, 17}) w[i].fill(0);  // attention and feed-forward out_pw
    Tape<double> tape;
    const auto x = gc::uniform({c, 8, 8}, 2);
    const auto y = htb_forward(tape.constant(x), block(tape, w), AttentionConfig{2, 8}, DgffConfig{}).value();
    EXPECT_TRUE(y.bitwise_equal(x));
  }
}

TEST(Block, ShapePreservedAtEveryStageWidth) {
  const auto cfg = ModelConfig::tiny();
  for (int st = 0; st < 4; ++st) {
    const auto c = cfg.stage_channels(st);
    const auto w = gc::block_weight_inputs(c, cfg.expansion, 3);
    Tape<double> tape;
    tape.set_recording(false);
    const auto y = htb_forward(tape.constant(gc::uniform({c, 8, 8}, 4)), block(tape, w),
                               AttentionConfig{cfg.heads[st], 16}, DgffConfig{})
                       .value();
    EXPECT_EQ(y.shape(), (Shape{c, 8, 8}));
  }
}

TEST(Block, GradientCheckDoublePrecision) {
  for (const auto& r : run_gradcheck(GradScope::htb, true)) {
    EXPECT_TRUE(r.passed()) << r.name;
    EXPECT_LE(r.result.max_rel_error, 1e-6) << r.name;
  }
}

TEST(Block, FeedForwardOnOddExtentsMatchesReplicatePaddedInput) {
  const auto w = gc::dgff_weight_inputs(4, 2.667, 30);
  auto bind = [&](Tape<double>& t) {
    return DgffWeights<double>{t.constant(w[0]), t.constant(w[1]), t.constant(w[2]), t.constant(w[3]),
                               t.constant(w[4]), t.constant(w[5]), t.constant(w[6]), t.constant(w[7])};
  };
  Tape<double> tape;
  const auto even = gc::uniform({4, 6, 8}, 31);
  EXPECT_TRUE(dgff_any_extent(tape.constant(even), bind(tape), DgffConfig{})
                  .value()
                  .bitwise_equal(dgff_forward(tape.constant(even), bind(tape), DgffConfig{}).value()));

  const auto odd = gc::uniform({4, 3, 5}, 32);
  Tensor<double> padded({4, 4, 6});
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 4; ++y)
      for (int x = 0; x < 6; ++x) padded.at(c, y, x) = odd.at(c, std::min(y, 2), std::min(x, 4));
  const auto got = dgff_any_extent(tape.constant(odd), bind(tape), DgffConfig{}).value();
  const auto ref = dgff_forward(tape.constant(padded), bind(tape), DgffConfig{}).value();
  ASSERT_EQ(got.shape(), odd.shape());
  for (int c = 0; c < 4; ++c)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 5; ++x) EXPECT_EQ(got.at(c, y, x), ref.at(c, y, x));

  GradCheckOptions opt;
  opt.eps = 1e-3;
  const auto r = grad_check<double>(
      [&](auto& t, const auto& v) {
        return gc::weighted_sum(dgff_any_extent(v[0], bind(t), DgffConfig{}));
      },
      std::vector<Tensor<double>>{odd}, opt);
  EXPECT_LE(r.max_rel_error, 1e-6);
}

TEST(Resampling, ShapeLawsAndShuffleRoundTrip) {
  Tape<double> tape;
  const auto x = tape.constant(gc::uniform({36, 64, 64}, 5));
  const auto dw = tape.constant(gc::uniform({72, 144}, 6)), db = tape.constant(Tensor<double>({72}));
  const auto uw = tape.constant(gc::uniform({144, 72}, 7)), ub = tape.constant(Tensor<double>({144}));
  const auto d = downsample(x, dw, db);
  EXPECT_EQ(d.shape(), (Shape{72, 32, 32}));
  EXPECT_EQ(upsample(d, uw, ub).shape(), (Shape{36, 64, 64}));

  // three downsamples: 64 -> 8
  Var<double> y = tape.constant(gc::uniform({4, 64, 64}, 8));
  for (int i = 0; i < 3; ++i) {
    const auto c = y.dim(0);
    y = downsample(y, tape.constant(gc::uniform({2 * c, 4 * c}, 9)), tape.constant(Tensor<double>({2 * c})));
  }
  EXPECT_EQ(y.shape(), (Shape{32, 8, 8}));

  // identity projections: down then up is the bare shuffle round trip
  Tensor<double> eye({16, 16});
  for (int i = 0; i < 16; ++i) eye[i * 16 + i] = 1;
  const auto z = gc::uniform({4, 4, 4}, 10);
  const auto zero = tape.constant(Tensor<double>({16}));
  const auto rt = upsample(downsample(tape.constant(z), tape.constant(eye), zero), tape.constant(eye), zero);
  EXPECT_TRUE(rt.value().bitwise_equal(z));

  EXPECT_THROW(downsample(tape.constant(Tensor<double>({4, 5, 4})), tape.constant(Tensor<double>({8, 16})),
                          tape.constant(Tensor<double>({8}))),
               ConfigError);
}

TEST(CrudeSkip, PoolingShapesZeroWeightsAndConstantInput) {
  Tape<double> tape;
  const std::int64_t c = 8;
  const auto embedded = tape.constant(gc::uniform({c, 64, 64}, 11));
  for (int stage = 2; stage <= 4; ++stage) {
    const std::int64_t ch = c << (stage - 1), side = 64 >> (stage - 1);
    const auto pw = tape.constant(gc::uniform({ch, c}, 12)), pb = tape.constant(Tensor<double>({ch}));
    const auto dw = tape.constant(gc::uniform({ch, 3, 3}, 13)), db = tape.constant(Tensor<double>({ch}));
    EXPECT_EQ(crude_skip(embedded, stage, pw, pb, dw, db).shape(), (Shape{ch, side, side}));

    const auto zero_pw = tape.constant(Tensor<double>({ch, c}));
    const auto zeroed = crude_skip(embedded, stage, zero_pw, pb, dw, db).value();
    for (double v : zeroed.data()) EXPECT_EQ(v, 0.0);

    Tensor<double> k({c, 64, 64});
    for (std::int64_t i = 0; i < c; ++i)
      for (int p = 0; p < 64 * 64; ++p) k[i * 4096 + p] = 0.25 * static_cast<double>(i);
    const auto out = crude_skip(tape.constant(k), stage, pw, pb, dw, db).value();
    for (std::int64_t ch_i = 0; ch_i < ch; ++ch_i)
      for (std::int64_t p = 1; p < side * side; ++p) EXPECT_NEAR(out[ch_i * side * side + p], out[ch_i * side * side], 1e-12);
  }
  const auto pw = tape.constant(Tensor<double>({c, c})), b = tape.constant(Tensor<double>({c}));
  EXPECT_THROW(crude_skip(embedded, 1, pw, b, tape.constant(Tensor<double>({c, 3, 3})), b), ConfigError);
}

TEST(Model, TinyShapeLawAndZeroHeadIdentity) {
  ModelConfig cfg = ModelConfig::tiny();
  cfg.base_channels = 8;
  cfg.heads = {1, 1, 2, 2};
  cfg.bins = {0, 0, 0, 0};
  const Histoformer<float> m(cfg, 1);
  const auto x = image(32, 32, 14);
  const auto y = m.infer(x);
  EXPECT_EQ(y.shape(), x.shape());
  EXPECT_TRUE(y.bitwise_equal(x));  // head starts at zero
}

TEST(Model, ShapeContractAcrossSizes) {
  Histoformer<float> m(ModelConfig::tiny(), 2);
  // a nonzero head so the output is not trivially the input
  for (auto& v : m.store().value("head.w").data()) v = 0.01f;
  for (auto [h, w] : {std::pair{16, 16}, {24, 40}, {128, 16}, {56, 64}, {16, 128}}) {
    const auto y = m.infer(image(h, w, 15));
    EXPECT_EQ(y.shape(), (Shape{3, h, w}));
    EXPECT_TRUE(y.all_finite());
  }
}

TEST(Model, ResidualIdentityWithAllProjectionsZeroed) {
  Histoformer<float> m(ModelConfig::tiny(), 3);
  for (auto& e : m.store().entries())
    if (e.name.find("out_pw") != std::string::npos || e.name.rfind("head.", 0) == 0) e.value.fill(0);
  const auto x = image(32, 24, 16);
  EXPECT_TRUE(m.infer(x).bitwise_equal(x));
}

TEST(Model, GoldenParameterCounts) {
  EXPECT_EQ(Histoformer<float>(ModelConfig::tiny(), 0).parameter_count(), 408615);
  EXPECT_EQ(Histoformer<float>(ModelConfig::tiny(), 99).parameter_count(), 408615);
  EXPECT_EQ(Histoformer<float>(ModelConfig::full(), 0).parameter_count(), 10592763);
}

TEST(Model, FullConfigForwardAt64) {
  Histoformer<float> m(ModelConfig::full(), 4);
  for (auto& v : m.store().value("head.w").data()) v = 0.01f;
  const auto y = m.infer(image(64, 64, 17));
  EXPECT_EQ(y.shape(), (Shape{3, 64, 64}));
  EXPECT_TRUE(y.all_finite());
}

TEST(Model, SizesNotMultipleOfEightRaiseWithPaddingHint) {
  const Histoformer<float> m(ModelConfig::tiny(), 5);
  try {
    m.infer(image(30, 32, 18));
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("32x32"), std::string::npos) << e.what();
  }
}

TEST(Model, InvalidConfigsRaise) {
  ModelConfig c = ModelConfig::tiny();
  c.heads[0] = 3;
  EXPECT_THROW(Histoformer<float>(c, 0), ConfigError);
  c = ModelConfig::tiny();
  c.depths[2] = 0;
  EXPECT_THROW(Histoformer<float>(c, 0), ConfigError);
  c = ModelConfig::tiny();
  c.base_channels = 7;
  EXPECT_THROW(Histoformer<float>(c, 0), ConfigError);
}

TEST(Model, SameSeedSameParametersAndOutputs) {
  const Histoformer<float> a(ModelConfig::tiny(), 6), b(ModelConfig::tiny(), 6), c(ModelConfig::tiny(), 7);
  bool differs = false;
  for (std::size_t i = 0; i < a.store().size(); ++i) {
    EXPECT_TRUE(a.store().entries()[i].value.bitwise_equal(b.store().entries()[i].value));
    differs |= !a.store().entries()[i].value.bitwise_equal(c.store().entries()[i].value);
  }
  EXPECT_TRUE(differs);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  const auto dir = std::filesystem::path(HISTO_TEST_TMP) / "backbone";
  std::filesystem::create_directories(dir);
  Histoformer<float> m(ModelConfig::tiny(), 8);
  for (auto& v : m.store().value("head.w").data()) v = 0.02f;
  const auto path = (dir / "tiny.ckpt").string();
  save_checkpoint(path, m);
  const auto r = load_checkpoint<float>(path);
  EXPECT_EQ(r.config(), m.config());
  ASSERT_EQ(r.store().size(), m.store().size());
  for (std::size_t i = 0; i < m.store().size(); ++i) {
    EXPECT_EQ(r.store().entries()[i].name, m.store().entries()[i].name);
    EXPECT_TRUE(r.store().entries()[i].value.bitwise_equal(m.store().entries()[i].value));
  }
  const auto x = image(16, 16, 19);
  EXPECT_TRUE(r.infer(x).bitwise_equal(m.infer(x)));
}

TEST(Checkpoint, CorruptFilesRaise) {
  const auto dir = std::filesystem::path(HISTO_TEST_TMP) / "backbone";
  std::filesystem::create_directories(dir);
  const auto path = (dir / "bad.ckpt").string();
  {
    std::ofstream f(path, std::ios::binary);
    f << "NOTACHECKPOINT";
  }
  EXPECT_THROW(load_checkpoint<float>(path), Error);
  EXPECT_THROW(load_checkpoint<float>((dir / "missing.ckpt").string()), IoError);

  Histoformer<float> m(ModelConfig::tiny(), 9);
  const auto good = (dir / "trunc.ckpt").string();
  save_checkpoint(good, m);
  std::filesystem::resize_file(good, std::filesystem::file_size(good) / 2);
  EXPECT_THROW(load_checkpoint<float>(good), Error);
}
