#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "histo/data_synth.hpp"
#include "histo/metrics.hpp"
#include "histo/ppm.hpp"

using namespace histo;

namespace {

std::filesystem::path tmp_dir(const std::string& name) {
  const auto d = std::filesystem::path(HISTO_TEST_TMP) / "data_synth" / name;
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

void write_bytes(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream f(p, std::ios::binary);
  f << bytes;
}

bool in_unit_range(const Tensor<float>& t) {
  for (float v : t.data())
    if (!(v >= 0.f && v <= 1.f)) return false;
  return true;
}

}  // namespace

TEST(Degrade, NoOpSpecIsBitwiseIdentity) {
  const auto clean = make_clean_image<float>(32, 40, 1);
  for (auto kind : {DegradationKind::snow, DegradationKind::rain_fog, DegradationKind::raindrop}) {
    DegradationSpec s;
    s.kind = kind;
    s.density = 0;
    s.transmission = 1;
    s.seed = 5;
    EXPECT_TRUE(degrade(clean, s).bitwise_equal(clean));
  }
}

TEST(Degrade, OpaqueSnowSpecksAreExactlyWhite) {
  const auto clean = make_clean_image<float>(48, 48, 2);
  DegradationSpec s;
  s.kind = DegradationKind::snow;
  s.density = 3;
  s.opacity = 1;
  s.seed = 77;
  const auto out = degrade(clean, s);
  const auto specks = snow_specks(s, 48, 48);
  ASSERT_EQ(specks.size(), 7u);
  int covered = 0;
  for (std::int64_t y = 0; y < 48; ++y)
    for (std::int64_t x = 0; x < 48; ++x) {
      bool hit = false;
      for (const auto& sp : specks) hit |= sp.covers(x, y);
      for (int c = 0; c < 3; ++c) {
        if (hit)
          EXPECT_EQ(out.at(c, y, x), 1.0f);
        else
          EXPECT_EQ(out.at(c, y, x), clean.at(c, y, x));
      }
      covered += hit;
    }
  EXPECT_GT(covered, 0);
}

TEST(Degrade, FogOnBlackIsHalfGrey) {
  DegradationSpec s;
  s.kind = DegradationKind::rain_fog;
  s.density = 0;
  s.transmission = 0.5;
  s.airlight = 1;
  const auto out = degrade(Tensor<float>({3, 8, 8}), s);
  for (float v : out.data()) EXPECT_EQ(v, 0.5f);
}

TEST(Degrade, DeterministicAndWithinUnitRange) {
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto clean = make_clean_image<float>(40, 32, seed);
    EXPECT_TRUE(in_unit_range(clean));
    const auto spec = random_degradation(seed);
    const auto a = degrade(clean, spec), b = degrade(clean, spec);
    EXPECT_TRUE(a.bitwise_equal(b));
    EXPECT_TRUE(in_unit_range(a));
    EXPECT_TRUE(make_clean_image<float>(40, 32, seed).bitwise_equal(clean));
    const auto p = make_pair<float>(32, seed), q = make_pair<float>(32, seed);
    EXPECT_TRUE(p.degraded.bitwise_equal(q.degraded));
  }
}

TEST(Degrade, PsnrNonIncreasingInDensity) {
  const auto clean = make_clean_image<float>(64, 64, 3);
  for (auto kind : {DegradationKind::snow, DegradationKind::rain_fog}) {
    double prev = 1e9;
    for (double density : {0.0, 2.0, 5.0, 10.0, 20.0}) {
      DegradationSpec s;
      s.kind = kind;
      s.density = density;
      s.opacity = 0.8;
      s.seed = 11;
      const double p = psnr(degrade(clean, s), clean);
      EXPECT_LE(p, prev) << "kind " << static_cast<int>(kind) << " density " << density;
      prev = p;
    }
  }
}

TEST(Degrade, PsnrNonIncreasingInHaze) {
  const auto clean = make_clean_image<float>(64, 64, 4);
  double prev = 1e9;
  for (double t : {1.0, 0.9, 0.75, 0.6, 0.4}) {
    DegradationSpec s;
    s.kind = DegradationKind::rain_fog;
    s.density = 4;
    s.transmission = t;
    s.airlight = 0.9;
    s.seed = 12;
    const double p = psnr(degrade(clean, s), clean);
    EXPECT_LE(p, prev) << "t " << t;
    prev = p;
  }
}

TEST(Degrade, InvalidSpecsRaise) {
  const auto clean = make_clean_image<float>(16, 16, 5);
  auto bad = [&](auto mutate) {
    DegradationSpec s;
    mutate(s);
    EXPECT_THROW(degrade(clean, s), ConfigError);
  };
  bad([](DegradationSpec& s) { s.density = -1; });
  bad([](DegradationSpec& s) { s.opacity = 0; });
  bad([](DegradationSpec& s) { s.opacity = 1.5; });
  bad([](DegradationSpec& s) { s.transmission = 0; });
  bad([](DegradationSpec& s) { s.airlight = 1.1; });
  bad([](DegradationSpec& s) { s.drop_radius_min = 6; });
  EXPECT_THROW(degrade(Tensor<float>({1, 8, 8}), DegradationSpec{}), DimensionError);
}

TEST(Patches, FullSizeCropIsIdentityAndPatchesAreAligned) {
  const auto pair = make_pair<float>(48, 6);
  SplitRng rng(1);
  EXPECT_TRUE(sample_patch(pair.clean, 48, rng).bitwise_equal(pair.clean));
  for (int i = 0; i < 20; ++i) {
    std::int64_t oy = -1, ox = -1;
    const auto p = sample_patch(pair.clean, 16, rng, &oy, &ox);
    ASSERT_GE(oy, 0);
    ASSERT_LE(oy, 32);
    EXPECT_TRUE(p.bitwise_equal(crop(pair.clean, oy, ox, 16, 16)));
  }
  SplitRng a(9), b(9);
  const auto pp = sample_pair_patch(pair, 24, a);
  std::int64_t oy = 0, ox = 0;
  sample_patch(pair.clean, 24, b, &oy, &ox);
  EXPECT_TRUE(pp.degraded.bitwise_equal(crop(pair.degraded, oy, ox, 24, 24)));
  EXPECT_THROW(sample_patch(pair.clean, 56, rng), ConfigError);
  EXPECT_THROW(sample_patch(pair.clean, 20, rng), ConfigError);
}

TEST(Patches, FlipsAreInvolutionsAndKeepPairsAligned) {
  const auto pair = make_pair<float>(24, 7);
  EXPECT_TRUE(flip_horizontal(flip_horizontal(pair.clean)).bitwise_equal(pair.clean));
  EXPECT_TRUE(flip_vertical(flip_vertical(pair.clean)).bitwise_equal(pair.clean));
  EXPECT_FALSE(flip_horizontal(pair.clean).bitwise_equal(pair.clean));

  auto diff = [](const ImagePair<float>& p) {
    Tensor<float> d(p.clean.shape());
    for (std::int64_t i = 0; i < d.numel(); ++i) d[i] = p.degraded[i] - p.clean[i];
    return d;
  };
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    SplitRng rng(seed), replay(seed);
    const auto aug = augment_flips(pair, rng);
    const bool h = replay.coin(), v = replay.coin();
    auto expected = diff(pair);
    if (h) expected = flip_horizontal(expected);
    if (v) expected = flip_vertical(expected);
    EXPECT_TRUE(diff(aug).bitwise_equal(expected));
  }
}

TEST(ReflectPad, PadsToMultipleAndCropsBack) {
  const auto img = make_clean_image<float>(13, 21, 8);
  const auto p = reflect_pad_to_multiple(img, 8);
  EXPECT_EQ(p.shape(), (Shape{3, 16, 24}));
  EXPECT_TRUE(crop(p, 0, 0, 13, 21).bitwise_equal(img));
  EXPECT_EQ(p.at(1, 13, 4), img.at(1, 11, 4));
  EXPECT_EQ(p.at(2, 3, 21), img.at(2, 3, 19));
  EXPECT_TRUE(reflect_pad_to_multiple(make_clean_image<float>(16, 8, 9), 8).bitwise_equal(make_clean_image<float>(16, 8, 9)));
}

TEST(Ppm, WhitePixelRoundTripAndFormat) {
  const auto dir = tmp_dir("ppm");
  write_bytes(dir / "white.ppm", std::string("P6\n1 1\n255\n") + std::string(3, '\xff'));
  const auto w = read_ppm<float>((dir / "white.ppm").string());
  EXPECT_EQ(w.shape(), (Shape{3, 1, 1}));
  for (float v : w.data()) EXPECT_EQ(v, 1.0f);

  Tensor<float> q({3, 7, 5});
  SplitRng rng(3);
  for (auto& v : q.data()) v = static_cast<float>(rng.below(256)) / 255.0f;
  const auto path = (dir / "rt.ppm").string();
  write_ppm(q, path);
  EXPECT_TRUE(read_ppm<float>(path).bitwise_equal(q));
  EXPECT_EQ(std::filesystem::file_size(path), std::string("P6\n5 7\n255\n").size() + 105);

  write_bytes(dir / "comment.ppm", std::string("P6\n# made by hand\n2 1\n255\n") + std::string(6, '\x80'));
  EXPECT_EQ(read_ppm<float>((dir / "comment.ppm").string()).shape(), (Shape{3, 1, 2}));
}

TEST(Ppm, MalformedFilesRaiseParseErrors) {
  const auto dir = tmp_dir("ppm_bad");
  auto expect_parse_error = [&](const std::string& name, const std::string& bytes) {
    write_bytes(dir / name, bytes);
    EXPECT_THROW(read_ppm<float>((dir / name).string()), ParseError) << name;
  };
  expect_parse_error("trunc_pixels.ppm", std::string("P6\n2 2\n255\n") + std::string(5, 'a'));
  expect_parse_error("trunc_header.ppm", "P6\n2 ");
  expect_parse_error("p3.ppm", "P3\n1 1\n255\n0 0 0\n");
  expect_parse_error("maxval.ppm", std::string("P6\n1 1\n65535\n") + std::string(6, 'a'));
  expect_parse_error("empty.ppm", "");
  expect_parse_error("zero.ppm", "P6\n0 1\n255\n");
  try {
    decode_ppm<float>(std::vector<unsigned char>{'P', '6', '\n', '2', ' ', 'x'});
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 5u);
  }
  EXPECT_THROW(read_ppm<float>((dir / "missing.ppm").string()), IoError);
}

TEST(PairDir, WriteReadRoundTrip) {
  const auto dir = tmp_dir("pairs");
  std::vector<ImagePair<float>> pairs;
  for (std::uint64_t s = 0; s < 3; ++s) {
    auto p = make_pair<float>(16, s);
    // quantize so the 8-bit round trip is exact
    for (auto* t : {&p.clean, &p.degraded})
      for (auto& v : t->data()) v = static_cast<float>(std::lround(v * 255.0f)) / 255.0f;
    pairs.push_back(std::move(p));
  }
  write_pair_dir(dir.string(), pairs);
  EXPECT_TRUE(std::filesystem::exists(dir / "clean" / "0002.ppm"));
  const auto back = read_pair_dir<float>(dir.string());
  ASSERT_EQ(back.size(), 3u);
  for (std::size_t i = 0; i < 3; ++i) {
    EXPECT_TRUE(back[i].clean.bitwise_equal(pairs[i].clean));
    EXPECT_TRUE(back[i].degraded.bitwise_equal(pairs[i].degraded));
  }
  EXPECT_THROW(read_pair_dir<float>(tmp_dir("empty").string()), IoError);
}
