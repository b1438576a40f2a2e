#include <gtest/gtest.h>

#include "histo/gradcheck_suite.hpp"
#include "histo/dgff.hpp"

using namespace histo;

namespace {

DgffWeights<double> dgff_weights(Tape<double>& tape, const std::vector<Tensor<double>>& w) {
  return {tape.constant(w[0]), tape.constant(w[1]), tape.constant(w[2]), tape.constant(w[3]),
          tape.constant(w[4]), tape.constant(w[5]), tape.constant(w[6]), tape.constant(w[7])};
}

}  // namespace

TEST(Dgff, HiddenChannelRounding) {
  EXPECT_EQ(dgff_hidden_channels(36, 2.667), 96);
  EXPECT_EQ(dgff_hidden_channels(16, 2.667), 48);
  EXPECT_EQ(dgff_hidden_channels(4, 2.667), 16);
  EXPECT_EQ(dgff_hidden_channels(8, 2.0), 16);
  for (std::int64_t c : {2, 6, 18, 72, 144, 288}) {
    const auto e = dgff_hidden_channels(c, 2.667);
    EXPECT_EQ(e % 8, 0);
    EXPECT_GE(e, static_cast<std::int64_t>(2.667 * static_cast<double>(c)));
  }
}

TEST(Dgff, ShapeLawAtFullWidth) {
  Tape<float> tape;
  tape.set_recording(false);
  const auto w = gc::dgff_weight_inputs(36, 2.667, 1);
  auto c = [&](int i) { return tape.constant(w[i].cast<float>()); };
  DgffWeights<float> fw{c(0), c(1), c(2), c(3), c(4), c(5), c(6), c(7)};
  const auto y = dgff_forward(tape.constant(gc::uniform({36, 32, 32}, 2).cast<float>()), fw).value();
  EXPECT_EQ(y.shape(), (Shape{36, 32, 32}));
  EXPECT_TRUE(y.all_finite());
}

TEST(Dgff, SaturatedGateScalesTheFiveByFivePath) {
  Tape<double> tape;
  auto w = gc::dgff_weight_inputs(4, 2.667, 3);
  w[4].fill(0);   // dilated path weights
  w[5].fill(20);  // and bias: the gate is mish(20) everywhere
  const auto wv = dgff_weights(tape, w);
  const auto x = tape.constant(gc::uniform({4, 8, 8}, 4));
  const auto y = dgff_forward(x, wv).value();

  auto s = pixel_shuffle(conv2d_pointwise(x, wv.in_pw_w, &wv.in_pw_b), 2);
  const auto half = s.dim(0) / 2;
  auto f1 = conv2d_depthwise(slice0(s, 0, half), wv.dw5_w, &wv.dw5_b, 1);
  const double gate = std::tanh(std::log1p(std::exp(20.0))) * 20.0;
  EXPECT_NEAR(gate, 20.0, 1e-6);
  const auto want = conv2d_pointwise(pixel_unshuffle(scale(f1, gate), 2), wv.out_pw_w, &wv.out_pw_b).value();
  for (std::int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y[i], want[i], 1e-10);
}

TEST(Dgff, ZeroGateAnnihilatesTheFiveByFivePath) {
  Tape<double> tape;
  auto w = gc::dgff_weight_inputs(4, 2.667, 5);
  w[4].fill(0);
  w[5].fill(0);
  const auto y = dgff_forward(tape.constant(gc::uniform({4, 8, 8}, 6)), dgff_weights(tape, w)).value();
  for (std::int64_t c = 0; c < 4; ++c)
    for (int i = 0; i < 64; ++i) EXPECT_EQ(y[c * 64 + i], w[7][c]);
}

TEST(Dgff, ElementCountPreservedThroughShuffles) {
  Tape<double> tape;
  const auto w = gc::dgff_weight_inputs(4, 2.667, 7);
  const auto wv = dgff_weights(tape, w);
  const auto x = tape.constant(gc::uniform({4, 8, 8}, 8));
  auto e = conv2d_pointwise(x, wv.in_pw_w, &wv.in_pw_b);
  auto s = pixel_shuffle(e, 2);
  EXPECT_EQ(e.value().numel(), s.value().numel());
  EXPECT_EQ(s.shape(), (Shape{e.dim(0) / 4, 16, 16}));
  EXPECT_EQ(pixel_unshuffle(slice0(s, 0, s.dim(0) / 2), 2).value().numel(), e.value().numel() / 2);
}

TEST(Dgff, PathsHaveDistinctReceptiveFields) {
  // single off-center impulse on an 11x11 plane; responses compared with a
  // direct sum over the kernel taps
  Tape<double> tape;
  Tensor<double> x({1, 11, 11});
  x.at(0, 4, 6) = 1;
  const auto k5 = gc::uniform({1, 5, 5}, 9, 0.5, 1.0), k3 = gc::uniform({1, 3, 3}, 10, 0.5, 1.0);
  const auto r5 = conv2d_depthwise(tape.constant(x), tape.constant(k5)).value();
  const auto r3 = conv2d_depthwise(tape.constant(x), tape.constant(k3), static_cast<const Var<double>*>(nullptr), 2).value();
  int nz5 = 0, nz3 = 0;
  for (int y = 0; y < 11; ++y)
    for (int xx = 0; xx < 11; ++xx) {
      const int dy = 4 - y, dx = 6 - xx;
      const double want5 = (std::abs(dy) <= 2 && std::abs(dx) <= 2) ? k5[(dy + 2) * 5 + dx + 2] : 0.0;
      const bool on3 = std::abs(dy) <= 2 && std::abs(dx) <= 2 && dy % 2 == 0 && dx % 2 == 0;
      const double want3 = on3 ? k3[(dy / 2 + 1) * 3 + dx / 2 + 1] : 0.0;
      EXPECT_EQ(r5.at(0, y, xx), want5);
      EXPECT_EQ(r3.at(0, y, xx), want3);
      nz5 += r5.at(0, y, xx) != 0;
      nz3 += r3.at(0, y, xx) != 0;
    }
  EXPECT_EQ(nz5, 25);
  EXPECT_EQ(nz3, 9);
}

TEST(Dgff, OddExtentsRaise) {
  Tape<double> tape;
  const auto w = gc::dgff_weight_inputs(4, 2.667, 11);
  EXPECT_THROW(dgff_forward(tape.constant(gc::uniform({4, 7, 8}, 12)), dgff_weights(tape, w)), ConfigError);
}

TEST(Dgff, GradientCheckDoublePrecision) {
  for (const auto& r : run_gradcheck(GradScope::dgff, true)) {
    EXPECT_TRUE(r.passed()) << r.name;
    EXPECT_LE(r.result.max_rel_error, 1e-6) << r.name;
  }
}
