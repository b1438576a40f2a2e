#include <gtest/gtest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "histo/grad_check.hpp"
#include "histo/ops.hpp"
#include "histo/ops_conv.hpp"
#include "histo/ops_sort.hpp"
#include "histo/optim.hpp"
#include "histo/parameter_store.hpp"

using namespace histo;

namespace {

Tensor<double> random_tensor(Shape s, std::uint64_t seed, double lo = -1, double hi = 1) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> d(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.data()) v = d(rng);
  return t;
}

template <class T>
std::vector<T> values(const Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace

TEST(Tensor, ShapeAndDataInvariants) {
  Tensor<float> t({2, 3, 4});
  EXPECT_EQ(t.numel(), 24);
  EXPECT_EQ(t.dim(-1), 4);
  EXPECT_THROW(Tensor<float>({2, 0}), DimensionError);
  EXPECT_THROW(Tensor<float>({2, 2}, std::vector<float>(3)), DimensionError);
}

TEST(Tensor, ReshapeReinterpretsWithoutReordering) {
  Tensor<float> t({2, 3});
  std::iota(t.data().begin(), t.data().end(), 0.f);
  const auto r = t.reshaped({3, 2});
  EXPECT_EQ(values(r), values(t));
  EXPECT_THROW(t.reshaped({4, 2}), DimensionError);
}

TEST(Matmul, IdentityAndHandExample) {
  Tape<double> tape;
  auto eye = tape.constant(Tensor<double>({2, 2}, {1, 0, 0, 1}));
  auto b = tape.constant(Tensor<double>({2, 2}, {5, 6, 7, 8}));
  EXPECT_EQ(values(matmul(eye, b).value()), (std::vector<double>{5, 6, 7, 8}));
  auto a = tape.constant(Tensor<double>({2, 2}, {1, 2, 3, 4}));
  EXPECT_EQ(values(matmul(a, b).value()), (std::vector<double>{19, 22, 43, 50}));
}

TEST(Matmul, BatchedSlicesMatchLoopOracle) {
  Tape<double> tape;
  const auto a = random_tensor({3, 4, 5}, 1), b = random_tensor({3, 5, 6}, 2);
  const auto out = matmul(tape.constant(a), tape.constant(b)).value();
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 6; ++j) {
        double s = 0;
        for (int k = 0; k < 5; ++k) s += a[n * 20 + i * 5 + k] * b[n * 30 + k * 6 + j];
        EXPECT_NEAR(out[n * 24 + i * 6 + j], s, 1e-12);
      }
}

TEST(Matmul, IdenticalBatchesGiveIdenticalProducts) {
  Tape<float> tape;
  Tensor<float> a({3, 2, 2}), b({3, 2, 2});
  for (int n = 0; n < 3; ++n)
    for (int i = 0; i < 4; ++i) {
      a[n * 4 + i] = static_cast<float>(i + 1);
      b[n * 4 + i] = static_cast<float>(i * 2 - 1);
    }
  const auto out = matmul(tape.constant(a), tape.constant(b)).value();
  for (int n = 1; n < 3; ++n)
    for (int i = 0; i < 4; ++i) EXPECT_EQ(out[n * 4 + i], out[i]);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  Tape<float> tape;
  auto a = tape.constant(Tensor<float>({2, 3}));
  auto b = tape.constant(Tensor<float>({4, 2}));
  try {
    matmul(a, b);
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("(2,3)"), std::string::npos) << msg;
    EXPECT_NE(msg.find("(4,2)"), std::string::npos) << msg;
  }
}

TEST(Softmax, UniformShiftAndHandExample) {
  Tape<double> tape;
  const auto u = softmax_last(tape.constant(Tensor<double>({4}, 2.5))).value();
  for (double v : u.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  const auto h = softmax_last(tape.constant(Tensor<double>({2}, {0, std::log(3.0)}))).value();
  EXPECT_NEAR(h[0], 0.25, 1e-15);
  EXPECT_NEAR(h[1], 0.75, 1e-15);

  const auto x = random_tensor({5, 7}, 3, -4, 4);
  auto shifted = x;
  for (auto& v : shifted.data()) v += 3.25;
  const auto a = softmax_last(tape.constant(x)).value(), b = softmax_last(tape.constant(shifted)).value();
  for (std::int64_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], b[i], 1e-14);
  for (int r = 0; r < 5; ++r) {
    double s = 0;
    for (int c = 0; c < 7; ++c) {
      EXPECT_GE(a[r * 7 + c], 0);
      s += a[r * 7 + c];
    }
    EXPECT_NEAR(s, 1.0, 1e-6);
  }
}

TEST(Softmax, LargeLogitsStayFiniteAndNanRaises) {
  Tape<float> tape;
  const auto big = softmax_last(tape.constant(Tensor<float>({2}, {1000.f, 1000.f}))).value();
  EXPECT_FLOAT_EQ(big[0], 0.5f);
  EXPECT_THROW(softmax_last(tape.constant(Tensor<float>({2}, {0.f, NAN}))), NumericError);
}

TEST(Argsort, DefinitionIdentityAndStability) {
  EXPECT_EQ(argsort_last(Tensor<float>({3}, {3, 1, 2})).indices, (std::vector<std::int32_t>{1, 2, 0}));
  EXPECT_EQ(argsort_last(Tensor<float>({4}, {1, 2, 3, 4})).indices, (std::vector<std::int32_t>{0, 1, 2, 3}));
  EXPECT_EQ(argsort_last(Tensor<float>({3}, {5, 5, 5})).indices, (std::vector<std::int32_t>{0, 1, 2}));
  EXPECT_EQ(argsort_last(Tensor<float>({5}, {2, 1, 2, 1, 0})).indices, (std::vector<std::int32_t>{4, 1, 3, 0, 2}));
  EXPECT_EQ(argsort_last(Tensor<float>({3}, {3, 1, 2}), false).indices, (std::vector<std::int32_t>{0, 2, 1}));
}

TEST(GatherScatter, DefinitionExamples) {
  const Tensor<float> x({3}, {10, 20, 30});
  const PermutationIndex p{{3}, {2, 0, 1}};
  EXPECT_EQ(values(gather_last(x, p)), (std::vector<float>{30, 10, 20}));
  EXPECT_EQ(values(scatter_last(Tensor<float>({3}, {30, 10, 20}), p)), (std::vector<float>{10, 20, 30}));
  const auto id = PermutationIndex::identity({3});
  EXPECT_EQ(values(gather_last(x, id)), values(x));
  EXPECT_EQ(values(scatter_last(x, id)), values(x));
}

TEST(GatherScatter, SortedOutputIsNonDecreasingAndRoundTripsBitwise) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = random_tensor({3, 4, 9}, 100 + trial).cast<float>();
    const auto p = argsort_last(x);
    const auto sorted = gather_last(x, p);
    for (std::int64_t s = 0; s < 12; ++s)
      for (int j = 1; j < 9; ++j) EXPECT_LE(sorted[s * 9 + j - 1], sorted[s * 9 + j]);
    EXPECT_TRUE(scatter_last(sorted, p).bitwise_equal(x));
  }
}

TEST(GatherScatter, InvalidIndicesRaise) {
  const Tensor<float> x({3}, {1, 2, 3});
  EXPECT_THROW(gather_last(x, PermutationIndex{{3}, {0, 3, 1}}), IndexError);
  EXPECT_THROW(scatter_last(x, PermutationIndex{{3}, {0, 0, 1}}), IndexError);
}

TEST(Backward, GatherConservesGradientMass) {
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({2, 6}, 7));
  auto loss = sum(gather_last(x, argsort_last(x)));
  tape.backward(loss);
  for (double g : x.grad().data()) EXPECT_EQ(g, 1.0);
}

TEST(Backward, SumGivesOnesAndFanOutAccumulates) {
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({3, 2}, 8));
  tape.backward(sum(x));
  for (double g : x.grad().data()) EXPECT_EQ(g, 1.0);

  Tape<double> t2;
  auto y = t2.leaf(random_tensor({4}, 9));
  t2.backward(add(sum(y), add(sum(y), sum(y))));
  for (double g : y.grad().data()) EXPECT_EQ(g, 3.0);
}

TEST(Backward, WithoutForwardIsStateError) {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>({1}, 1.0));
  EXPECT_THROW(tape.backward(x), StateError);
}

TEST(Backward, RecordsReplayInReverseOrder) {
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({2, 2}, 10));
  auto y = mish(scale(x, 2.0));
  auto z = sum(mul(y, y));
  const auto names = tape.op_names();
  ASSERT_EQ(names.size(), 4u);
  EXPECT_EQ(names.front(), "scale");
  EXPECT_EQ(names.back(), "sum");
  tape.backward(z);
  EXPECT_FALSE(x.grad().empty());
}

TEST(DepthwiseConv, IdentityKernelAndOnesKernel) {
  Tape<float> tape;
  const auto x = random_tensor({2, 5, 6}, 11).cast<float>();
  Tensor<float> center({2, 3, 3});
  center.at(0, 1, 1) = center.at(1, 1, 1) = 1;
  EXPECT_TRUE(conv2d_depthwise(tape.constant(x), tape.constant(center)).value().bitwise_equal(x));

  const auto ones = conv2d_depthwise(tape.constant(Tensor<float>({1, 4, 4}, 0.5f)),
                                     tape.constant(Tensor<float>({1, 3, 3}, 1.f)));
  for (float v : ones.value().data()) EXPECT_FLOAT_EQ(v, 4.5f);
}

TEST(DepthwiseConv, DilatedMatchesZeroInflatedBruteForce) {
  const auto x = random_tensor({1, 7, 7}, 12);
  const auto w = random_tensor({1, 3, 3}, 13);
  Tape<double> tape;
  const auto out = conv2d_depthwise(tape.constant(x), tape.constant(w), static_cast<const Var<double>*>(nullptr), 2).value();
  // 5x5 kernel with the 3x3 taps at even offsets, reflect padding of 2
  double k5[5][5] = {};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) k5[2 * i][2 * j] = w[i * 3 + j];
  auto refl = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * (n - 1) - i : i); };
  for (int y = 0; y < 7; ++y)
    for (int xx = 0; xx < 7; ++xx) {
      double s = 0;
      for (int i = 0; i < 5; ++i)
        for (int j = 0; j < 5; ++j) s += k5[i][j] * x[refl(y + i - 2, 7) * 7 + refl(xx + j - 2, 7)];
      EXPECT_NEAR(out.at(0, y, xx), s, 1e-12);
    }
}

TEST(DepthwiseConv, EvenKernelAndUnreflectableInputRaise) {
  Tape<float> tape;
  EXPECT_THROW(conv2d_depthwise(tape.constant(Tensor<float>({1, 4, 4})), tape.constant(Tensor<float>({1, 2, 2}))),
               ConfigError);
  EXPECT_THROW(conv2d_depthwise(tape.constant(Tensor<float>({1, 2, 2})), tape.constant(Tensor<float>({1, 5, 5}))),
               ConfigError);
}

TEST(PointwiseConv, IdentitySumAndMatmulOracle) {
  Tape<double> tape;
  const auto x = random_tensor({2, 3, 3}, 14);
  Tensor<double> eye({2, 2});
  eye[0] = eye[3] = 1;
  EXPECT_TRUE(conv2d_pointwise(tape.constant(x), tape.constant(eye)).value().bitwise_equal(x));

  const auto s = conv2d_pointwise(tape.constant(x), tape.constant(Tensor<double>({1, 2}, 1.0))).value();
  for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(s[i], x[i] + x[9 + i]);

  const auto w = random_tensor({4, 2}, 15);
  const auto pw = conv2d_pointwise(tape.constant(x), tape.constant(w)).value();
  const auto mm = matmul(tape.constant(w), tape.constant(x.reshaped({2, 9}))).value();
  for (int i = 0; i < 36; ++i) EXPECT_NEAR(pw[i], mm[i], 1e-14);
  EXPECT_THROW(conv2d_pointwise(tape.constant(x), tape.constant(Tensor<double>({4, 3}))), DimensionError);
}

TEST(PixelShuffle, ShapeLawLayoutAndRoundTrip) {
  const Tensor<float> x({4, 1, 1}, {1, 2, 3, 4});
  const auto y = pixel_shuffle(x, 2);
  EXPECT_EQ(y.shape(), (Shape{1, 2, 2}));
  EXPECT_EQ(values(y), (std::vector<float>{1, 2, 3, 4}));

  const auto r = random_tensor({8, 4, 4}, 16).cast<float>();
  EXPECT_TRUE(pixel_shuffle(pixel_unshuffle(r, 2), 2).bitwise_equal(r));
  EXPECT_TRUE(pixel_unshuffle(pixel_shuffle(r, 2), 2).bitwise_equal(r));

  const auto s = pixel_shuffle(r, 2);  // [2, 8, 8]
  for (int c = 0; c < 2; ++c)
    for (int h = 0; h < 4; ++h)
      for (int w = 0; w < 4; ++w)
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) EXPECT_EQ(s.at(c, h * 2 + i, w * 2 + j), r.at(c * 4 + i * 2 + j, h, w));

  EXPECT_THROW(pixel_shuffle(Tensor<float>({3, 2, 2}), 2), ConfigError);
  EXPECT_THROW(pixel_unshuffle(Tensor<float>({1, 3, 4}), 2), ConfigError);
}

TEST(Mish, ClosedFormValues) {
  Tape<double> tape;
  const auto m = mish(tape.constant(Tensor<double>({4}, {0.0, 20.0, -20.0, 1.0}))).value();
  EXPECT_EQ(m[0], 0.0);
  EXPECT_NEAR(m[1], 20.0, 1e-6);
  EXPECT_NEAR(m[2], 0.0, 1e-6);
  EXPECT_NEAR(m[3], std::tanh(std::log1p(std::exp(1.0))), 1e-15);
}

TEST(LayerNorm, HandExampleConstantVectorAndMeanPostcondition) {
  Tape<double> tape;
  auto g = tape.constant(Tensor<double>({2}, 1.0));
  auto b = tape.constant(Tensor<double>({2}, 0.0));
  const auto y = layer_norm_channels(tape.constant(Tensor<double>({2, 1, 1}, {1, 3})), g, b).value();
  EXPECT_NEAR(y[0], -1, 1e-3);
  EXPECT_NEAR(y[1], 1, 1e-3);

  auto g3 = tape.constant(Tensor<double>({3}, 1.0));
  auto b3 = tape.constant(Tensor<double>({3}, 0.0));
  const auto z = layer_norm_channels(tape.constant(Tensor<double>({3, 2, 2}, 0.7)), g3, b3).value();
  for (double v : z.data()) EXPECT_NEAR(v, 0.0, 1e-9);

  // unit gain: the per-pixel channel mean of y - bias vanishes
  const auto bias = random_tensor({5}, 17);
  const auto plain = layer_norm_channels(tape.constant(random_tensor({5, 3, 4}, 20)),
                                         tape.constant(Tensor<double>({5}, 1.0)), tape.constant(bias))
                         .value();
  for (int p = 0; p < 12; ++p) {
    double m = 0;
    for (int c = 0; c < 5; ++c) m += plain[c * 12 + p] - bias[c];
    EXPECT_NEAR(m / 5, 0.0, 1e-4);
  }
}

TEST(AvgPool, ExamplesAndOversizeWindow) {
  Tape<float> tape;
  const auto m = avg_pool2d(tape.constant(Tensor<float>({1, 2, 2}, {1, 2, 3, 4})), 2, 2).value();
  EXPECT_EQ(m.numel(), 1);
  EXPECT_FLOAT_EQ(m[0], 2.5f);
  const auto c = avg_pool2d(tape.constant(Tensor<float>({2, 4, 6}, 0.25f)), 2, 2).value();
  for (float v : c.data()) EXPECT_FLOAT_EQ(v, 0.25f);
  const auto x = random_tensor({2, 3, 3}, 21).cast<float>();
  EXPECT_TRUE(avg_pool2d(tape.constant(x), 1, 1).value().bitwise_equal(x));
  EXPECT_THROW(avg_pool2d(tape.constant(Tensor<float>({1, 2, 2})), 3, 1), ConfigError);
}

TEST(GradCheck, SumOfSquaresWithinOneInBillion) {
  GradCheckOptions opt;
  opt.eps = 1e-5;
  opt.richardson = false;
  const auto r = grad_check<double>([](auto&, const auto& v) { return sum(mul(v[0], v[0])); },
                                    std::vector<Tensor<double>>{random_tensor({3, 4}, 22)}, opt);
  EXPECT_LE(r.max_rel_error, 1e-9);
  EXPECT_EQ(r.coords_checked, 12);
}

TEST(GradCheck, DetectsAWrongGradient) {
  // analytic pass sees x^2, numeric passes see x^2 + x
  auto f = [](auto& tape, const auto& v) {
    auto sq = mul(v[0], v[0]);
    if (!tape.recording()) sq = add(sq, v[0]);
    return sum(sq);
  };
  const auto r = grad_check<double>(f, std::vector<Tensor<double>>{random_tensor({4}, 23)});
  EXPECT_GT(r.max_rel_error, 1e-3);
}

TEST(Determinism, ForwardBackwardAndOptimizerStepAreBitwiseRepeatable) {
  auto run = [] {
    ParameterStore<float> store;
    store.add("w", random_tensor({4, 3}, 24).cast<float>());
    store.add("b", Tensor<float>({4}));
    Tape<float> tape;
    ParamBinder<float> bind(tape, store);
    auto x = tape.constant(random_tensor({3, 5, 5}, 25).cast<float>());
    const auto b = bind("b");
    auto y = mish(conv2d_pointwise(x, bind("w"), &b));
    tape.backward(mean(mul(y, y)));
    std::vector<Tensor<float>> grads;
    bind.accumulate_grads(grads);
    for (std::size_t i = 0; i < grads.size(); ++i) store.entries()[i].grad = grads[i];
    store.grads_ready = true;
    adamw_step(store, 1e-2);
    return store.value("w");
  };
  EXPECT_TRUE(run().bitwise_equal(run()));
}
