#include <gtest/gtest.h>

#include <cmath>

#include "saip/gradcheck.hpp"
#include "saip/ops.hpp"
#include "test_util.hpp"

namespace saip {
namespace {

using ops::ConvSpec;
using ops::Padding;
using testing::max_abs_diff;
using testing::random_tensor;

// Direct nested-loop convolution used as the reference for conv2d.
Tensor naive_conv(const Tensor& x, const Tensor& w, const Tensor* b, const ConvSpec& s) {
  const Index n = x.dim(0), cin = x.dim(1), h = x.dim(2), wd = x.dim(3), cout = w.dim(0);
  const Index cg = cin / s.groups, og = cout / s.groups;
  const Index ho = (h + 2 * s.pad() - s.dilation * (s.kernel - 1) - 1) / s.stride + 1;
  const Index wo = (wd + 2 * s.pad() - s.dilation * (s.kernel - 1) - 1) / s.stride + 1;
  Tensor out(Shape{n, cout, ho, wo});
  for (Index bi = 0; bi < n; ++bi)
    for (Index o = 0; o < cout; ++o)
      for (Index oy = 0; oy < ho; ++oy)
        for (Index ox = 0; ox < wo; ++ox) {
          double acc = b ? (*b)[o] : 0.0;
          const Index grp = o / og;
          for (Index c = 0; c < cg; ++c)
            for (Index ky = 0; ky < s.kernel; ++ky)
              for (Index kx = 0; kx < s.kernel; ++kx) {
                Index iy = oy * s.stride - s.pad() + ky * s.dilation;
                Index ix = ox * s.stride - s.pad() + kx * s.dilation;
                if (s.padding == Padding::replicate) {
                  iy = std::clamp<Index>(iy, 0, h - 1);
                  ix = std::clamp<Index>(ix, 0, wd - 1);
                } else if (iy < 0 || iy >= h || ix < 0 || ix >= wd) {
                  continue;
                }
                acc += static_cast<double>(w.at({o, c, ky, kx})) * x.at({bi, grp * cg + c, iy, ix});
              }
          out.at({bi, o, oy, ox}) = static_cast<float>(acc);
        }
  return out;
}

Tensor run_conv(const Tensor& x, const Tensor& w, std::optional<Tensor> b, const ConvSpec& s) {
  Tape<float> tape;
  std::optional<Var<float>> bv;
  if (b) bv = tape.constant(*b);
  return ops::conv2d(tape.constant(x), tape.constant(w), bv, s).value();
}

TEST(Conv2d, PointwiseIdentityKernelReproducesInput) {
  const Tensor x = random_tensor(Shape{1, 1, 5, 7}, 1);
  const Tensor w(Shape{1, 1, 1, 1}, 1.0f);
  ConvSpec s;
  s.kernel = 1;
  EXPECT_EQ(run_conv(x, w, std::nullopt, s), x);
}

TEST(Conv2d, ImpulseResponseSupportMatchesDilatedExtent) {
  for (int d : {1, 2, 3}) {
    for (int k : {3, 5}) {
      ConvSpec s;
      s.kernel = k;
      s.dilation = d;
      const Index size = 21;
      Tensor x(Shape{1, 1, size, size});
      x.at({0, 0, size / 2, size / 2}) = 1.0f;
      const Tensor y = run_conv(x, Tensor(Shape{1, 1, k, k}, 1.0f), std::nullopt, s);
      Index rmin = size, rmax = -1, cmin = size, cmax = -1;
      for (Index i = 0; i < size; ++i)
        for (Index j = 0; j < size; ++j)
          if (y.at({0, 0, i, j}) != 0.0f) {
            rmin = std::min(rmin, i), rmax = std::max(rmax, i);
            cmin = std::min(cmin, j), cmax = std::max(cmax, j);
          }
      EXPECT_EQ(rmax - rmin + 1, d * (k - 1) + 1) << "d=" << d << " k=" << k;
      EXPECT_EQ(cmax - cmin + 1, d * (k - 1) + 1) << "d=" << d << " k=" << k;
    }
  }
}

TEST(Conv2d, DepthwiseConvolvesEachChannelIndependently) {
  const Tensor x = random_tensor(Shape{1, 4, 8, 8}, 2);
  const Tensor w = random_tensor(Shape{4, 1, 3, 3}, 3);
  ConvSpec s;
  s.groups = 4;
  const Tensor y = run_conv(x, w, std::nullopt, s);
  ASSERT_EQ(y.shape(), (Shape{1, 4, 8, 8}));
  for (Index c = 0; c < 4; ++c) {
    Tensor xc(Shape{1, 1, 8, 8}), wc(Shape{1, 1, 3, 3});
    for (Index i = 0; i < 64; ++i) xc[i] = x[c * 64 + i];
    for (Index i = 0; i < 9; ++i) wc[i] = w[c * 9 + i];
    const Tensor yc = run_conv(xc, wc, std::nullopt, ConvSpec{});
    for (Index i = 0; i < 64; ++i) EXPECT_FLOAT_EQ(y[c * 64 + i], yc[i]);
  }
}

TEST(Conv2d, MatchesNestedLoopOracle) {
  struct Case {
    Index cin, cout;
    ConvSpec spec;
  };
  const std::vector<Case> cases = {
      {3, 5, {3, 1, 1, 1, Padding::zero}},      {4, 6, {3, 2, 1, 2, Padding::zero}},
      {2, 2, {5, 1, 2, 1, Padding::replicate}}, {6, 6, {3, 1, 3, 6, Padding::replicate}},
      {4, 8, {1, 1, 1, 1, Padding::zero}},      {3, 4, {3, 2, 2, 1, Padding::zero}},
  };
  std::uint64_t seed = 10;
  for (const auto& c : cases) {
    const Tensor x = random_tensor(Shape{2, c.cin, 9, 7}, seed++);
    const Tensor w = random_tensor(Shape{c.cout, c.cin / c.spec.groups, c.spec.kernel, c.spec.kernel}, seed++);
    const Tensor b = random_tensor(Shape{c.cout}, seed++);
    const Tensor got = run_conv(x, w, b, c.spec);
    const Tensor want = naive_conv(x, w, &b, c.spec);
    ASSERT_EQ(got.shape(), want.shape());
    EXPECT_LT(max_abs_diff(got, want), 1e-5);
  }
}

TEST(Conv2d, OutputSizeFollowsStrideFormula) {
  ConvSpec s;
  s.stride = 2;
  EXPECT_EQ(ops::conv_output_size(16, s), 8);
  s.kernel = 5;
  s.dilation = 2;
  EXPECT_EQ(ops::conv_output_size(17, s), 9);
  s.stride = 1;
  EXPECT_EQ(ops::conv_output_size(13, s), 13);
}

TEST(Conv2d, RejectsEvenKernelAndNamesMismatchedDimension) {
  ConvSpec s;
  s.kernel = 4;
  EXPECT_THROW(run_conv(Tensor(Shape{1, 1, 8, 8}), Tensor(Shape{1, 1, 4, 4}), std::nullopt, s), ShapeError);
  try {
    run_conv(Tensor(Shape{1, 3, 8, 8}), Tensor(Shape{2, 2, 3, 3}), std::nullopt, ConvSpec{});
    FAIL() << "expected a shape error";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("dimension 1"), std::string::npos) << e.what();
  }
}

Tensor run_softmax(const Tensor& x, int axis) {
  Tape<float> tape;
  return ops::softmax(tape.constant(x), axis).value();
}

TEST(Softmax, EqualLogitsGiveUniformWeights) {
  const Tensor y = run_softmax(Tensor(Shape{9}, 0.3f), 0);
  for (float v : y.data()) EXPECT_NEAR(v, 1.0f / 9.0f, 1e-7);
}

TEST(Softmax, ShiftInvariant) {
  const Tensor x = random_tensor(Shape{3, 5}, 4, -5, 5);
  Tensor shifted = x;
  for (auto& v : shifted.data()) v += 7.25f;
  EXPECT_LT(max_abs_diff(run_softmax(x, 1), run_softmax(shifted, 1)), 1e-6);
}

TEST(Softmax, TwoLogitClosedForm) {
  const Tensor y = run_softmax(Tensor(Shape{2}, std::vector<float>{1.0f, 0.0f}), 0);
  const double e = std::exp(-1.0);
  EXPECT_NEAR(y[0], 1.0 / (1.0 + e), 1e-6);
  EXPECT_NEAR(y[1], e / (1.0 + e), 1e-6);
  EXPECT_NEAR(y[0], 0.7311, 1e-4);
}

TEST(Softmax, SlicesSumToOneAndPreserveOrder) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Tensor x = random_tensor(Shape{2, 7, 3}, seed, -20, 20);
    const Tensor y = run_softmax(x, 1);
    for (Index a = 0; a < 2; ++a)
      for (Index b = 0; b < 3; ++b) {
        double s = 0;
        for (Index k = 0; k < 7; ++k) {
          s += y.at({a, k, b});
          for (Index m = 0; m < 7; ++m)
            if (x.at({a, k, b}) < x.at({a, m, b})) {
              EXPECT_LE(y.at({a, k, b}), y.at({a, m, b}));
            }
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
  }
}

TEST(Softmax, RejectsInvalidAxis) {
  EXPECT_THROW(run_softmax(Tensor(Shape{3}), 1), ShapeError);
}

TEST(PixelShuffle, SubPixelOrderIsRowMajor) {
  Tape<float> tape;
  const Tensor x(Shape{1, 4, 1, 1}, std::vector<float>{1, 2, 3, 4});
  const Tensor y = ops::pixel_shuffle(tape.constant(x), 2).value();
  ASSERT_EQ(y.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(y.vec(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(PixelShuffle, ShapeContractAndRoundTrip) {
  Tape<float> tape;
  const Tensor x = random_tensor(Shape{2, 8, 3, 5}, 5);
  auto y = ops::pixel_shuffle(tape.constant(x), 2);
  EXPECT_EQ(y.shape(), (Shape{2, 2, 6, 10}));
  EXPECT_EQ(ops::pixel_unshuffle(y, 2).value(), x);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const Tensor z = random_tensor(Shape{1, 9 * 2, 2, 3}, seed);
    EXPECT_EQ(ops::pixel_unshuffle(ops::pixel_shuffle(tape.constant(z), 3), 3).value(), z);
  }
  EXPECT_THROW(ops::pixel_shuffle(tape.constant(Tensor(Shape{1, 6, 2, 2})), 2), ShapeError);
}

Tensor sample(const Tensor& x, const Tensor& coords) {
  Tape<float> tape;
  return ops::bilinear_sample(tape.constant(x), tape.constant(coords)).value();
}

TEST(BilinearSample, IdentityGridReproducesInput) {
  const Tensor x = random_tensor(Shape{1, 3, 5, 6}, 6);
  Tensor grid(Shape{1, 2, 5, 6});
  for (Index i = 0; i < 5; ++i)
    for (Index j = 0; j < 6; ++j) {
      grid.at({0, 0, i, j}) = static_cast<float>(i);
      grid.at({0, 1, i, j}) = static_cast<float>(j);
    }
  EXPECT_EQ(sample(x, grid), x);
}

TEST(BilinearSample, MidpointAveragesAndOutOfRangeClamps) {
  const Tensor x(Shape{1, 1, 1, 2}, std::vector<float>{0.0f, 10.0f});
  EXPECT_FLOAT_EQ(sample(x, Tensor(Shape{1, 2, 1, 1}, std::vector<float>{0.0f, 0.5f}))[0], 5.0f);
  const Tensor img = random_tensor(Shape{1, 1, 4, 4}, 7);
  EXPECT_EQ(sample(img, Tensor(Shape{1, 2, 1, 1}, std::vector<float>{-3.7f, 2.0f}))[0],
            sample(img, Tensor(Shape{1, 2, 1, 1}, std::vector<float>{0.0f, 2.0f}))[0]);
  EXPECT_EQ(sample(img, Tensor(Shape{1, 2, 1, 1}, std::vector<float>{1.0f, -3.7f}))[0],
            sample(img, Tensor(Shape{1, 2, 1, 1}, std::vector<float>{1.0f, 0.0f}))[0]);
}

TEST(BilinearSample, ClampedCoordinatesHaveZeroGradient) {
  Tape<float> tape;
  auto x = tape.constant(random_tensor(Shape{1, 1, 4, 4}, 8));
  auto c = tape.leaf(Tensor(Shape{1, 2, 1, 1}, std::vector<float>{-2.0f, 5.5f}));
  auto g = tape.backward(ops::sum(ops::bilinear_sample(x, c)));
  EXPECT_EQ(g.of(c).vec(), (std::vector<float>{0.0f, 0.0f}));
}

TEST(BilinearSample, NonFiniteCoordinatesPropagateNan) {
  Tape<float> tape;
  auto x = tape.leaf(random_tensor(Shape{1, 2, 3, 3}, 9));
  auto c = tape.leaf(Tensor(Shape{1, 2, 1, 2}, std::vector<float>{1.0f, std::nanf(""), 1.0f, 1.5f}));
  auto y = ops::bilinear_sample(x, c);
  EXPECT_TRUE(std::isfinite(y.value().at({0, 1, 0, 0})));
  EXPECT_TRUE(std::isnan(y.value().at({0, 0, 0, 1})));
  EXPECT_TRUE(std::isnan(y.value().at({0, 1, 0, 1})));
  // Only the finite sample receives gradient.
  auto g = tape.backward(ops::sum(ops::mul(y, tape.constant(Tensor(Shape{1, 2, 1, 2}, std::vector<float>{1, 0, 1, 0})))));
  EXPECT_EQ(g.of(c).at({0, 1, 0, 1}), 0.0f);
  double total = 0;
  const Tensor gx = g.of(x);
  for (float v : gx.data()) total += v;
  EXPECT_NEAR(total, 2.0, 1e-6);
}

TEST(LayerNorm, ConstantTokenNormalizesToZero) {
  Tape<float> tape;
  auto y = ops::layer_norm(tape.constant(Tensor(Shape{2, 6}, 3.5f)), 1, tape.constant(Tensor(Shape{6}, 1.0f)),
                           tape.constant(Tensor(Shape{6}, 0.0f)), 1e-5f);
  for (float v : y.value().data()) EXPECT_EQ(v, 0.0f);
}

TEST(LayerNorm, StandardizedInputPassesThroughIdentityAffine) {
  Tape<float> tape;
  const Tensor x(Shape{1, 4}, std::vector<float>{-1.0f, 1.0f, -1.0f, 1.0f});
  auto y = ops::layer_norm(tape.constant(x), 1, tape.constant(Tensor(Shape{4}, 1.0f)),
                           tape.constant(Tensor(Shape{4}, 0.0f)), 1e-5f);
  EXPECT_LT(max_abs_diff(y.value(), x), 1e-5);
}

TEST(LayerNorm, PerTokenMomentsAfterNormalization) {
  Tape<float> tape;
  auto y = ops::layer_norm(tape.constant(random_tensor(Shape{2, 8, 3, 3}, 9, -4, 4)), 1,
                           tape.constant(Tensor(Shape{8}, 1.0f)), tape.constant(Tensor(Shape{8}, 0.0f)), 1e-6f);
  const Tensor& v = y.value();
  for (Index n = 0; n < 2; ++n)
    for (Index p = 0; p < 9; ++p) {
      double m = 0, s = 0;
      for (Index c = 0; c < 8; ++c) m += v[(n * 8 + c) * 9 + p];
      m /= 8;
      for (Index c = 0; c < 8; ++c) s += std::pow(v[(n * 8 + c) * 9 + p] - m, 2);
      EXPECT_NEAR(m, 0.0, 1e-5);
      EXPECT_NEAR(s / 8, 1.0, 1e-5);
    }
}

TEST(BatchNorm, EvalModeUsesRunningStatistics) {
  Tape<float> tape;
  Tensor rm(Shape{1}, 1.0f), rv(Shape{1}, 4.0f);
  const Tensor x(Shape{2, 1, 1, 1}, std::vector<float>{3.0f, -1.0f});
  auto y = ops::batch_norm(tape.constant(x), tape.constant(Tensor(Shape{1}, 1.0f)),
                           tape.constant(Tensor(Shape{1}, 0.0f)), rm, rv, false, 0.1f, 1e-5f);
  // (3 - 1) / sqrt(4 + 1e-5) and (-1 - 1) / sqrt(4 + 1e-5)
  EXPECT_NEAR(y.value()[0], 0.99999875, 1e-6);
  EXPECT_NEAR(y.value()[1], -0.99999875, 1e-6);
  EXPECT_EQ(rm[0], 1.0f);
  EXPECT_EQ(rv[0], 4.0f);
}

TEST(BatchNorm, TrainingUsesBatchStatisticsAndRejectsSingleSample) {
  Tape<float> tape;
  Tensor rm(Shape{1}, 0.0f), rv(Shape{1}, 1.0f);
  const Tensor x(Shape{2, 1, 1, 1}, std::vector<float>{3.0f, -1.0f});
  auto gamma = tape.constant(Tensor(Shape{1}, 1.0f));
  auto beta = tape.constant(Tensor(Shape{1}, 0.0f));
  auto y = ops::batch_norm(tape.constant(x), gamma, beta, rm, rv, true, 0.1f, 1e-5f);
  EXPECT_NEAR(y.value()[0], 2.0 / std::sqrt(4.0 + 1e-5), 1e-6);
  EXPECT_NEAR(rm[0], 0.1, 1e-7);
  EXPECT_NEAR(rv[0], 0.9 + 0.1 * 8.0, 1e-6);
  EXPECT_THROW(ops::batch_norm(tape.constant(Tensor(Shape{1, 1, 2, 2})), gamma, beta, rm, rv, true, 0.1f, 1e-5f),
               std::invalid_argument);
}

TEST(Backward, SumGivesOnes) {
  Tape<float> tape;
  auto x = tape.leaf(random_tensor(Shape{2, 3}, 11));
  auto g = tape.backward(ops::sum(x));
  for (float v : g.of(x).vec()) EXPECT_EQ(v, 1.0f);
}

TEST(Backward, SumOfSoftmaxHasZeroGradient) {
  Tape<float> tape;
  auto x = tape.leaf(random_tensor(Shape{6}, 12, -3, 3));
  auto g = tape.backward(ops::sum(ops::softmax(x, 0)));
  for (float v : g.of(x).vec()) EXPECT_NEAR(v, 0.0f, 1e-7);
}

TEST(Backward, ConvSoftmaxChainMatchesFiniteDifferences) {
  const Tensor x0 = random_tensor(Shape{1, 1, 2, 3}, 13);
  const Tensor w = random_tensor(Shape{2, 1, 3, 3}, 14);
  const Tensor weights = random_tensor(Shape{1, 2, 2, 3}, 15);
  auto f = [&](Tape<float>& tape, Var<float> x) {
    auto y = ops::softmax(ops::conv2d(x, tape.constant(w), std::nullopt, ConvSpec{}), 1);
    return ops::sum(ops::mul(y, tape.constant(weights)));
  };
  Tape<float> tape;
  auto x = tape.leaf(x0);
  const Tensor analytic = tape.backward(f(tape, x)).of(x);
  const Tensor numeric = finite_diff_grad<float>(
      [&](const Tensor& v) {
        Tape<float> t;
        return static_cast<double>(f(t, t.constant(v)).value().item());
      },
      x0, 1e-2f);
  for (Index i = 0; i < 6; ++i) EXPECT_NEAR(analytic[i], numeric[i], 1e-2 * std::max(1.0f, std::abs(numeric[i])));
}

TEST(Backward, UnreachableLeafGetsExactZeroAndNonScalarLossRejected) {
  Tape<float> tape;
  auto used = tape.leaf(Tensor(Shape{3}, 2.0f));
  auto unused = tape.leaf(Tensor(Shape{2, 2}, 5.0f));
  auto g = tape.backward(ops::sum(ops::mul(used, used)));
  EXPECT_EQ(g.of(unused), Tensor(Shape{2, 2}));
  EXPECT_EQ(g.of(used).vec(), (std::vector<float>{4.0f, 4.0f, 4.0f}));
  EXPECT_THROW(tape.backward(used), ShapeError);
}

TEST(FiniteDiff, QuadraticIsExactAndConstantIsZero) {
  const Tensor x(Shape{3}, std::vector<float>{1, 2, 3});
  const Tensor g = finite_diff_grad<float>(
      [](const Tensor& v) {
        double s = 0;
        for (float e : v.data()) s += static_cast<double>(e) * e;
        return s;
      },
      x, 1e-3f);
  EXPECT_NEAR(g[0], 2.0, 1e-3);
  EXPECT_NEAR(g[1], 4.0, 1e-3);
  EXPECT_NEAR(g[2], 6.0, 1e-3);
  const Tensor z = finite_diff_grad<float>([](const Tensor&) { return 4.2; }, x, 1e-3f);
  for (float v : z.data()) EXPECT_EQ(v, 0.0f);
}

TEST(Determinism, RepeatedConvolutionIsBitIdentical) {
  const Tensor x = random_tensor(Shape{2, 6, 9, 9}, 16);
  const Tensor w = random_tensor(Shape{6, 3, 3, 3}, 17);
  ConvSpec s;
  s.groups = 2;
  s.dilation = 2;
  EXPECT_EQ(run_conv(x, w, std::nullopt, s), run_conv(x, w, std::nullopt, s));
}

}  // namespace
}  // namespace saip
