#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

#include "saip/lhpf_stem.hpp"
#include "test_util.hpp"

namespace saip {
namespace {

using testing::filled;
using testing::Harness;
using testing::random_tensor;

double hamming_1d(int n, int k) { return 0.54 - 0.46 * std::cos(2.0 * std::numbers::pi * n / (k - 1)); }

TEST(HammingWindow, ThreeTapValues) {
  const auto h = lhpf::hamming_window<double>(3);
  EXPECT_NEAR(hamming_1d(0, 3), 0.08, 1e-15);
  EXPECT_NEAR(h.at({1, 1}), 1.0, 1e-15);
  EXPECT_NEAR(h.at({0, 0}), 0.0064, 1e-15);
  EXPECT_NEAR(h.at({0, 1}), 0.08, 1e-15);
  EXPECT_NEAR(h.at({2, 2}), 0.0064, 1e-15);
}

TEST(HammingWindow, SymmetricAndPositive) {
  for (int k : {3, 5, 7}) {
    const auto h = lhpf::hamming_window<double>(k);
    for (int p = 0; p < k; ++p)
      for (int q = 0; q < k; ++q) {
        EXPECT_GT(h.at({p, q}), 0.0);
        EXPECT_DOUBLE_EQ(h.at({p, q}), h.at({q, p}));
        EXPECT_DOUBLE_EQ(h.at({p, q}), h.at({k - 1 - p, q}));
        EXPECT_NEAR(h.at({p, q}), hamming_1d(p, k) * hamming_1d(q, k), 1e-15);
      }
  }
}

TEST(HammingWindow, RejectsEvenAndTinySizes) {
  EXPECT_THROW(lhpf::hamming_window<float>(4), ShapeError);
  EXPECT_THROW(lhpf::hamming_window<float>(1), ShapeError);
}

TEST(ModulatedKernels, TapsSumToOneForArbitraryWeights) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Tape<float> tape;
    auto w = tape.constant(random_tensor(Shape{5, 1, 9}, seed, -6.0, 6.0));
    const auto k = lhpf::modulated_kernels(w, 3).value();
    ASSERT_EQ(k.shape(), (Shape{5, 1, 3, 3}));
    for (Index c = 0; c < 5; ++c) {
      double s = 0;
      for (Index t = 0; t < 9; ++t) {
        EXPECT_GT(k[c * 9 + t], 0.0f);
        s += k[c * 9 + t];
      }
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
}

TEST(LhpfLayer, ConstantInputGivesZeroEverywhere) {
  Tape<float> tape;
  Tensor x(Shape{1, 3, 7, 9});
  for (Index c = 0; c < 3; ++c)
    for (Index i = 0; i < 63; ++i) x[c * 63 + i] = 40.0f + 90.0f * static_cast<float>(c);
  auto w = tape.constant(random_tensor(Shape{3, 1, 9}, 7, -2.0, 2.0));
  const auto y = lhpf::lhpf_layer(tape.constant(x), w, 3).value();
  for (Index i = 0; i < y.numel(); ++i) EXPECT_EQ(y[i], 0.0f) << i;
}

TEST(LhpfLayer, StepEdgeMatchesDirectConvolution) {
  // Weights mirrored left-right give a kernel symmetric about the centre column.
  auto w = random_tensor<double>(Shape{1, 1, 9}, 3, -1.5, 1.5);
  for (int p = 0; p < 3; ++p) w[p * 3 + 2] = w[p * 3];
  Tensor strip(Shape{1, 1, 1, 8});
  for (Index j = 4; j < 8; ++j) strip[j] = 1.0f;

  const auto h = lhpf::hamming_window<double>(3);
  double kernel[9], total = 0, zsum = 0;
  for (int t = 0; t < 9; ++t) zsum += std::exp(w[t]);
  for (int t = 0; t < 9; ++t) total += kernel[t] = std::exp(w[t]) / zsum * h[t];
  for (double& v : kernel) v /= total;

  Tape<float> tape;
  auto wf = tape.constant(w.cast<float>());
  const auto out = lhpf::lhpf_layer(tape.constant(strip), wf, 3).value();
  for (Index j = 0; j < 8; ++j) {
    double low = 0;
    for (int p = 0; p < 3; ++p)
      for (int q = 0; q < 3; ++q) low += kernel[p * 3 + q] * strip[std::clamp<Index>(j + q - 1, 0, 7)];
    EXPECT_NEAR(out[j], strip[j] - low, 1e-6) << j;
    if (j < 3 || j > 4) {
      EXPECT_NEAR(out[j], 0.0f, 1e-7f) << j;
    }
  }
  EXPECT_GT(std::abs(out[3]), 1e-3f);
  EXPECT_NEAR(out[3], -out[4], 1e-6f);
}

TEST(LhpfLayer, RejectsWeightChannelMismatch) {
  Tape<float> tape;
  auto x = tape.constant(Tensor(Shape{1, 3, 4, 4}));
  EXPECT_THROW(lhpf::lhpf_layer(x, tape.constant(Tensor(Shape{2, 1, 9})), 3), ShapeError);
  EXPECT_THROW(lhpf::lhpf_layer(x, tape.constant(Tensor(Shape{3, 1, 8})), 3), ShapeError);
}

TEST(Stem, OutputGeometry) {
  Harness<float> h;
  const auto y = lhpf::stem_forward(h.ctx, "stem", h.input(random_tensor(Shape{1, 3, 64, 64}, 1, 0, 255)), {});
  EXPECT_EQ(y.shape(), (Shape{1, 32, 16, 16}));
}

TEST(Stem, RejectsSizesNotDivisibleByFour) {
  Harness<float> h;
  EXPECT_THROW(lhpf::stem_forward(h.ctx, "stem", h.input(Tensor(Shape{1, 3, 30, 32})), {}), ShapeError);
}

TEST(Stem, ConstantImageOutputDependsOnlyOnBiases) {
  const lhpf::StemConfig config{3, 8, 12};
  ParamSet<float> params, buffers;
  {
    Harness<float> h(false, 5);
    lhpf::stem_forward(h.ctx, "stem", h.input(Tensor(Shape{1, 3, 16, 16})), config);
    params = h.params;
    buffers = h.buffers;
  }
  auto run = [&](const ParamSet<float>& p, double level) {
    Harness<float> h(false, 5, p, buffers);
    return lhpf::stem_forward(h.ctx, "stem", h.input(filled(Shape{1, 3, 16, 16}, level)), config).value();
  };
  for (const auto& name : params.names()) {
    if (name.ends_with(".bias") || name.ends_with(".beta")) params.get(name) = random_tensor(params.get(name).shape(), 11, -1, 1);
  }
  const auto dark = run(params, 3.0), bright = run(params, 250.0);
  EXPECT_LT(testing::max_abs_diff(dark, bright), 1e-4);

  auto no_bias = params;
  for (const auto& name : no_bias.names()) {
    if (name.ends_with(".bias") || name.ends_with(".beta")) no_bias.get(name) = Tensor(no_bias.get(name).shape());
  }
  const auto zero = run(no_bias, 120.0);
  for (Index i = 0; i < zero.numel(); ++i) ASSERT_NEAR(zero[i], 0.0f, 1e-4f);
}

TEST(Stem, SuppressesSmoothFieldsRelativeToCheckerboard) {
  const Index n = 64;
  Tensor smooth(Shape{1, 3, n, n}), busy(Shape{1, 3, n, n});
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> phase(0, 2 * std::numbers::pi);
  for (Index c = 0; c < 3; ++c) {
    const double a = phase(rng), b = phase(rng);
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double v = 128 + 60 * std::sin(2 * std::numbers::pi * i / n + a) * std::cos(2 * std::numbers::pi * j / n + b);
        smooth[(c * n + i) * n + j] = static_cast<float>(v);
        busy[(c * n + i) * n + j] = static_cast<float>(v + ((i + j) % 2 ? 30 : -30));
      }
  }
  ParamSet<float> params, buffers;
  auto run = [&](const Tensor& img) {
    Harness<float> h(false, 21, params, buffers);
    auto out = lhpf::stem_forward(h.ctx, "stem", h.input(img), {}).value();
    params = h.params;
    buffers = h.buffers;
    double m = 0;
    for (float v : out.data()) m += std::abs(v);
    return m / static_cast<double>(out.numel());
  };
  const double low = run(smooth), high = run(busy);
  EXPECT_LT(10 * low, high) << low << " vs " << high;
}

}  // namespace
}  // namespace saip
