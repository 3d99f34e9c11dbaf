#include <gtest/gtest.h>

#include "saip/cdc.hpp"
#include "saip/layers.hpp"
#include "test_util.hpp"

namespace saip {
namespace {

using testing::Harness;
using testing::max_abs_diff;
using testing::random_tensor;

TEST(CdcConfig, DefaultHasThreeNestedBranches) {
  const cdc::CdcConfig config;
  EXPECT_EQ(config.branches(), 3);
  EXPECT_EQ(config.receptive_fields(), (std::vector<int>{3, 5, 7}));
}

TEST(CdcConfig, RejectsIndivisibleChannelsNamingBoth) {
  Harness<float> h;
  try {
    cdc::cdc_forward(h.ctx, "cdc", h.input(Tensor(Shape{1, 10, 8, 8})), {});
    FAIL() << "expected a ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("C=10"), std::string::npos) << msg;
    EXPECT_NE(msg.find("D=3"), std::string::npos) << msg;
  }
}

TEST(CdcConfig, RejectsNonIncreasingReceptiveFields) {
  cdc::CdcConfig config;
  config.dilations = {1, 3, 2};
  EXPECT_THROW(config.validate(6), std::invalid_argument);
  config.dilations = {1, 1};
  EXPECT_THROW(config.validate(6), std::invalid_argument);
  config.dilations = {1, 2};
  config.kernel = 4;
  EXPECT_THROW(config.validate(6), std::invalid_argument);
}

TEST(Cdc, ImpulseSupportGrowsWithDilation) {
  const Index n = 15;
  Tensor impulse(Shape{1, 3, n, n});
  for (Index c = 0; c < 3; ++c) impulse.at({0, c, n / 2, n / 2}) = 1.0f;

  Harness<float> h;
  const cdc::CdcConfig config;
  auto x = h.input(impulse);
  cdc::branch_convs(h.ctx, "cdc", cdc::split_branches(h.ctx, "cdc", x, config), config);
  auto mixer = Tensor(Shape{3, 3, 1, 1});
  for (Index c = 0; c < 3; ++c) mixer.at({c, c, 0, 0}) = 1.0f;
  h.params.get("cdc.mix.weight") = mixer;
  for (int i = 0; i < 3; ++i) {
    auto& w = h.params.get("cdc.branch" + std::to_string(i) + ".weight");
    for (auto& v : w.data()) v = 1.0f;
  }

  Harness<float> run(false, 1, h.params, h.buffers);
  const auto out = cdc::branch_convs(run.ctx, "cdc", cdc::split_branches(run.ctx, "cdc", run.input(impulse), config), config).value();
  const auto r = config.receptive_fields();
  for (Index c = 0; c < 3; ++c) {
    Index rows_min = n, rows_max = -1, count = 0;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j)
        if (out.at({0, c, i, j}) != 0.0f) {
          ++count;
          rows_min = std::min(rows_min, i);
          rows_max = std::max(rows_max, i);
        }
    const Index extent = rows_max - rows_min + 1;
    EXPECT_EQ(extent, r[static_cast<std::size_t>(c)]) << "branch " << c;
    EXPECT_EQ(count, 9) << "branch " << c;
  }
}

TEST(Cdc, TwelveChannelsSplitIntoFourPerBranch) {
  Harness<float> h;
  const cdc::CdcConfig config;
  auto x = h.input(random_tensor(Shape{2, 12, 16, 16}, 1));
  const auto parts = cdc::split_branches(h.ctx, "cdc", x, config);
  ASSERT_EQ(parts.size(), 3u);
  for (const auto& p : parts) EXPECT_EQ(p.shape(), (Shape{2, 4, 16, 16}));
  EXPECT_EQ(cdc::cdc_forward(h.ctx, "cdc", x, config).shape(), (Shape{2, 12, 16, 16}));
  EXPECT_EQ(h.params.get("cdc.branch1.weight").shape(), (Shape{4, 4, 3, 3}));
}

// Running statistics and affine terms away from their defaults.
void perturb_norms(ParamSet<float>& params, ParamSet<float>& buffers) {
  std::uint64_t seed = 100;
  for (const auto& name : params.names()) {
    if (name.ends_with(".gamma")) params.get(name) = random_tensor(params.get(name).shape(), ++seed, 0.5, 1.5);
    if (name.ends_with(".beta") || name.ends_with(".bias")) params.get(name) = random_tensor(params.get(name).shape(), ++seed, -0.3, 0.3);
  }
  for (const auto& name : buffers.names()) {
    const bool var = name.ends_with("running_var");
    buffers.get(name) = random_tensor(buffers.get(name).shape(), ++seed, var ? 0.5 : -0.2, var ? 2.0 : 0.2);
  }
}

TEST(Cdc, PermutingTheBatchPermutesOutputs) {
  const Shape shape{4, 6, 8, 8};
  const auto x = random_tensor(shape, 3);
  Tensor permuted(shape);
  const Index order[4] = {2, 0, 3, 1}, stride = 6 * 8 * 8;
  for (Index b = 0; b < 4; ++b)
    for (Index i = 0; i < stride; ++i) permuted[b * stride + i] = x[order[b] * stride + i];

  for (bool training : {false, true}) {
    Harness<float> build(training, 4);
    cdc::cdc_forward(build.ctx, "cdc", build.input(x), {});
    perturb_norms(build.params, build.buffers);
    Harness<float> a(training, 4, build.params, build.buffers), b(training, 4, build.params, build.buffers);
    const auto ya = cdc::cdc_forward(a.ctx, "cdc", a.input(x), {}).value();
    const auto yb = cdc::cdc_forward(b.ctx, "cdc", b.input(permuted), {}).value();
    for (Index bi = 0; bi < 4; ++bi)
      for (Index i = 0; i < stride; ++i)
        ASSERT_NEAR(yb[bi * stride + i], ya[order[bi] * stride + i], 1e-5f) << "training=" << training;
  }
}

TEST(Cdc, SingleBranchEqualsPlainConvStack) {
  cdc::CdcConfig config;
  config.dilations = {1};
  const auto x = random_tensor(Shape{2, 5, 9, 7}, 8);
  Harness<float> build(false, 6);
  cdc::cdc_forward(build.ctx, "cdc", build.input(x), config);
  perturb_norms(build.params, build.buffers);
  auto& p = build.params;
  auto& buf = build.buffers;

  Harness<float> h(false, 6, p, buf);
  const auto got = cdc::cdc_forward(h.ctx, "cdc", h.input(x), config).value();

  Tape<float> tape;
  auto c = [&](const std::string& n) { return tape.constant(p.get(n)); };
  auto conv = [&](Var<float> in, const std::string& n, int k, bool bias) {
    ops::ConvSpec spec;
    spec.kernel = k;
    return ops::conv2d(in, c(n + ".weight"), bias ? std::optional(c(n + ".bias")) : std::nullopt, spec);
  };
  auto bn = [&](Var<float> in, const std::string& n) {
    auto mean = buf.get(n + ".running_mean"), var = buf.get(n + ".running_var");
    return ops::batch_norm(in, c(n + ".gamma"), c(n + ".beta"), mean, var, false, 0.1f, 1e-5f);
  };
  auto y = conv(tape.constant(x), "cdc.mix", 1, true);
  y = conv(y, "cdc.branch0", 3, true);
  y = ops::relu(bn(conv(y, "cdc.merge.conv1", 1, false), "cdc.merge.bn1"));
  y = ops::relu(bn(conv(y, "cdc.merge.conv2", 3, false), "cdc.merge.bn2"));
  EXPECT_LT(max_abs_diff(got, y.value()), 1e-6);
}

}  // namespace
}  // namespace saip
