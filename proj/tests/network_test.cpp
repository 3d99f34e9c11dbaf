#include <gtest/gtest.h>

#include <cmath>

#include "saip/datalab/scene.hpp"
#include "saip/network.hpp"
#include "test_util.hpp"

namespace saip {
namespace {

using network::ModelConfig;
using testing::random_tensor;

ModelConfig toy_config() {
  ModelConfig c;
  c.encoder.channels = 12;
  c.encoder.image_height = 32;
  c.encoder.image_width = 32;
  c.encoder.blocks = {1, 1, 1, 1};
  c.stem = {3, 4, 6};
  c.classes = 3;
  return c;
}

double loss_value(const Tensor& logits, const std::vector<LabelMap>& labels, double lambda) {
  Tape<double> tape;
  return network::hybrid_loss(tape.constant(logits.cast<double>()), labels, lambda).value().item();
}

std::vector<LabelMap> random_labels(Index n, Index h, Index w, int classes, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<LabelMap> out;
  for (Index b = 0; b < n; ++b) {
    LabelMap m(h, w);
    for (auto& v : m.values) v = static_cast<std::int32_t>(rng() % static_cast<std::uint64_t>(classes));
    out.push_back(m);
  }
  return out;
}

// Independent single-term references in double precision.
struct Probabilities {
  std::vector<double> p;
  Index n, c, plane;
  double at(Index b, Index k, Index i) const { return p[static_cast<std::size_t>((b * c + k) * plane + i)]; }
};

Probabilities softmax_reference(const Tensor& logits) {
  Probabilities r{{}, logits.dim(0), logits.dim(1), logits.dim(2) * logits.dim(3)};
  r.p.resize(static_cast<std::size_t>(logits.numel()));
  for (Index b = 0; b < r.n; ++b)
    for (Index i = 0; i < r.plane; ++i) {
      double z = 0;
      for (Index k = 0; k < r.c; ++k) z += std::exp(static_cast<double>(logits[(b * r.c + k) * r.plane + i]));
      for (Index k = 0; k < r.c; ++k)
        r.p[static_cast<std::size_t>((b * r.c + k) * r.plane + i)] = std::exp(static_cast<double>(logits[(b * r.c + k) * r.plane + i])) / z;
    }
  return r;
}

double cross_entropy_reference(const Tensor& logits, const std::vector<LabelMap>& labels) {
  const auto p = softmax_reference(logits);
  double total = 0;
  for (Index b = 0; b < p.n; ++b)
    for (Index i = 0; i < p.plane; ++i) total -= std::log(p.at(b, labels[static_cast<std::size_t>(b)].values[static_cast<std::size_t>(i)], i));
  return total / static_cast<double>(p.n * p.plane);
}

double dice_reference(const Tensor& logits, const std::vector<LabelMap>& labels) {
  const auto p = softmax_reference(logits);
  double overlap = 0, sum_p = 0, sum_y = 0;
  for (Index b = 0; b < p.n; ++b)
    for (Index i = 0; i < p.plane; ++i)
      for (Index k = 0; k < p.c; ++k) {
        const double y = labels[static_cast<std::size_t>(b)].values[static_cast<std::size_t>(i)] == k ? 1.0 : 0.0;
        overlap += y * p.at(b, k, i);
        sum_p += p.at(b, k, i);
        sum_y += y;
      }
  return 1.0 - 2.0 * overlap / (sum_y + sum_p);
}

TEST(HybridLoss, PerfectPredictionIsZero) {
  const auto labels = random_labels(2, 4, 5, 3, 1);
  Tensor logits(Shape{2, 3, 4, 5}, -40.0f);
  for (Index b = 0; b < 2; ++b)
    for (Index i = 0; i < 20; ++i) logits[(b * 3 + labels[static_cast<std::size_t>(b)].values[static_cast<std::size_t>(i)]) * 20 + i] = 40.0f;
  for (double lambda : {0.0, 0.5, 1.0}) {
    Tape<float> tape;
    EXPECT_NEAR(network::hybrid_loss(tape.constant(logits), labels, lambda).value().item(), 0.0, 1e-6);
  }
}

TEST(HybridLoss, UniformPredictionClosedForm) {
  Tape<float> tape;
  const auto labels = random_labels(2, 6, 6, 2, 2);
  const double got = network::hybrid_loss(tape.constant(Tensor(Shape{2, 2, 6, 6})), labels, 0.5).value().item();
  EXPECT_NEAR(got, 0.5 * std::log(2.0) + 0.25, 1e-4);
  EXPECT_NEAR(got, 0.5966, 1e-4);
  for (int classes : {3, 5})
    for (double lambda : {0.2, 0.7}) {
      const auto l = random_labels(1, 4, 4, classes, 3);
      EXPECT_NEAR(loss_value(Tensor(Shape{1, classes, 4, 4}), l, lambda),
                  lambda * std::log(classes) + (1 - lambda) * (1 - 1.0 / classes), 1e-9);
    }
}

TEST(HybridLoss, LambdaEndpointsMatchSingleTermReferences) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto logits = random_tensor(Shape{2, 4, 5, 3}, seed, -4, 4);
    const auto labels = random_labels(2, 5, 3, 4, seed + 9);
    Tape<float> tape;
    EXPECT_NEAR(network::hybrid_loss(tape.constant(logits), labels, 1.0).value().item(), cross_entropy_reference(logits, labels), 1e-6);
    EXPECT_NEAR(network::hybrid_loss(tape.constant(logits), labels, 0.0).value().item(), dice_reference(logits, labels), 1e-6);
    const double mixed = 0.5 * cross_entropy_reference(logits, labels) + 0.5 * dice_reference(logits, labels);
    EXPECT_NEAR(network::hybrid_loss(tape.constant(logits), labels, 0.5).value().item(), mixed, 1e-6);
  }
}

TEST(HybridLoss, NonNegativeOnRandomInputs) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    const auto logits = random_tensor(Shape{1, 3, 4, 4}, seed, -8, 8);
    EXPECT_GE(loss_value(logits, random_labels(1, 4, 4, 3, seed), 0.5), 0.0);
  }
}

TEST(HybridLoss, OutOfRangeLabelNamesThePixel) {
  Tape<float> tape;
  auto labels = random_labels(2, 4, 4, 3, 5);
  labels[1].at(1, 2) = 3;
  try {
    network::hybrid_loss(tape.constant(Tensor(Shape{2, 3, 4, 4})), labels, 0.5);
    FAIL() << "expected std::out_of_range";
  } catch (const std::out_of_range& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1 pixel (1, 2)"), std::string::npos) << e.what();
  }
}

TEST(LrSchedule, WarmupPeakAndEndpoints) {
  const network::Schedule s;
  EXPECT_EQ(s.base_lr, 6e-5);
  EXPECT_EQ(network::lr_schedule(0, s), 0.0);
  EXPECT_EQ(network::lr_schedule(s.warmup_steps, s), 6e-5);
  EXPECT_DOUBLE_EQ(network::lr_schedule(50, s), 3e-5);
  EXPECT_DOUBLE_EQ(network::lr_schedule(1050, s), 3e-5);
  EXPECT_EQ(network::lr_schedule(s.total_steps, s), 0.0);
  EXPECT_EQ(network::lr_schedule(s.total_steps + 7, s), 0.0);
  double previous = network::lr_schedule(s.warmup_steps, s);
  for (Index step = s.warmup_steps + 1; step <= s.total_steps; ++step) {
    const double lr = network::lr_schedule(step, s);
    ASSERT_LT(lr, previous);
    previous = lr;
  }
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  auto p = random_tensor(Shape{10}, 1);
  const auto before = p;
  Tensor g(Shape{10}), m(Shape{10}), v(Shape{10});
  for (Index step = 0; step < 5; ++step) network::adam_update(p.data(), g.data(), m.data(), v.data(), 1e-3, step, {});
  EXPECT_EQ(p, before);
}

TEST(Adam, FirstStepMovesEachWeightByTheLearningRate) {
  auto p = random_tensor(Shape{6}, 2);
  const auto before = p;
  const auto g = random_tensor(Shape{6}, 3, -2, 2);
  Tensor m(Shape{6}), v(Shape{6});
  network::adam_update(p.data(), g.data(), m.data(), v.data(), 1e-2, 0, {});
  for (Index i = 0; i < 6; ++i) EXPECT_NEAR(p[i], before[i] - 1e-2 * (g[i] > 0 ? 1 : -1), 1e-6);
}

TEST(Model, DefaultConfigLogitShape) {
  const ModelConfig config;
  EXPECT_EQ(config.lambda, 0.5);
  EXPECT_EQ(config.cdc.branches(), 3);
  const auto state = network::initialize_model<float>(config, 1);
  const auto logits = network::predict(config, state, random_tensor(Shape{1, 3, 64, 64}, 2, 0, 255));
  EXPECT_EQ(logits.shape(), (Shape{1, 4, 64, 64}));
  EXPECT_TRUE(logits.all_finite());
}

TEST(Model, IdenticalImagesGiveIdenticalLogits) {
  const auto config = toy_config();
  const auto state = network::initialize_model<float>(config, 3);
  const auto one = random_tensor(Shape{1, 3, 32, 32}, 4, 0, 255);
  Tensor pair(Shape{2, 3, 32, 32});
  for (Index i = 0; i < one.numel(); ++i) pair[i] = pair[one.numel() + i] = one[i];
  const auto logits = network::predict(config, state, pair);
  const Index half = logits.numel() / 2;
  for (Index i = 0; i < half; ++i) ASSERT_EQ(logits[i], logits[half + i]);
}

TEST(Model, SoftmaxOfLogitsSumsToOne) {
  const auto config = toy_config();
  const auto state = network::initialize_model<float>(config, 5);
  Tape<float> tape;
  const auto logits = network::predict(config, state, random_tensor(Shape{1, 3, 32, 32}, 6, 0, 255));
  const auto p = ops::softmax(tape.constant(logits), 1).value();
  for (Index i = 0; i < 32 * 32; ++i) {
    double s = 0;
    for (Index k = 0; k < 3; ++k) s += p[k * 1024 + i];
    ASSERT_NEAR(s, 1.0, 1e-5);
  }
}

TEST(Model, EveryAblationBuildsAndRuns) {
  for (const char* spec : {"saff", "cdc", "stem", "encoder", "stem,cdc", "stem,cdc,saff", "saff,cdc,stem,encoder"}) {
    auto config = toy_config();
    config.ablation = network::Ablation::parse(spec);
    const auto state = network::initialize_model<float>(config, 7);
    const auto logits = network::predict(config, state, random_tensor(Shape{1, 3, 32, 32}, 8, 0, 255));
    EXPECT_EQ(logits.shape(), (Shape{1, 3, 32, 32})) << spec;
  }
}

TEST(Ablation, ParsePrintRoundTripAndRejection) {
  const auto a = network::Ablation::parse("stem,saff");
  EXPECT_EQ(a.to_string(), "saff,stem");
  EXPECT_EQ(network::Ablation::parse(a.to_string()), a);
  EXPECT_FALSE(network::Ablation::parse("").any());
  EXPECT_THROW(network::Ablation::parse("saff,decoder"), std::invalid_argument);
}

TEST(ModelConfig, RejectsInvalidSettings) {
  auto c = toy_config();
  c.lambda = 1.5;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy_config();
  c.classes = 1;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = toy_config();
  c.encoder.image_height = 48;
  EXPECT_THROW(c.validate(), ShapeError);
}

TEST(Training, OverfitsOneBatchWithinFiftySteps) {
  const ModelConfig config;
  const network::Schedule schedule{1e-3, 5, 50, 1.0};
  for (std::uint64_t seed : {1, 2, 3}) {
    const std::uint64_t scenes[] = {seed * 100, seed * 100 + 1, seed * 100 + 2, seed * 100 + 3};
    const auto batch = datalab::make_batch(scenes, {64, 64, 4});
    auto state = network::make_train_state(config, seed);
    double first = 0, last = 0;
    for (int step = 0; step < 50; ++step) {
      last = network::train_step(config, state, batch.images, batch.labels, schedule).loss;
      if (step == 0) first = last;
    }
    EXPECT_EQ(state.step, 50);
    EXPECT_LT(last, 0.7 * first) << "seed " << seed << ": " << first << " -> " << last;
  }
}

TEST(Training, StepsAreBitwiseReproducible) {
  const auto config = toy_config();
  const network::Schedule schedule{1e-3, 2, 10, 1.0};
  const std::uint64_t scenes[] = {5, 6};
  const auto batch = datalab::make_batch(scenes, {32, 32, 3});
  auto a = network::make_train_state(config, 11), b = network::make_train_state(config, 11);
  for (int step = 0; step < 3; ++step) {
    EXPECT_EQ(network::train_step(config, a, batch.images, batch.labels, schedule).loss,
              network::train_step(config, b, batch.images, batch.labels, schedule).loss);
  }
  EXPECT_TRUE(a.model.params == b.model.params);
  EXPECT_TRUE(a.adam_v == b.adam_v);
  EXPECT_TRUE(a.model.buffers == b.model.buffers);
}

TEST(Training, NonFiniteLossReportsTheStep) {
  const auto config = toy_config();
  auto state = network::make_train_state(config, 12);
  state.step = 7;
  auto& w = state.model.params.get("classifier.weight");
  w[0] = std::numeric_limits<float>::quiet_NaN();
  const std::uint64_t scenes[] = {1, 2};
  const auto batch = datalab::make_batch(scenes, {32, 32, 3});
  try {
    network::train_step(config, state, batch.images, batch.labels, {});
    FAIL() << "expected NonFiniteLoss";
  } catch (const network::NonFiniteLoss& e) {
    EXPECT_EQ(e.step(), 7);
  }
}

}  // namespace
}  // namespace saip
