#include <gtest/gtest.h>

#include <cstring>
#include <fstream>
#include <iterator>

#include "saip/checkpoint.hpp"
#include "saip/datalab/scene.hpp"
#include "test_util.hpp"

namespace saip {
namespace {

namespace fs = std::filesystem;
using checkpoint::CheckpointError;
using checkpoint::ErrorCode;
using testing::random_tensor;

network::ModelConfig toy_config(int classes) {
  network::ModelConfig c;
  c.encoder.channels = 12;
  c.encoder.image_height = 32;
  c.encoder.image_width = 32;
  c.encoder.blocks = {1, 1, 1, 1};
  c.stem = {3, 4, 6};
  c.classes = classes;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void spit(const fs::path& p, const std::string& bytes) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

class CheckpointTest : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("saip_ckpt_" + std::to_string(::getpid()) + "_" +
                                        ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  // A trained toy state so that every tensor group holds non-trivial values.
  static network::TrainState trained(int classes) {
    const auto config = toy_config(classes);
    auto state = network::make_train_state(config, 3);
    const std::uint64_t scenes[] = {1, 2};
    const auto batch = datalab::make_batch(scenes, {32, 32, classes});
    for (int i = 0; i < 2; ++i) network::train_step(config, state, batch.images, batch.labels, {1e-3, 1, 10, 1.0});
    return state;
  }

  static network::TrainState tiny() {
    network::TrainState s;
    s.model.params.add("a.weight", random_tensor(Shape{2, 3}, 1));
    s.model.params.add("a.bias", random_tensor(Shape{3}, 2));
    s.model.buffers.add("bn.running_var", random_tensor(Shape{3}, 3));
    s.adam_m = s.model.params.zeros_like();
    s.adam_v = s.model.params.zeros_like();
    s.step = 17;
    return s;
  }

  static ErrorCode load_error(const fs::path& p) {
    try {
      checkpoint::load(p);
    } catch (const CheckpointError& e) {
      return e.code();
    }
    ADD_FAILURE() << "load succeeded";
    return ErrorCode::io;
  }

  fs::path dir_;
};

TEST_F(CheckpointTest, SaveLoadSaveIsByteIdentical) {
  const auto state = trained(3);
  checkpoint::save(state, dir_ / "a.ckpt");
  const auto loaded = checkpoint::load(dir_ / "a.ckpt");
  checkpoint::save(loaded, dir_ / "b.ckpt");
  EXPECT_EQ(slurp(dir_ / "a.ckpt"), slurp(dir_ / "b.ckpt"));

  EXPECT_TRUE(loaded.model.params == state.model.params);
  EXPECT_TRUE(loaded.model.buffers == state.model.buffers);
  EXPECT_TRUE(loaded.adam_m == state.adam_m);
  EXPECT_TRUE(loaded.adam_v == state.adam_v);
  EXPECT_EQ(loaded.step, state.step);
}

TEST_F(CheckpointTest, HeaderLayout) {
  const auto state = tiny();
  checkpoint::save(state, dir_ / "t.ckpt");
  const auto bytes = slurp(dir_ / "t.ckpt");
  ASSERT_GE(bytes.size(), 12u);
  EXPECT_EQ(bytes.substr(0, 8), "SAIPNET1");
  std::uint32_t length = 0;
  std::memcpy(&length, bytes.data() + 8, 4);
  const auto manifest = bytes.substr(12, length);
  EXPECT_EQ(manifest.substr(0, manifest.find('\n')), "params/a.weight 2x3 f32 0");
  EXPECT_NE(manifest.find("params/a.bias 3 f32 24\n"), std::string::npos);
  EXPECT_EQ(manifest.rfind("crc32 ", manifest.size() - 15), manifest.size() - 15);
  // 2x3 + 3 params, 3 buffer values, two moment sets, one step value.
  EXPECT_EQ(bytes.size(), 12 + length + 4u * (9 + 3 + 18 + 1));
  float first = 0;
  std::memcpy(&first, bytes.data() + 12 + length, 4);
  EXPECT_EQ(first, state.model.params.get("a.weight")[0]);
}

TEST_F(CheckpointTest, AnyManifestByteCorruptionIsAParseError) {
  checkpoint::save(tiny(), dir_ / "t.ckpt");
  const auto bytes = slurp(dir_ / "t.ckpt");
  std::uint32_t length = 0;
  std::memcpy(&length, bytes.data() + 8, 4);
  for (std::uint32_t i = 0; i < length; ++i) {
    for (unsigned char flip : {0x01, 0x20, 0x80}) {
      auto bad = bytes;
      bad[12 + i] = static_cast<char>(bad[12 + i] ^ flip);
      spit(dir_ / "bad.ckpt", bad);
      ASSERT_EQ(load_error(dir_ / "bad.ckpt"), ErrorCode::manifest_parse) << "byte " << i << " flip " << int(flip);
    }
  }
}

TEST_F(CheckpointTest, ClassCountMismatchNamesTheClassifier) {
  checkpoint::save(trained(4), dir_ / "four.ckpt");
  const auto expected = network::make_train_state(toy_config(3), 1);
  try {
    checkpoint::load_compatible(dir_ / "four.ckpt", expected);
    FAIL() << "expected a shape mismatch";
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), ErrorCode::shape_mismatch);
    EXPECT_EQ(e.tensor(), "params/classifier.weight");
    EXPECT_NE(std::string(e.what()).find("params/classifier.weight"), std::string::npos);
  }
  EXPECT_NO_THROW(checkpoint::load_compatible(dir_ / "four.ckpt", network::make_train_state(toy_config(4), 1)));
}

TEST_F(CheckpointTest, UnknownAndMissingTensorsAreDistinct) {
  auto extra = tiny();
  extra.model.params.add("z.weight", Tensor(Shape{1}));
  checkpoint::save(extra, dir_ / "extra.ckpt");
  try {
    checkpoint::load_compatible(dir_ / "extra.ckpt", tiny());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), ErrorCode::unknown_tensor);
    EXPECT_EQ(e.tensor(), "params/z.weight");
  }
  try {
    checkpoint::load_compatible(dir_ / "extra.ckpt", [] {
      auto s = tiny();
      s.model.params.add("z.weight", Tensor(Shape{1}));
      s.model.buffers.add("y.running_mean", Tensor(Shape{1}));
      return s;
    }());
    FAIL();
  } catch (const CheckpointError& e) {
    EXPECT_EQ(e.code(), ErrorCode::missing_tensor);
    EXPECT_EQ(e.tensor(), "buffers/y.running_mean");
  }
}

TEST_F(CheckpointTest, TruncationAtEveryRegionIsDetected) {
  checkpoint::save(tiny(), dir_ / "t.ckpt");
  const auto bytes = slurp(dir_ / "t.ckpt");
  std::uint32_t length = 0;
  std::memcpy(&length, bytes.data() + 8, 4);
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{11}, std::size_t{12 + length / 2}, std::size_t{12 + length + 3},
                          bytes.size() - 1}) {
    spit(dir_ / "cut.ckpt", bytes.substr(0, cut));
    EXPECT_EQ(load_error(dir_ / "cut.ckpt"), ErrorCode::truncated) << cut;
  }
  spit(dir_ / "long.ckpt", bytes + "x");
  EXPECT_EQ(load_error(dir_ / "long.ckpt"), ErrorCode::truncated);
}

TEST_F(CheckpointTest, VersionMagicAndIoErrors) {
  checkpoint::save(tiny(), dir_ / "t.ckpt");
  auto bytes = slurp(dir_ / "t.ckpt");
  bytes[7] = '2';
  spit(dir_ / "v2.ckpt", bytes);
  EXPECT_EQ(load_error(dir_ / "v2.ckpt"), ErrorCode::version_mismatch);
  bytes[0] = 'X';
  spit(dir_ / "magic.ckpt", bytes);
  EXPECT_EQ(load_error(dir_ / "magic.ckpt"), ErrorCode::bad_magic);
  EXPECT_EQ(load_error(dir_ / "missing.ckpt"), ErrorCode::io);
}

TEST_F(CheckpointTest, SameSeedTrainingGivesIdenticalFiles) {
  checkpoint::save(trained(3), dir_ / "a.ckpt");
  checkpoint::save(trained(3), dir_ / "b.ckpt");
  EXPECT_EQ(slurp(dir_ / "a.ckpt"), slurp(dir_ / "b.ckpt"));
}

}  // namespace
}  // namespace saip
