// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>

#include <gtest/gtest.h>

#include "volpose/cli/run_config.hpp"
#include "volpose/core/hash.hpp"
#include "volpose/core/io.hpp"

namespace volpose {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           ("volpose_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

using IoTest = TempDir;

TEST_F(IoTest, VolumeRoundTripIsExact) {
  Volume v({5, 4, 3}, 1.5);
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = 0.1f * static_cast<float>(i) - 2.0f;
  write_volume(v, dir_ / "a.vol.json", {{"case_id", "a"}});
  EXPECT_TRUE(fs::exists(dir_ / "a.vol.raw"));
  const auto back = read_volume(dir_ / "a.vol.json");
  EXPECT_EQ(back.dims, v.dims);
  EXPECT_EQ(back.spacing_mm, 1.5);
  EXPECT_EQ(back.data, v.data);
  EXPECT_EQ(read_json(dir_ / "a.vol.json").at("case_id"), "a");
}

TEST_F(IoTest, TruncatedRawIsRejected) {
  Volume v({4, 4, 4}, 1.0);
  write_volume(v, dir_ / "b.vol.json");
  fs::resize_file(dir_ / "b.vol.raw", 10);
  EXPECT_THROW(read_volume(dir_ / "b.vol.json"), FormatError);
}

TEST_F(IoTest, PoseRoundTripKeepsValidityAndSpacing) {
  Pose p;
  for (int j = 0; j < kNumLandmarks; ++j) p.xyz[j] = {j * 0.1, 1.0 / (j + 1), -j * 3.0};
  p.valid[4] = false;
  write_pose(p, 0.8, dir_ / "p.pose.json");
  double sp = 0.0;
  const auto back = read_pose(dir_ / "p.pose.json", &sp);
  EXPECT_EQ(back, p);
  EXPECT_EQ(sp, 0.8);
}

TEST_F(IoTest, MalformedPoseIsRejected) {
  Pose p;
  json j = pose_to_json(p, 1.0);
  j["landmarks"][3]["index"] = j["landmarks"][2]["index"];
  EXPECT_THROW(pose_from_json(j), FormatError);
  j = pose_to_json(p, 1.0);
  j["landmarks"].erase(0);
  EXPECT_THROW(pose_from_json(j), FormatError);
  j = pose_to_json(p, 1.0);
  j["version"] = 99;
  EXPECT_THROW(pose_from_json(j), FormatError);
  std::ofstream(dir_ / "bad.json") << "{ not json";
  EXPECT_THROW(read_json(dir_ / "bad.json"), FormatError);
}

TEST(Hash, KnownDigest) {
  EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

using RunConfigTest = TempDir;

TEST_F(RunConfigTest, PartialFileMergesOverDefaults) {
  std::ofstream(dir_ / "c.json") << R"({"seed": 5, "train": {"epochs": 3}, "phantom": {"left_limb_offset": 0.2}})";
  const auto c = cli::load_run_config(dir_ / "c.json");
  EXPECT_EQ(c.seed, 5u);
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.lr, detector::TrainConfig{}.lr);
  EXPECT_EQ(c.phantom.left_limb_offset, 0.2);
  EXPECT_EQ(c.n_train, 50);
  EXPECT_EQ(c.refine.iterations, 6);
  EXPECT_EQ(c.thresholds_mm.size(), 61u);
}

TEST_F(RunConfigTest, RoundTripPreservesHash) {
  cli::RunConfig c;
  c.seed = 17;
  c.train.gcp = autodiff::CheckpointRequest{autodiff::CheckpointPolicy::every_k, 4, {}};
  const auto back = cli::from_json(cli::to_json(c));
  EXPECT_EQ(cli::config_hash(back), cli::config_hash(c));
  c.seed = 18;
  EXPECT_NE(cli::config_hash(back), cli::config_hash(c));
  EXPECT_EQ(cli::config_echo(c).at("run_config").at("sha256"), cli::config_hash(c));
}

TEST_F(RunConfigTest, BadInputsAreConfigErrors) {
  EXPECT_THROW(cli::load_run_config(dir_ / "missing.json"), cli::ConfigError);
  std::ofstream(dir_ / "v.json") << R"({"version": 7})";
  EXPECT_THROW(cli::load_run_config(dir_ / "v.json"), cli::ConfigError);
  std::ofstream(dir_ / "t.json") << R"({"train": {"epochs": "many"}})";
  EXPECT_THROW(cli::load_run_config(dir_ / "t.json"), cli::ConfigError);
  EXPECT_THROW(cli::from_json(json::array()), cli::ConfigError);
}

}  // namespace
}  // namespace volpose
