// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Drives the volpose binary through a miniature pipeline.

#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "volpose/core/io.hpp"

namespace {

namespace fs = std::filesystem;

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / "volpose_cli_test";
    fs::remove_all(root_);
    fs::create_directories(root_);
    std::ofstream(root_ / "cfg.json") << R"({
      "seed": 3, "n_train": 2, "n_test": 1,
      "phantom": {"dims": [48, 48, 48]},
      "detector": {"depth": 2, "base_channels": 4},
      "train": {"epochs": 1},
      "refine": {"iterations": 1, "k": 2}
    })";
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static int run(const std::string& args) {
    const std::string cmd = "cd '" + root_.string() + "' && VOLPOSE_LOG=quiet '" VOLPOSE_CLI_PATH "' " + args +
                            " > last.log 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  }

  static fs::path root_;
};

fs::path CliTest::root_;

TEST_F(CliTest, FullPipeline) {
  ASSERT_EQ(run("phantom-gen --config cfg.json --out data"), 0);
  EXPECT_TRUE(fs::exists(root_ / "data/manifest.json"));
  EXPECT_TRUE(fs::exists(root_ / "data/run_config.json"));
  ASSERT_EQ(run("build-library --data data --out lib.json"), 0);
  ASSERT_EQ(run("train --config cfg.json --data data --out model --gcp block_boundary"), 0);
  EXPECT_TRUE(fs::exists(root_ / "model/checkpoints/epoch_001/params.bin"));
  EXPECT_TRUE(fs::exists(root_ / "model/loss.csv"));
  ASSERT_EQ(run("infer --config cfg.json --model model --input data --out pred --dump-heatmaps"), 0);
  EXPECT_TRUE(fs::exists(root_ / "pred/test_0000.pose.json"));
  EXPECT_TRUE(fs::exists(root_ / "pred/heatmaps/test_0000/L16.vol.json"));
  ASSERT_EQ(run("refine --config cfg.json --model model --input data --library lib.json --out ref --snapshot"), 0);
  const auto refined = volpose::read_json(root_ / "ref/test_0000.pose.json");
  EXPECT_TRUE(refined.contains("refine"));
  EXPECT_TRUE(refined.at("run_config").contains("sha256"));
  EXPECT_TRUE(fs::exists(root_ / "ref/traces/test_0000.trace.json"));
  ASSERT_EQ(run("eval --config cfg.json --pred pred --gt data --out report"), 0);
  for (const char* f : {"report.json", "table.csv", "pck.csv"}) EXPECT_TRUE(fs::exists(root_ / "report" / f));
}

TEST_F(CliTest, UsageErrorsExitWithTwo) {
  EXPECT_EQ(run(""), 2);
  EXPECT_EQ(run("train --data nowhere --out m"), 2);
  EXPECT_EQ(run("train --data nowhere --out m --gcp sometimes"), 2);
  EXPECT_EQ(run("eval --pred nowhere --gt nowhere --out r"), 2);
  EXPECT_EQ(run("phantom-gen --out d --config missing.json"), 2);
  EXPECT_EQ(run("frobnicate"), 2);
  EXPECT_EQ(run("--help"), 0);
}

TEST_F(CliTest, RefusesToOverwriteADataset) {
  ASSERT_EQ(run("phantom-gen --config cfg.json --out twice"), 0);
  EXPECT_EQ(run("phantom-gen --config cfg.json --out twice"), 1);
  EXPECT_EQ(run("phantom-gen --config cfg.json --out twice --force"), 0);
}

}  // namespace
