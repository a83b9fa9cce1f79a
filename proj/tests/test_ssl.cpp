// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include "volpose/phantom/phantom.hpp"
#include "volpose/ssl/refine.hpp"

namespace volpose::ssl {
namespace {

class RefineTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    phantom::PhantomSpec spec;
    spec.dims = {48, 48, 48};
    for (std::uint64_t s = 0; s < 8; ++s) {
      const auto c = phantom::sample_case(spec, 100 + s);
      library_.atlases.push_back({"atlas" + std::to_string(s), c.pose, "test"});
    }
    query_ = new phantom::PhantomCase(phantom::sample_case(spec, 7));
  }
  static void TearDownTestSuite() { delete query_; }

  static detector::Detector make_detector() {
    detector::DetectorConfig c;
    c.depth = 2;
    c.base_channels = 4;
    c.head_init_scale = 1.0;
    return detector::Detector(c);
  }

  static RefineConfig config(int iterations) {
    RefineConfig c;
    c.iterations = iterations;
    c.k = 3;
    c.decode.confidence_floor = 0.0;  // an untrained net has weak peaks
    return c;
  }

  static poselib::PoseLibrary library_;
  static phantom::PhantomCase* query_;
};

poselib::PoseLibrary RefineTest::library_;
phantom::PhantomCase* RefineTest::query_ = nullptr;

TEST_F(RefineTest, EachStepLowersTheProxyLoss) {
  const auto det = make_detector();
  const auto r = refine(det, query_->volume, library_, config(3));
  ASSERT_FALSE(r.declined) << r.message;
  ASSERT_EQ(r.trace.size(), 3u);
  for (const auto& it : r.trace) {
    EXPECT_LT(it.loss_after, it.loss_before) << "iteration " << it.iteration;
    EXPECT_EQ(it.support_ids.size(), 3u);
  }
  EXPECT_EQ(r.trace[0].decoded.pose, r.initial.pose);
}

TEST_F(RefineTest, LeavesTheBaseDetectorUntouched) {
  const auto det = make_detector();
  const auto before = det.parameters();
  refine(det, query_->volume, library_, config(2));
  for (std::size_t i = 0; i < before.size(); ++i) {
    EXPECT_TRUE(det.parameters()[i].value.bitwise_equal(before[i].value));
  }
}

TEST_F(RefineTest, IsDeterministic) {
  const auto det = make_detector();
  const auto a = refine(det, query_->volume, library_, config(2));
  const auto b = refine(det, query_->volume, library_, config(2));
  EXPECT_EQ(a.final_pose.pose, b.final_pose.pose);
  EXPECT_EQ(a.trace.back().loss_after, b.trace.back().loss_after);
}

TEST_F(RefineTest, ZeroIterationsReturnsTheInitialPose) {
  const auto r = refine(make_detector(), query_->volume, library_, config(0));
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.final_pose.pose, r.initial.pose);
}

TEST_F(RefineTest, DeclinesWhenTooFewLandmarksAreConfident) {
  auto cfg = config(2);
  cfg.decode.confidence_floor = 1e9;
  const auto r = refine(make_detector(), query_->volume, library_, cfg);
  EXPECT_TRUE(r.declined);
  EXPECT_FALSE(r.message.empty());
  EXPECT_TRUE(r.trace.empty());
  EXPECT_EQ(r.final_pose.pose, r.initial.pose);
  EXPECT_EQ(trace_to_json(r, 1.0).at("declined"), true);
}

TEST_F(RefineTest, BatchSummarisesCases) {
  std::vector<RefineCase> cases{{"a", query_->volume, query_->pose}, {"b", query_->volume, std::nullopt}};
  const auto b = refine_batch(make_detector(), cases, library_, config(1));
  EXPECT_EQ(b.summary.cases, 2);
  EXPECT_EQ(b.summary.failed, 0);
  ASSERT_TRUE(b.summary.mean_error_final_mm.has_value());
  EXPECT_EQ(b.ids, (std::vector<std::string>{"a", "b"}));
  const auto j = trace_to_json(*b.results[0], 1.0);
  EXPECT_EQ(j.at("iterations").size(), 1u);
}

TEST(RefineConfig, JsonRoundTripAndValidation) {
  RefineConfig c;
  c.iterations = 4;
  c.gcp = autodiff::CheckpointRequest{autodiff::CheckpointPolicy::block_boundary, 0, {}};
  const auto back = refine_config_from_json(refine_config_to_json(c));
  EXPECT_EQ(back.iterations, 4);
  ASSERT_TRUE(back.gcp.has_value());
  EXPECT_EQ(back.gcp->policy, autodiff::CheckpointPolicy::block_boundary);
  EXPECT_THROW(refine_config_from_json({{"k", 0}}), std::invalid_argument);
  EXPECT_THROW(refine_config_from_json({{"lr", -1.0}}), std::invalid_argument);
}

}  // namespace
}  // namespace volpose::ssl
