// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "volpose/heatmap/heatmap.hpp"

namespace volpose::heatmap {
namespace {

Grid cube(std::int64_t n, double sp = 1.0) { return Grid{{n, n, n}, sp, Eigen::Vector3d::Zero()}; }

Pose centred_pose(const Grid& g) {
  Pose p;
  for (int i = 0; i < kNumLandmarks; ++i) {
    p.xyz[i] = Eigen::Vector3d(4.0 + i, 6.0 + 0.5 * i, 10.0 - 0.25 * i) * g.spacing_mm;
  }
  return p;
}

TEST(Encode, NearestVoxelIsOneAndProfileIsGaussian) {
  const Grid g = cube(20);
  Pose p = centred_pose(g);
  p.xyz[0] = {7.3, 8.6, 9.2};
  const auto s = encode(p, g, 2.0);
  const float* c = s.channel(0);
  auto at = [&](int x, int y, int z) { return c[(z * 20 + y) * 20 + x]; };
  EXPECT_FLOAT_EQ(at(7, 9, 9), 1.0f);
  // Independent oracle: ratio of unnormalised Gaussians along x.
  const double expect = std::exp(-((5 - 7.3) * (5 - 7.3) - (7 - 7.3) * (7 - 7.3)) / (2 * 4.0));
  EXPECT_NEAR(at(5, 9, 9), expect, 1e-6);
}

TEST(Encode, SmallValuesAreZeroed) {
  const Grid g = cube(24);
  const auto s = encode(centred_pose(g), g, 2.0);
  for (int c = 0; c < kNumLandmarks; ++c) {
    for (std::int64_t i = 0; i < g.numel(); ++i) {
      const float v = s.channel(c)[i];
      EXPECT_TRUE(v == 0.0f || v >= 1e-4f) << v;
    }
  }
}

TEST(Encode, OutOfBoundsLandmarkReportsOneBasedIndex) {
  const Grid g = cube(20);
  Pose p = centred_pose(g);
  p.xyz[6] = {-0.5, 3.0, 3.0};
  try {
    encode(p, g, 2.0);
    FAIL() << "expected OutOfBoundsLandmark";
  } catch (const OutOfBoundsLandmark& e) {
    EXPECT_EQ(e.index(), 7);
  }
}

TEST(Encode, InvalidLandmarkGivesEmptyChannel) {
  const Grid g = cube(20);
  Pose p = centred_pose(g);
  p.valid[3] = false;
  p.xyz[3] = {100, 100, 100};
  const auto s = encode(p, g, 2.0);
  for (std::int64_t i = 0; i < g.numel(); ++i) ASSERT_EQ(s.channel(3)[i], 0.0f);
}

TEST(Decode, RoundTripsSubVoxelPositions) {
  const Grid g{{32, 28, 30}, 1.5, Eigen::Vector3d(-3.0, 2.0, 0.5)};
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(0.2, 0.8);
  for (int trial = 0; trial < 20; ++trial) {
    Pose p;
    for (int i = 0; i < kNumLandmarks; ++i) {
      const Eigen::Vector3d vox(u(rng) * 31, u(rng) * 27, u(rng) * 29);
      p.xyz[i] = g.to_mm(vox);
    }
    const auto d = decode(encode(p, g, 2.0));
    for (int i = 0; i < kNumLandmarks; ++i) {
      EXPECT_LT((d.pose.xyz[i] - p.xyz[i]).norm() / g.spacing_mm, 0.5);
      EXPECT_TRUE(d.pose.valid[i]);
      EXPECT_GT(d.confidence[i], 0.5);
    }
  }
}

TEST(Decode, HalfVoxelOffsetIsExactWithBackgroundSubtraction) {
  const Grid g = cube(20);
  Pose p = centred_pose(g);
  p.xyz[0] = {9.5, 9.5, 9.5};
  const auto d = decode(encode(p, g, 2.0));
  EXPECT_NEAR((d.pose.xyz[0] - p.xyz[0]).norm(), 0.0, 1e-5);
}

TEST(Decode, TiesGoToLowestIndex) {
  const Grid g = cube(8);
  HeatmapStack s(g);
  float* c = s.channel(2);
  c[(3 * 8 + 3) * 8 + 2] = 0.9f;
  c[(5 * 8 + 5) * 8 + 5] = 0.9f;
  DecodeOptions opt;
  opt.window = 1;
  const auto d = decode(s, opt);
  EXPECT_EQ(d.pose.xyz[2], Eigen::Vector3d(2, 3, 3));
}

TEST(Decode, EmptyChannelIsInvalidAtOrigin) {
  const Grid g{{8, 8, 8}, 2.0, Eigen::Vector3d(1, 2, 3)};
  HeatmapStack s(g);
  const auto d = decode(s);
  EXPECT_FALSE(d.pose.valid[0]);
  EXPECT_EQ(d.pose.xyz[0], g.origin_mm);
  EXPECT_EQ(d.confidence[0], 0.0);
}

TEST(Decode, LowPeakFallsBelowConfidenceFloor) {
  const Grid g = cube(8);
  HeatmapStack s(g);
  s.channel(0)[100] = 0.05f;
  EXPECT_FALSE(decode(s).pose.valid[0]);
  s.channel(0)[100] = 0.5f;
  EXPECT_TRUE(decode(s).pose.valid[0]);
}

}  // namespace
}  // namespace volpose::heatmap
