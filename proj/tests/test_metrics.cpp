// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "support/metrics_fixture.hpp"
#include "volpose/core/io.hpp"
#include "volpose/metrics/metrics.hpp"

namespace volpose::metrics {
namespace {

namespace fs = std::filesystem;

TEST(Metrics, FixtureMatchesHandComputation) {
  const auto f = testing::metrics_fixture();
  const auto r = evaluate(f.cases, f.thresholds);
  for (int j = 0; j < kNumLandmarks; ++j) {
    for (std::size_t t = 0; t < f.thresholds.size(); ++t) {
      EXPECT_DOUBLE_EQ(r.pck.per_landmark[j][t], f.pck[j][t]) << "L" << j + 1 << " t" << t;
    }
    EXPECT_NEAR(r.auc_pct[j], f.auc_pct[j], 1e-12) << "L" << j + 1;
    EXPECT_NEAR(r.mean_mm[j], f.mean_mm[j], 1e-12) << "L" << j + 1;
  }
  for (std::size_t t = 0; t < f.thresholds.size(); ++t) EXPECT_DOUBLE_EQ(r.pck.pooled[t], f.pooled[t]);
  EXPECT_NEAR(r.auc_pct_all, f.pooled_auc_pct, 1e-12);
  EXPECT_NEAR(r.mean_mm_all, f.mean_mm_all, 1e-12);
}

TEST(Metrics, ThresholdEqualToDistanceDoesNotCount) {
  Distances d;
  d.valid.fill(true);
  d.mm.fill(2.0);
  const auto c = pck_curve({d}, {1.0, 2.0, 3.0});
  EXPECT_EQ(c.pooled, (std::vector<double>{0.0, 0.0, 1.0}));
}

TEST(Metrics, PckIsMonotoneAndAucBounded) {
  std::mt19937_64 rng(4);
  std::exponential_distribution<double> e(0.2);
  std::vector<Distances> cases(12);
  for (auto& d : cases) {
    d.valid.fill(true);
    for (auto& m : d.mm) m = e(rng);
  }
  const auto t = default_thresholds();
  ASSERT_EQ(t.size(), 61u);
  const auto c = pck_curve(cases, t);
  for (std::size_t i = 1; i < t.size(); ++i) {
    EXPECT_GE(c.pooled[i], c.pooled[i - 1]);
    for (int j = 0; j < kNumLandmarks; ++j) EXPECT_GE(c.per_landmark[j][i], c.per_landmark[j][i - 1]);
  }
  const double a = auc(t, c.pooled);
  EXPECT_GE(a, 0.0);
  EXPECT_LE(a, 100.0);
  EXPECT_DOUBLE_EQ(auc({0, 30}, {1, 1}), 100.0);
  EXPECT_DOUBLE_EQ(auc({0, 30}, {0, 0}), 0.0);
}

TEST(Metrics, RejectsBadInputs) {
  Distances d;
  d.valid.fill(true);
  EXPECT_THROW(pck_curve({d}, {}), std::invalid_argument);
  EXPECT_THROW(pck_curve({d}, {1.0, 1.0}), std::invalid_argument);
  EXPECT_THROW(auc({1.0}, {1.0}), std::invalid_argument);
  EXPECT_THROW(evaluate({}), std::invalid_argument);
  Pose p;
  EXPECT_THROW(euclidean(p, 1.0, p, 0.5), std::invalid_argument);
}

TEST(Metrics, SegmentLengthsSkipInvalidEnds) {
  Pose p;
  for (int j = 0; j < kNumLandmarks; ++j) p.xyz[j] = Eigen::Vector3d(j, 0, 0);
  p.valid[1] = false;
  const auto s = segment_lengths(p);
  EXPECT_FALSE(s[0].has_value());  // {0, 1}
  EXPECT_FALSE(s[1].has_value());  // {1, 2}
  ASSERT_TRUE(s[2].has_value());   // {2, 3}
  EXPECT_DOUBLE_EQ(*s[2], 1.0);
}

std::vector<std::string> lines_of(const fs::path& p) {
  std::ifstream in(p);
  std::vector<std::string> out;
  for (std::string l; std::getline(in, l);) out.push_back(l);
  return out;
}

TEST(Metrics, TablesHaveOneColumnPerLandmarkAndAMean) {
  const auto f = testing::metrics_fixture();
  const fs::path dir = fs::temp_directory_path() / "volpose_test_report";
  fs::remove_all(dir);
  write_report(evaluate(f.cases, f.thresholds), dir, {{"note", "x"}});
  std::string header = "metric";
  for (int j = 1; j <= kNumLandmarks; ++j) header += ",L" + std::to_string(j);
  header += ",mean";

  const auto table = lines_of(dir / "table.csv");
  ASSERT_EQ(table.size(), 3u);
  EXPECT_EQ(table[0], header);
  EXPECT_EQ(table[1].rfind("euclidean_mm,3.500000,6.000000,", 0), 0u);
  EXPECT_EQ(table[2].substr(table[2].rfind(',') + 1), "43.544304");

  const auto pck = lines_of(dir / "pck.csv");
  ASSERT_EQ(pck.size(), 7u);
  EXPECT_EQ(pck[0], "threshold_mm" + header.substr(6));
  EXPECT_EQ(pck[2].rfind("1.000000,0.200000,0.400000,", 0), 0u);

  const auto j = read_json(dir / "report.json");
  EXPECT_EQ(j.at("note"), "x");
  EXPECT_TRUE(j.at("cases")[4].at("distance_mm")[15].is_null());
  fs::remove_all(dir);
}

}  // namespace
}  // namespace volpose::metrics
