// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_METRICS_METRICS_HPP
#define VOLPOSE_METRICS_METRICS_HPP

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "volpose/core/pose.hpp"

namespace volpose::metrics {

/// Per-landmark distances in mm; `valid` is false where either pose masks it.
struct Distances {
  std::array<double, kNumLandmarks> mm{};
  std::array<bool, kNumLandmarks> valid{};
};

Distances euclidean(const Pose& pred, const Pose& gt);
/// As above, but rejects poses whose recorded spacing references disagree.
Distances euclidean(const Pose& pred, double pred_spacing_mm, const Pose& gt, double gt_spacing_mm);

/// 0 to 30 mm in 0.5 mm steps.
std::vector<double> default_thresholds();

struct PckCurve {
  std::vector<double> thresholds;
  std::array<std::vector<double>, kNumLandmarks> per_landmark;  // fraction per threshold
  std::vector<double> pooled;
};

/// Fraction of valid distances strictly below each threshold.
PckCurve pck_curve(const std::vector<Distances>& cases, const std::vector<double>& thresholds);

/// Trapezoidal area under the curve over the threshold span, in percent.
double auc(const std::vector<double>& thresholds, const std::vector<double>& pck);

/// Lengths of the 15 skeleton segments; empty where an endpoint is masked.
std::array<std::optional<double>, kNumSegments> segment_lengths(const Pose& p);

struct CaseResult {
  std::string id;
  Pose pred;
  Pose gt;
};

struct EvalReport {
  std::vector<std::string> case_ids;
  std::vector<Distances> distances;
  std::array<double, kNumLandmarks> mean_mm{};
  std::array<double, kNumLandmarks> auc_pct{};
  double mean_mm_all = 0.0;
  double auc_pct_all = 0.0;
  PckCurve pck;
  std::vector<std::array<std::optional<double>, kNumSegments>> segment_lengths_mm;
};

EvalReport evaluate(const std::vector<CaseResult>& cases,
                    const std::vector<double>& thresholds = default_thresholds());

nlohmann::json report_to_json(const EvalReport& r);
/// Writes report.json, table.csv (metric, L1..L16, mean) and pck.csv.
void write_report(const EvalReport& r, const std::filesystem::path& dir,
                  const nlohmann::json& extra = nlohmann::json::object());

}  // namespace volpose::metrics

#endif  // VOLPOSE_METRICS_METRICS_HPP
