// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Test-time refinement. Each iteration decodes the current prediction,
// retrieves the best-aligned library atlases, averages their heatmaps into a
// label proxy and takes one Adam step toward it. The detector is copied per
// case; the caller's model is never modified.

#ifndef VOLPOSE_SSL_REFINE_HPP
#define VOLPOSE_SSL_REFINE_HPP

#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "volpose/detector/detector.hpp"
#include "volpose/poselib/library.hpp"

namespace volpose::ssl {

struct RefineConfig {
  int iterations = 6;
  double lr = 5e-4;
  int k = poselib::kDefaultSupportSize;
  bool similarity = false;
  bool snapshot_each_iter = false;
  std::optional<autodiff::CheckpointRequest> gcp;
  heatmap::DecodeOptions decode;

  void validate() const;
};

nlohmann::json refine_config_to_json(const RefineConfig& c);
RefineConfig refine_config_from_json(const nlohmann::json& j);

struct IterationRecord {
  int iteration = 0;
  double loss_before = 0.0;  // against this iteration's proxy, before the step
  double loss_after = 0.0;   // same proxy, after the step
  DecodedPose decoded;       // prediction the proxy was built from
  double mean_support_error_mm = 0.0;
  std::vector<std::string> support_ids;
};

struct RefineResult {
  DecodedPose initial;
  DecodedPose final_pose;
  std::vector<IterationRecord> trace;
  bool declined = false;
  bool aborted = false;
  std::string message;
};

RefineResult refine(const detector::Detector& base, const Volume& volume, const poselib::PoseLibrary& library,
                    const RefineConfig& cfg);

struct RefineCase {
  std::string id;
  Volume volume;
  std::optional<Pose> ground_truth;
};

struct BatchSummary {
  int cases = 0;
  int declined = 0;
  int aborted = 0;
  int failed = 0;
  /// Mean landmark error over cases with ground truth, before and after.
  std::optional<double> mean_error_initial_mm;
  std::optional<double> mean_error_final_mm;
};

struct BatchResult {
  std::vector<std::string> ids;
  std::vector<std::optional<RefineResult>> results;  // empty where the case threw
  std::vector<std::string> errors;                   // one per case, empty if none
  BatchSummary summary;
};

/// Independent refinement of every case; a failing case is recorded and the
/// batch continues.
BatchResult refine_batch(const detector::Detector& base, const std::vector<RefineCase>& cases,
                         const poselib::PoseLibrary& library, const RefineConfig& cfg);

nlohmann::json trace_to_json(const RefineResult& r, double spacing_mm);

}  // namespace volpose::ssl

#endif  // VOLPOSE_SSL_REFINE_HPP
