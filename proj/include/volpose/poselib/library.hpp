// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Pose library, atlas retrieval and label-proxy synthesis.
//
// Each atlas is rigidly aligned to the query over the registration subset
// (intersected with the query's valid landmarks) and scored by the summed
// Euclidean residual over those landmarks. The K best form the support set;
// the proxy is the unweighted mean of their encoded heatmaps.

#ifndef VOLPOSE_POSELIB_LIBRARY_HPP
#define VOLPOSE_POSELIB_LIBRARY_HPP

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "volpose/core/grid.hpp"
#include "volpose/core/pose.hpp"
#include "volpose/heatmap/heatmap.hpp"
#include "volpose/poselib/rigid.hpp"

namespace volpose::poselib {

inline constexpr int kDefaultSupportSize = 10;
inline constexpr int kMinRegistrationPoints = 4;
inline constexpr int kLibraryFormatVersion = 1;

struct Atlas {
  std::string id;
  Pose pose;
  std::string source;
};

struct PoseLibrary {
  std::vector<Atlas> atlases;

  std::size_t size() const { return atlases.size(); }
  /// Throws unless every atlas has the registration subset present and ids
  /// are unique.
  void validate() const;
};

nlohmann::json library_to_json(const PoseLibrary& lib);
PoseLibrary library_from_json(const nlohmann::json& j);
void save_library(const PoseLibrary& lib, const std::filesystem::path& path,
                  const nlohmann::json& extra = nlohmann::json::object());
PoseLibrary load_library(const std::filesystem::path& path);

struct SupportEntry {
  std::string atlas_id;
  RigidTransform transform;
  double error_mm = 0.0;  // summed subset residual
  Pose aligned;
};

struct SupportSet {
  std::vector<SupportEntry> entries;  // ascending error, ties by id
  std::vector<int> used_landmarks;    // 0-based positions fitted
  bool declined = false;
  std::string reason;
};

struct RetrievalOptions {
  int k = kDefaultSupportSize;
  bool similarity = false;
};

/// Summed residual over `positions` after applying `t` to the atlas.
double registration_error(const Pose& atlas, const Pose& query, const RigidTransform& t,
                          const std::vector<int>& positions);

/// Subset landmarks usable for this query (valid in the query).
std::vector<int> usable_subset(const Pose& query);

SupportSet retrieve_support(const DecodedPose& query, const PoseLibrary& lib,
                            const RetrievalOptions& opt = {});

heatmap::HeatmapStack build_label_proxy(const SupportSet& support, const Grid& grid, double sigma_vox);

}  // namespace volpose::poselib

#endif  // VOLPOSE_POSELIB_LIBRARY_HPP
