// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Articulated stick-figure phantoms with known landmark positions.
//
// A skeleton is sampled in a body frame (x toward the body's right, y
// anterior, z superior), rotated by a uniform random rotation, scaled and
// placed inside the grid. Segments render as soft tubes, joints as small
// blobs. Chirality is recoverable from the anterior nub on the torso together
// with the elbow (anterior) and knee (posterior) flexion directions.

#ifndef VOLPOSE_PHANTOM_PHANTOM_HPP
#define VOLPOSE_PHANTOM_PHANTOM_HPP

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "volpose/core/pose.hpp"
#include "volpose/core/volume.hpp"

namespace volpose::phantom {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct PhantomSpec {
  Dims dims{64, 64, 64};
  double spacing_mm = 1.0;
  double margin_mm = 4.0;  // landmarks keep this distance from the faces

  // Body-frame segment lengths in mm before global scaling.
  Range trunk_segment{8.0, 10.0};   // sacra-spine, spine-neck
  Range head_length{8.0, 11.0};
  Range shoulder_half_width{5.0, 7.0};
  Range hip_half_width{3.5, 5.0};
  Range upper_arm{7.0, 9.0};
  Range forearm{6.0, 8.0};
  Range thigh{8.0, 10.0};
  Range shin{7.0, 9.0};
  Range scale{0.9, 1.1};

  // Joint ranges in degrees.
  Range spine_curl{0.0, 20.0};
  Range head_tilt{-25.0, 25.0};
  double limb_cone_deg = 50.0;  // deviation of the proximal limb bone
  Range elbow_flex{20.0, 120.0};
  Range knee_flex{20.0, 120.0};

  // Appearance.
  double torso_radius_mm = 2.6;
  double head_radius_mm = 3.4;
  double limb_radius_mm = 1.5;
  double joint_radius_mm = 1.9;
  Range segment_intensity{0.7, 1.0};
  double left_limb_offset = 0.0;  // added to left limb intensity; 0 is the hardest setting
  double background = 0.05;
  double multiplicative_noise = 0.2;
  double additive_noise = 0.05;
  double shadow_probability = 0.3;
  Range shadow_half_angle_deg{4.0, 9.0};

  int max_attempts = 100;
};

nlohmann::json spec_to_json(const PhantomSpec& s);
PhantomSpec spec_from_json(const nlohmann::json& j);

struct PhantomCase {
  Volume volume;
  Pose pose;
  nlohmann::json provenance;
  /// Generator segment lengths in mm, ordered as skeleton_segments().
  std::array<double, kNumSegments> segment_lengths{};
};

/// Deterministic in (spec, seed). Throws std::runtime_error when no sample
/// fits the grid within spec.max_attempts.
PhantomCase sample_case(const PhantomSpec& spec, std::uint64_t seed);

enum class Augmentation { flip_x, flip_y, flip_z, rot90_x, rot90_y, rot90_z };

std::string_view augmentation_name(Augmentation a);
Augmentation augmentation_from_name(std::string_view name);

/// Flips mirror the grid along one axis and swap left/right labels; rot90
/// turns the grid a quarter turn about one axis (right-handed).
PhantomCase augment(const PhantomCase& c, Augmentation a);
Pose augment_pose(const Pose& p, const Dims& dims, double spacing_mm, Augmentation a);

struct ManifestEntry {
  std::string split;  // "train" or "test"
  std::string id;
  std::uint64_t seed = 0;
  std::filesystem::path volume;  // header path relative to the manifest
  std::filesystem::path pose;
};

struct Manifest {
  PhantomSpec spec;
  std::uint64_t master_seed = 0;
  std::vector<ManifestEntry> entries;
};

/// Derives n_train + n_test distinct case seeds from `seed`.
std::vector<std::uint64_t> derive_seeds(std::uint64_t seed, int count);

/// Writes every case plus manifest.json under `out_dir`. Refuses to overwrite
/// an existing manifest unless `overwrite` is set.
Manifest make_dataset(const PhantomSpec& spec, int n_train, int n_test, std::uint64_t seed,
                      const std::filesystem::path& out_dir, bool overwrite = false,
                      const nlohmann::json& extra = nlohmann::json::object());

nlohmann::json manifest_to_json(const Manifest& m);
Manifest manifest_from_json(const nlohmann::json& j);
Manifest load_manifest(const std::filesystem::path& path);

}  // namespace volpose::phantom

#endif  // VOLPOSE_PHANTOM_PHANTOM_HPP
