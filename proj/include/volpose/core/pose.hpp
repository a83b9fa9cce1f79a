// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_CORE_POSE_HPP
#define VOLPOSE_CORE_POSE_HPP

#include <array>

#include <Eigen/Core>

#include "volpose/core/landmarks.hpp"

namespace volpose {

/// 16 landmarks in mm, volume frame, ordered by the canonical table.
struct Pose {
  std::array<Eigen::Vector3d, kNumLandmarks> xyz;
  std::array<bool, kNumLandmarks> valid;

  Pose() {
    xyz.fill(Eigen::Vector3d::Zero());
    valid.fill(true);
  }

  bool complete() const {
    for (bool v : valid) {
      if (!v) return false;
    }
    return true;
  }
  bool operator==(const Pose& o) const { return xyz == o.xyz && valid == o.valid; }
};

/// Pose with the per-landmark peak responses it was decoded from.
struct DecodedPose {
  Pose pose;
  std::array<double, kNumLandmarks> confidence{};
};

}  // namespace volpose

#endif  // VOLPOSE_CORE_POSE_HPP
