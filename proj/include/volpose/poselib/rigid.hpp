// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_POSELIB_RIGID_HPP
#define VOLPOSE_POSELIB_RIGID_HPP

#include <stdexcept>
#include <vector>

#include <Eigen/Core>

#include "volpose/core/pose.hpp"

namespace volpose::poselib {

struct RigidTransform {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double scale = 1.0;  // stays 1 unless a similarity fit was requested

  Eigen::Vector3d apply(const Eigen::Vector3d& p) const { return scale * (rotation * p) + translation; }
  Pose apply(const Pose& p) const;
};

class RegistrationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct RigidFit {
  RigidTransform transform;
  double rms = 0.0;  // sqrt of the mean squared residual
};

/// Least-squares T minimising sum |T src_i - dst_i|^2 over proper rotations
/// and translations (and a uniform scale when `similarity` is set).
RigidFit fit_rigid(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst,
                   bool similarity = false);

}  // namespace volpose::poselib

#endif  // VOLPOSE_POSELIB_RIGID_HPP
