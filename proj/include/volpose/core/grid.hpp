// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_CORE_GRID_HPP
#define VOLPOSE_CORE_GRID_HPP

#include <Eigen/Core>

#include "volpose/core/volume.hpp"

namespace volpose {

/// Placement of a voxel lattice in the volume frame: voxel i is centred at
/// origin_mm + i * spacing_mm.
struct Grid {
  Dims dims{0, 0, 0};
  double spacing_mm = 1.0;
  Eigen::Vector3d origin_mm = Eigen::Vector3d::Zero();

  static Grid of(const Volume& v) { return {v.dims, v.spacing_mm, Eigen::Vector3d::Zero()}; }

  Eigen::Vector3d to_voxel(const Eigen::Vector3d& mm) const { return (mm - origin_mm) / spacing_mm; }
  Eigen::Vector3d to_mm(const Eigen::Vector3d& vox) const { return origin_mm + vox * spacing_mm; }

  /// True when the point lies within the hull of voxel centres.
  bool contains_mm(const Eigen::Vector3d& mm) const {
    const Eigen::Vector3d v = to_voxel(mm);
    for (int a = 0; a < 3; ++a) {
      if (!(v[a] >= 0.0 && v[a] <= static_cast<double>(dims[static_cast<std::size_t>(a)] - 1))) return false;
    }
    return true;
  }
  std::int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
};

}  // namespace volpose

#endif  // VOLPOSE_CORE_GRID_HPP
