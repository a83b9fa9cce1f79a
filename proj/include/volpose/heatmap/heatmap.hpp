// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_HEATMAP_HEATMAP_HPP
#define VOLPOSE_HEATMAP_HEATMAP_HPP

#include <stdexcept>

#include "volpose/autodiff/tensor.hpp"
#include "volpose/core/grid.hpp"
#include "volpose/core/pose.hpp"

namespace volpose::heatmap {

inline constexpr double kTruncation = 1e-4;

/// 16 response maps laid out as a [16, z, y, x] tensor over `grid`.
struct HeatmapStack {
  Grid grid;
  autodiff::Tensor values;

  HeatmapStack() = default;
  explicit HeatmapStack(const Grid& g);

  float* channel(int c) { return values.raw() + static_cast<std::size_t>(c) * grid.numel(); }
  const float* channel(int c) const {
    return values.raw() + static_cast<std::size_t>(c) * grid.numel();
  }
};

class OutOfBoundsLandmark : public std::out_of_range {
 public:
  OutOfBoundsLandmark(int index, const std::string& what) : std::out_of_range(what), index_(index) {}
  /// 1-based landmark index.
  int index() const { return index_; }

 private:
  int index_;
};

/// Gaussian of std `sigma_vox` voxels around each landmark, scaled so the
/// voxel nearest the landmark reads exactly 1, with values under 1e-4 set to 0.
/// Every valid landmark must lie inside the grid.
HeatmapStack encode(const Pose& pose, const Grid& grid, double sigma_vox);

/// Writes one channel. Landmarks outside the grid contribute only their
/// (unscaled) in-bounds tail, which may be all zero.
void encode_channel(const Eigen::Vector3d& mm, const Grid& grid, double sigma_vox, float* out);

struct DecodeOptions {
  int window = 5;
  double confidence_floor = 0.1;
  /// Subtract each axis marginal's minimum before its centroid. Removes the
  /// pull toward the argmax voxel for sub-voxel peaks and any constant offset
  /// in raw maps.
  bool subtract_background = true;
};

/// Argmax (ties to the lowest linear index) refined, per axis, by the
/// centroid of the window^3 neighbourhood's marginal, clipped to the grid.
DecodedPose decode(const HeatmapStack& stack, const DecodeOptions& opt = {});

}  // namespace volpose::heatmap

#endif  // VOLPOSE_HEATMAP_HEATMAP_HPP
