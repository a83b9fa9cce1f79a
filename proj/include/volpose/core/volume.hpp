// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_CORE_VOLUME_HPP
#define VOLPOSE_CORE_VOLUME_HPP

#include <array>
#include <cstdint>
#include <vector>

namespace volpose {

/// Extents in voxels, ordered (x, y, z).
using Dims = std::array<std::int64_t, 3>;

/// Scalar grid with isotropic spacing. Voxel (i, j, k) is centred at
/// (i, j, k) * spacing_mm in the volume frame; storage is x fastest.
struct Volume {
  Dims dims{0, 0, 0};
  double spacing_mm = 1.0;
  std::vector<float> data;

  Volume() = default;
  Volume(Dims d, double spacing, float fill = 0.0f);

  std::int64_t numel() const { return dims[0] * dims[1] * dims[2]; }
  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return static_cast<std::size_t>((z * dims[1] + y) * dims[0] + x);
  }
  float& at(std::int64_t x, std::int64_t y, std::int64_t z) { return data[index(x, y, z)]; }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data[index(x, y, z)]; }
};

}  // namespace volpose

#endif  // VOLPOSE_CORE_VOLUME_HPP
