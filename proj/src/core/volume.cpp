// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/core/volume.hpp"

#include <stdexcept>

namespace volpose {

Volume::Volume(Dims d, double spacing, float fill) : dims(d), spacing_mm(spacing) {
  for (auto e : d) {
    if (e <= 0) throw std::invalid_argument("volume extents must be positive");
  }
  if (!(spacing > 0.0)) throw std::invalid_argument("voxel spacing must be positive");
  data.assign(static_cast<std::size_t>(numel()), fill);
}

}  // namespace volpose
