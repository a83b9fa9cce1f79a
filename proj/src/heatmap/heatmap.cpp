// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/heatmap/heatmap.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>
#include <vector>

namespace volpose::heatmap {

HeatmapStack::HeatmapStack(const Grid& g)
    : grid(g), values({kNumLandmarks, g.dims[2], g.dims[1], g.dims[0]}) {}

namespace {

// Per-axis factors exp(-(i - c)^2 / 2s^2) relative to the nearest centre
// (or the raw Gaussian when `scaled` is false).
std::vector<double> axis_profile(double c, std::int64_t n, double sigma, bool scaled) {
  std::vector<double> f(static_cast<std::size_t>(n));
  const double nearest = std::clamp(std::round(c), 0.0, static_cast<double>(n - 1));
  const double d0 = scaled ? (nearest - c) * (nearest - c) : 0.0;
  for (std::int64_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - c;
    f[static_cast<std::size_t>(i)] = std::exp(-(d * d - d0) / (2.0 * sigma * sigma));
  }
  return f;
}

}  // namespace

void encode_channel(const Eigen::Vector3d& mm, const Grid& grid, double sigma_vox, float* out) {
  if (!(sigma_vox > 0.0)) throw std::invalid_argument("sigma must be positive");
  const Eigen::Vector3d c = grid.to_voxel(mm);
  const bool inside = grid.contains_mm(mm);
  const auto fx = axis_profile(c.x(), grid.dims[0], sigma_vox, inside);
  const auto fy = axis_profile(c.y(), grid.dims[1], sigma_vox, inside);
  const auto fz = axis_profile(c.z(), grid.dims[2], sigma_vox, inside);
  std::size_t i = 0;
  for (std::int64_t z = 0; z < grid.dims[2]; ++z) {
    for (std::int64_t y = 0; y < grid.dims[1]; ++y) {
      const double fzy = fz[static_cast<std::size_t>(z)] * fy[static_cast<std::size_t>(y)];
      for (std::int64_t x = 0; x < grid.dims[0]; ++x, ++i) {
        const double v = fzy * fx[static_cast<std::size_t>(x)];
        out[i] = v < kTruncation ? 0.0f : static_cast<float>(v);
      }
    }
  }
}

HeatmapStack encode(const Pose& pose, const Grid& grid, double sigma_vox) {
  HeatmapStack s(grid);
  for (int j = 0; j < kNumLandmarks; ++j) {
    const auto pos = static_cast<std::size_t>(j);
    if (!pose.valid[pos]) continue;
    if (!grid.contains_mm(pose.xyz[pos])) {
      const auto& p = pose.xyz[pos];
      throw OutOfBoundsLandmark(j + 1, "landmark " + std::to_string(j + 1) + " at (" +
                                           std::to_string(p.x()) + ", " + std::to_string(p.y()) +
                                           ", " + std::to_string(p.z()) +
                                           ") mm lies outside the grid");
    }
    encode_channel(pose.xyz[pos], grid, sigma_vox, s.channel(j));
  }
  return s;
}

DecodedPose decode(const HeatmapStack& stack, const DecodeOptions& opt) {
  if (opt.window < 1 || opt.window % 2 == 0) throw std::invalid_argument("decode window must be odd and >= 1");
  const auto& g = stack.grid;
  const std::int64_t nx = g.dims[0], ny = g.dims[1], nz = g.dims[2];
  const std::int64_t n = g.numel();
  const std::int64_t half = opt.window / 2;
  DecodedPose out;
  for (int j = 0; j < kNumLandmarks; ++j) {
    const auto pos = static_cast<std::size_t>(j);
    const float* ch = stack.channel(j);
    std::int64_t best = 0;
    bool any_nonzero = false;
    for (std::int64_t i = 0; i < n; ++i) {
      if (ch[i] != 0.0f) any_nonzero = true;
      if (ch[i] > ch[best]) best = i;
    }
    const double peak = ch[best];
    out.confidence[pos] = peak;
    if (!any_nonzero) {
      out.pose.xyz[pos] = g.origin_mm;
      out.pose.valid[pos] = false;
      continue;
    }
    const std::int64_t bx = best % nx, by = (best / nx) % ny, bz = best / (nx * ny);
    const std::int64_t x0 = std::max<std::int64_t>(0, bx - half), x1 = std::min(nx - 1, bx + half);
    const std::int64_t y0 = std::max<std::int64_t>(0, by - half), y1 = std::min(ny - 1, by + half);
    const std::int64_t z0 = std::max<std::int64_t>(0, bz - half), z1 = std::min(nz - 1, bz + half);
    // Per-axis marginals of the window. For a separable peak each marginal is
    // a scaled 1-D profile, so the floor subtraction below acts per axis.
    std::array<std::vector<double>, 3> marg{std::vector<double>(static_cast<std::size_t>(x1 - x0 + 1), 0.0),
                                            std::vector<double>(static_cast<std::size_t>(y1 - y0 + 1), 0.0),
                                            std::vector<double>(static_cast<std::size_t>(z1 - z0 + 1), 0.0)};
    for (std::int64_t z = z0; z <= z1; ++z) {
      for (std::int64_t y = y0; y <= y1; ++y) {
        for (std::int64_t x = x0; x <= x1; ++x) {
          const double v = ch[(z * ny + y) * nx + x];
          marg[0][static_cast<std::size_t>(x - x0)] += v;
          marg[1][static_cast<std::size_t>(y - y0)] += v;
          marg[2][static_cast<std::size_t>(z - z0)] += v;
        }
      }
    }
    const std::array<std::int64_t, 3> lo{x0, y0, z0};
    Eigen::Vector3d vox(static_cast<double>(bx), static_cast<double>(by), static_cast<double>(bz));
    for (std::size_t a = 0; a < 3; ++a) {
      const double floor = opt.subtract_background ? *std::min_element(marg[a].begin(), marg[a].end()) : 0.0;
      double w_sum = 0.0, acc = 0.0;
      for (std::size_t i = 0; i < marg[a].size(); ++i) {
        const double w = std::max(0.0, marg[a][i] - floor);
        acc += w * static_cast<double>(lo[a] + static_cast<std::int64_t>(i));
        w_sum += w;
      }
      if (w_sum > 0.0) vox[static_cast<Eigen::Index>(a)] = acc / w_sum;
    }
    out.pose.xyz[pos] = g.to_mm(vox);
    out.pose.valid[pos] = peak >= opt.confidence_floor;
  }
  return out;
}

}  // namespace volpose::heatmap
