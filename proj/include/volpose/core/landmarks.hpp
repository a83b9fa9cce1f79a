// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Canonical 16-landmark table and the 15-edge skeleton tree over it.
// Indices in this table are 1-based as printed in reports; array positions
// elsewhere are 0-based (position = index - 1).

#ifndef VOLPOSE_CORE_LANDMARKS_HPP
#define VOLPOSE_CORE_LANDMARKS_HPP

#include <array>
#include <string_view>
#include <utility>

namespace volpose {

inline constexpr int kNumLandmarks = 16;
inline constexpr int kNumSegments = 15;

enum class Side { midline, left, right };

struct LandmarkInfo {
  int index;  // 1-based
  std::string_view name;
  Side side;
  int partner;  // 1-based flip-swap partner; itself for midline landmarks
  bool in_registration_subset;
};

const std::array<LandmarkInfo, kNumLandmarks>& landmark_table();

/// Skeleton edges as 0-based landmark positions, parent first.
const std::array<std::pair<int, int>, kNumSegments>& skeleton_segments();

/// 0-based positions of the landmarks used for atlas registration.
const std::array<int, 10>& registration_subset();

/// 0-based positions of landmarks that have a distinct left/right partner.
const std::array<int, 12>& limb_landmarks();

/// 0-based partner position for flips.
int swap_partner(int position);

std::string_view side_name(Side s);

}  // namespace volpose

#endif  // VOLPOSE_CORE_LANDMARKS_HPP
