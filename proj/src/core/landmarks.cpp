// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/core/landmarks.hpp"

#include <stdexcept>
#include <string>

namespace volpose {

const std::array<LandmarkInfo, kNumLandmarks>& landmark_table() {
  static const std::array<LandmarkInfo, kNumLandmarks> table = {{
      {1, "head_top", Side::midline, 1, true},
      {2, "neck", Side::midline, 2, true},
      {3, "spine_mid", Side::midline, 3, true},
      {4, "sacra", Side::midline, 4, true},
      {5, "l_shoulder", Side::left, 8, true},
      {6, "l_elbow", Side::left, 9, false},
      {7, "l_wrist", Side::left, 10, true},
      {8, "r_shoulder", Side::right, 5, true},
      {9, "r_elbow", Side::right, 6, true},
      {10, "r_wrist", Side::right, 7, false},
      {11, "l_hip", Side::left, 14, true},
      {12, "l_knee", Side::left, 15, false},
      {13, "l_ankle", Side::left, 16, false},
      {14, "r_hip", Side::right, 11, true},
      {15, "r_knee", Side::right, 12, false},
      {16, "r_ankle", Side::right, 13, false},
  }};
  return table;
}

const std::array<std::pair<int, int>, kNumSegments>& skeleton_segments() {
  static const std::array<std::pair<int, int>, kNumSegments> segs = {{
      {0, 1}, {1, 2}, {2, 3},                // head-neck-spine-sacra
      {1, 4}, {4, 5}, {5, 6},                // left arm
      {1, 7}, {7, 8}, {8, 9},                // right arm
      {3, 10}, {10, 11}, {11, 12},           // left leg
      {3, 13}, {13, 14}, {14, 15},           // right leg
  }};
  return segs;
}

const std::array<int, 10>& registration_subset() {
  static const std::array<int, 10> subset = {0, 1, 2, 3, 4, 6, 7, 8, 10, 13};
  return subset;
}

const std::array<int, 12>& limb_landmarks() {
  static const std::array<int, 12> limbs = {4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15};
  return limbs;
}

int swap_partner(int position) {
  if (position < 0 || position >= kNumLandmarks) {
    throw std::out_of_range("landmark position " + std::to_string(position));
  }
  return landmark_table()[static_cast<std::size_t>(position)].partner - 1;
}

std::string_view side_name(Side s) {
  switch (s) {
    case Side::left:
      return "left";
    case Side::right:
      return "right";
    case Side::midline:
      break;
  }
  return "midline";
}

}  // namespace volpose
