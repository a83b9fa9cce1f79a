// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// On-disk formats.
//
// Volume: `<stem>.raw` holds little-endian float32 samples, x fastest, and
// `<stem>.json` is the header {format, version, dims, spacing_mm, dtype,
// order, data_file}.
//
// Pose: a JSON object {format, version, spacing_mm, landmarks: 16 x {index,
// name, xyz_mm, valid}}. Extra top-level keys are preserved on write.

#ifndef VOLPOSE_CORE_IO_HPP
#define VOLPOSE_CORE_IO_HPP

#include <filesystem>
#include <stdexcept>
#include <string>

#include "json.hpp"

#include "volpose/core/pose.hpp"
#include "volpose/core/volume.hpp"

namespace volpose {

inline constexpr int kVolumeFormatVersion = 1;
inline constexpr int kPoseFormatVersion = 1;

class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// `header_path` names the JSON header; the raw file sits next to it with the
/// same stem. `extra` keys are merged into the header.
void write_volume(const Volume& v, const std::filesystem::path& header_path,
                  const nlohmann::json& extra = nlohmann::json::object());
Volume read_volume(const std::filesystem::path& header_path);

nlohmann::json pose_to_json(const Pose& p, double spacing_mm);
/// Returns the pose; `spacing_mm` receives the recorded spacing reference.
Pose pose_from_json(const nlohmann::json& j, double* spacing_mm = nullptr);

void write_pose(const Pose& p, double spacing_mm, const std::filesystem::path& path,
                const nlohmann::json& extra = nlohmann::json::object());
Pose read_pose(const std::filesystem::path& path, double* spacing_mm = nullptr);

nlohmann::json read_json(const std::filesystem::path& path);
/// Writes `j` with two-space indentation and a trailing newline.
void write_json(const nlohmann::json& j, const std::filesystem::path& path);

}  // namespace volpose

#endif  // VOLPOSE_CORE_IO_HPP
