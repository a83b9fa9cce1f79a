// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/core/io.hpp"

#include <bit>
#include <cmath>
#include <fstream>

namespace volpose {

using nlohmann::json;

static_assert(std::endian::native == std::endian::little,
              "volume samples are written in host order; big-endian hosts are unsupported");

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw FormatError("short write to " + path.string());
}

void write_volume(const Volume& v, const std::filesystem::path& header_path,
                  const json& extra) {
  if (v.data.size() != static_cast<std::size_t>(v.numel())) {
    throw FormatError("volume buffer does not match its extents");
  }
  auto raw_path = header_path;
  raw_path.replace_extension(".raw");
  json header = extra;
  header["format"] = "volpose.volume";
  header["version"] = kVolumeFormatVersion;
  header["dims"] = v.dims;
  header["spacing_mm"] = {v.spacing_mm, v.spacing_mm, v.spacing_mm};
  header["dtype"] = "f32le";
  header["order"] = "x_fastest";
  header["data_file"] = raw_path.filename().string();

  std::ofstream raw(raw_path, std::ios::binary | std::ios::trunc);
  if (!raw) throw FormatError("cannot write " + raw_path.string());
  raw.write(reinterpret_cast<const char*>(v.data.data()),
            static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!raw) throw FormatError("short write to " + raw_path.string());
  write_json(header, header_path);
}

Volume read_volume(const std::filesystem::path& header_path) {
  const json h = read_json(header_path);
  if (h.value("format", "") != "volpose.volume") {
    throw FormatError(header_path.string() + ": not a volume header");
  }
  if (h.value("version", 0) != kVolumeFormatVersion) {
    throw FormatError(header_path.string() + ": unsupported volume version");
  }
  if (h.value("dtype", "") != "f32le") throw FormatError(header_path.string() + ": dtype must be f32le");
  const auto dims = h.at("dims").get<Dims>();
  const auto sp = h.at("spacing_mm").get<std::vector<double>>();
  if (sp.size() != 3 || sp[0] != sp[1] || sp[1] != sp[2]) {
    throw FormatError(header_path.string() + ": spacing must be isotropic");
  }
  Volume v(dims, sp[0]);
  const auto raw_path = header_path.parent_path() / h.at("data_file").get<std::string>();
  std::ifstream raw(raw_path, std::ios::binary);
  if (!raw) throw FormatError("cannot open " + raw_path.string());
  const auto bytes = static_cast<std::streamsize>(v.data.size() * sizeof(float));
  raw.read(reinterpret_cast<char*>(v.data.data()), bytes);
  if (raw.gcount() != bytes || raw.peek() != std::char_traits<char>::eof()) {
    throw FormatError(raw_path.string() + ": size disagrees with header dims");
  }
  return v;
}

json pose_to_json(const Pose& p, double spacing_mm) {
  json lms = json::array();
  const auto& table = landmark_table();
  for (int i = 0; i < kNumLandmarks; ++i) {
    const auto& x = p.xyz[static_cast<std::size_t>(i)];
    lms.push_back({{"index", table[static_cast<std::size_t>(i)].index},
                   {"name", table[static_cast<std::size_t>(i)].name},
                   {"xyz_mm", {x.x(), x.y(), x.z()}},
                   {"valid", p.valid[static_cast<std::size_t>(i)]}});
  }
  return {{"format", "volpose.pose"},
          {"version", kPoseFormatVersion},
          {"spacing_mm", spacing_mm},
          {"landmarks", std::move(lms)}};
}

Pose pose_from_json(const json& j, double* spacing_mm) {
  if (j.value("format", "") != "volpose.pose" || j.value("version", 0) != kPoseFormatVersion) {
    throw FormatError("not a version " + std::to_string(kPoseFormatVersion) + " pose record");
  }
  const auto& lms = j.at("landmarks");
  if (lms.size() != kNumLandmarks) throw FormatError("pose must list 16 landmarks");
  Pose p;
  std::array<bool, kNumLandmarks> seen{};
  for (const auto& lm : lms) {
    const int idx = lm.at("index").get<int>();
    if (idx < 1 || idx > kNumLandmarks) throw FormatError("landmark index out of range");
    if (seen[static_cast<std::size_t>(idx - 1)]) {
      throw FormatError("landmark " + std::to_string(idx) + " listed twice");
    }
    seen[static_cast<std::size_t>(idx - 1)] = true;
    const auto c = lm.at("xyz_mm").get<std::vector<double>>();
    if (c.size() != 3) throw FormatError("landmark " + std::to_string(idx) + ": xyz_mm needs 3 values");
    const auto pos = static_cast<std::size_t>(idx - 1);
    p.xyz[pos] = Eigen::Vector3d(c[0], c[1], c[2]);
    p.valid[pos] = lm.value("valid", true);
    if (!p.xyz[pos].allFinite()) throw FormatError("landmark " + std::to_string(idx) + " is not finite");
  }
  if (spacing_mm != nullptr) *spacing_mm = j.value("spacing_mm", 1.0);
  return p;
}

void write_pose(const Pose& p, double spacing_mm, const std::filesystem::path& path,
                const json& extra) {
  json j = extra;
  j.update(pose_to_json(p, spacing_mm));
  write_json(j, path);
}

Pose read_pose(const std::filesystem::path& path, double* spacing_mm) {
  return pose_from_json(read_json(path), spacing_mm);
}

}  // namespace volpose
