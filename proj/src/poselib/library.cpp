// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/poselib/library.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "volpose/core/io.hpp"

namespace volpose::poselib {

using nlohmann::json;

void PoseLibrary::validate() const {
  std::set<std::string> ids;
  for (const auto& a : atlases) {
    if (!ids.insert(a.id).second) throw std::invalid_argument("duplicate atlas id '" + a.id + "'");
    for (int j : registration_subset()) {
      if (!a.pose.valid[static_cast<std::size_t>(j)]) {
        throw std::invalid_argument("atlas '" + a.id + "' lacks registration landmark " +
                                    std::to_string(j + 1));
      }
    }
  }
}

json library_to_json(const PoseLibrary& lib) {
  json atlases = json::array();
  for (const auto& a : lib.atlases) {
    json lms = json::array();
    json mask = json::array();
    for (int j = 0; j < kNumLandmarks; ++j) {
      const auto& p = a.pose.xyz[static_cast<std::size_t>(j)];
      lms.push_back({p.x(), p.y(), p.z()});
      mask.push_back(a.pose.valid[static_cast<std::size_t>(j)]);
    }
    atlases.push_back({{"id", a.id}, {"landmarks_mm", lms}, {"present_mask", mask}, {"source", a.source}});
  }
  return {{"format", "volpose.library"}, {"version", kLibraryFormatVersion}, {"atlases", atlases}};
}

PoseLibrary library_from_json(const json& j) {
  // A bare array of records is accepted as well as the wrapped form.
  const json* records = &j;
  if (j.is_object()) {
    if (j.value("format", "") != "volpose.library" || j.value("version", 0) != kLibraryFormatVersion) {
      throw FormatError("not a version " + std::to_string(kLibraryFormatVersion) + " pose library");
    }
    records = &j.at("atlases");
  }
  PoseLibrary lib;
  for (const auto& r : *records) {
    Atlas a;
    a.id = r.at("id").get<std::string>();
    a.source = r.value("source", "");
    const auto& lms = r.at("landmarks_mm");
    const auto& mask = r.at("present_mask");
    if (lms.size() != kNumLandmarks || mask.size() != kNumLandmarks) {
      throw FormatError("atlas '" + a.id + "' must list 16 landmarks");
    }
    for (std::size_t i = 0; i < kNumLandmarks; ++i) {
      const auto c = lms[i].get<std::vector<double>>();
      if (c.size() != 3) throw FormatError("atlas '" + a.id + "': landmark needs 3 coordinates");
      a.pose.xyz[i] = Eigen::Vector3d(c[0], c[1], c[2]);
      a.pose.valid[i] = mask[i].get<bool>();
    }
    lib.atlases.push_back(std::move(a));
  }
  lib.validate();
  return lib;
}

void save_library(const PoseLibrary& lib, const std::filesystem::path& path, const json& extra) {
  json j = extra;
  j.update(library_to_json(lib));
  write_json(j, path);
}

PoseLibrary load_library(const std::filesystem::path& path) { return library_from_json(read_json(path)); }

double registration_error(const Pose& atlas, const Pose& query, const RigidTransform& t,
                          const std::vector<int>& positions) {
  double e = 0.0;
  for (int j : positions) {
    const auto p = static_cast<std::size_t>(j);
    e += (t.apply(atlas.xyz[p]) - query.xyz[p]).norm();
  }
  return e;
}

std::vector<int> usable_subset(const Pose& query) {
  std::vector<int> used;
  for (int j : registration_subset()) {
    if (query.valid[static_cast<std::size_t>(j)]) used.push_back(j);
  }
  return used;
}

SupportSet retrieve_support(const DecodedPose& query, const PoseLibrary& lib, const RetrievalOptions& opt) {
  if (opt.k < 1) throw std::invalid_argument("support size K must be at least 1");
  if (static_cast<std::size_t>(opt.k) > lib.size()) {
    throw std::invalid_argument("support size K=" + std::to_string(opt.k) + " exceeds library size " +
                                std::to_string(lib.size()));
  }
  SupportSet out;
  out.used_landmarks = usable_subset(query.pose);
  if (out.used_landmarks.size() < static_cast<std::size_t>(kMinRegistrationPoints)) {
    out.declined = true;
    out.reason = "only " + std::to_string(out.used_landmarks.size()) +
                 " registration landmarks are valid; at least 4 are required";
    return out;
  }

  std::vector<Eigen::Vector3d> dst;
  for (int j : out.used_landmarks) dst.push_back(query.pose.xyz[static_cast<std::size_t>(j)]);

  std::vector<SupportEntry> scored;
  scored.reserve(lib.size());
  for (const auto& a : lib.atlases) {
    std::vector<Eigen::Vector3d> src;
    for (int j : out.used_landmarks) src.push_back(a.pose.xyz[static_cast<std::size_t>(j)]);
    SupportEntry e;
    e.atlas_id = a.id;
    try {
      e.transform = fit_rigid(src, dst, opt.similarity).transform;
      e.error_mm = registration_error(a.pose, query.pose, e.transform, out.used_landmarks);
    } catch (const RegistrationError&) {
      e.error_mm = std::numeric_limits<double>::infinity();
    }
    e.aligned = e.transform.apply(a.pose);
    scored.push_back(std::move(e));
  }
  const auto k = static_cast<std::ptrdiff_t>(opt.k);
  std::partial_sort(scored.begin(), scored.begin() + k, scored.end(), [](const auto& a, const auto& b) {
    if (a.error_mm != b.error_mm) return a.error_mm < b.error_mm;
    return a.atlas_id < b.atlas_id;
  });
  scored.resize(static_cast<std::size_t>(opt.k));
  out.entries = std::move(scored);
  return out;
}

heatmap::HeatmapStack build_label_proxy(const SupportSet& support, const Grid& grid, double sigma_vox) {
  if (support.entries.empty()) throw std::invalid_argument("label proxy needs a non-empty support set");
  heatmap::HeatmapStack proxy(grid);
  const auto n = static_cast<std::size_t>(grid.numel());
  std::vector<double> acc(n);
  std::vector<float> one(n);
  const double inv_k = 1.0 / static_cast<double>(support.entries.size());
  for (int j = 0; j < kNumLandmarks; ++j) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (const auto& e : support.entries) {
      const auto p = static_cast<std::size_t>(j);
      if (!e.aligned.valid[p]) continue;
      heatmap::encode_channel(e.aligned.xyz[p], grid, sigma_vox, one.data());
      for (std::size_t i = 0; i < n; ++i) acc[i] += one[i];
    }
    float* out = proxy.channel(j);
    for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<float>(acc[i] * inv_k);
  }
  return proxy;
}

}  // namespace volpose::poselib
