// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/phantom/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>
#include <stdexcept>

#include <Eigen/Geometry>

#include "volpose/core/io.hpp"

namespace volpose::phantom {

using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(Range, lo, hi)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(
    PhantomSpec, dims, spacing_mm, margin_mm, trunk_segment, head_length, shoulder_half_width,
    hip_half_width, upper_arm, forearm, thigh, shin, scale, spine_curl, head_tilt, limb_cone_deg,
    elbow_flex, knee_flex, torso_radius_mm, head_radius_mm, limb_radius_mm, joint_radius_mm,
    segment_intensity, left_limb_offset, background, multiplicative_noise, additive_noise,
    shadow_probability, shadow_half_angle_deg, max_attempts)

json spec_to_json(const PhantomSpec& s) { return s; }

PhantomSpec spec_from_json(const json& j) {
  PhantomSpec s = j.get<PhantomSpec>();
  for (auto d : s.dims) {
    if (d < 8) throw std::invalid_argument("phantom extents must be at least 8 voxels");
  }
  if (!(s.spacing_mm > 0.0)) throw std::invalid_argument("phantom spacing must be positive");
  if (s.max_attempts < 1) throw std::invalid_argument("max_attempts must be positive");
  return s;
}

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

// Landmark positions (0-based).
enum : int {
  kHeadTop, kNeck, kSpine, kSacra,
  kLShoulder, kLElbow, kLWrist, kRShoulder, kRElbow, kRWrist,
  kLHip, kLKnee, kLAnkle, kRHip, kRKnee, kRAnkle
};

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}
  double uniform(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng_); }
  double uniform(const Range& r) { return r.lo == r.hi ? r.lo : uniform(r.lo, r.hi); }
  double normal() { return normal_(rng_); }
  bool bernoulli(double p) { return uniform(0.0, 1.0) < p; }

  Eigen::Matrix3d rotation() {
    Eigen::Quaterniond q(normal(), normal(), normal(), normal());
    q.normalize();
    return q.toRotationMatrix();
  }

  // Unit vector within `max_deg` of `axis`, uniform over the spherical cap.
  Eigen::Vector3d in_cone(const Eigen::Vector3d& axis, double max_deg) {
    const double c = uniform(std::cos(max_deg * kDeg), 1.0);
    const double phi = uniform(0.0, 2.0 * std::numbers::pi);
    const double s = std::sqrt(std::max(0.0, 1.0 - c * c));
    const Eigen::Vector3d a = axis.normalized();
    const Eigen::Vector3d u = a.unitOrthogonal();
    const Eigen::Vector3d v = a.cross(u);
    return (c * a + s * (std::cos(phi) * u + std::sin(phi) * v)).normalized();
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Rotates `d` toward the component of `toward` orthogonal to it.
Eigen::Vector3d bend(const Eigen::Vector3d& d, const Eigen::Vector3d& toward, double deg) {
  Eigen::Vector3d a = toward - toward.dot(d) * d;
  if (a.norm() < 1e-9) a = d.unitOrthogonal();
  a.normalize();
  return (std::cos(deg * kDeg) * d + std::sin(deg * kDeg) * a).normalized();
}

struct Capsule {
  Eigen::Vector3d a, b;
  double radius;
  double intensity;
};

double distance_to_segment(const Eigen::Vector3d& p, const Eigen::Vector3d& a, const Eigen::Vector3d& b) {
  const Eigen::Vector3d ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0.0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (p - (a + t * ab)).norm();
}

void render(Volume& v, const std::vector<Capsule>& caps) {
  const double sp = v.spacing_mm;
  for (const auto& c : caps) {
    const double reach = 3.5 * c.radius;
    const Eigen::Vector3d lo = (c.a.cwiseMin(c.b).array() - reach).matrix();
    const Eigen::Vector3d hi = (c.a.cwiseMax(c.b).array() + reach).matrix();
    std::array<std::int64_t, 3> i0{}, i1{};
    for (int k = 0; k < 3; ++k) {
      i0[static_cast<std::size_t>(k)] = std::max<std::int64_t>(0, static_cast<std::int64_t>(std::floor(lo[k] / sp)));
      i1[static_cast<std::size_t>(k)] = std::min<std::int64_t>(v.dims[static_cast<std::size_t>(k)] - 1,
                                                               static_cast<std::int64_t>(std::ceil(hi[k] / sp)));
    }
    const double inv = 1.0 / (2.0 * c.radius * c.radius);
    for (std::int64_t z = i0[2]; z <= i1[2]; ++z) {
      for (std::int64_t y = i0[1]; y <= i1[1]; ++y) {
        for (std::int64_t x = i0[0]; x <= i1[0]; ++x) {
          const Eigen::Vector3d p(static_cast<double>(x) * sp, static_cast<double>(y) * sp,
                                  static_cast<double>(z) * sp);
          const double d = distance_to_segment(p, c.a, c.b);
          const float val = static_cast<float>(c.intensity * std::exp(-d * d * inv));
          float& dst = v.at(x, y, z);
          dst = std::max(dst, val);
        }
      }
    }
  }
}

json matrix_json(const Eigen::Matrix3d& m) {
  json rows = json::array();
  for (int r = 0; r < 3; ++r) rows.push_back({m(r, 0), m(r, 1), m(r, 2)});
  return rows;
}

json vec_json(const Eigen::Vector3d& p) { return {p.x(), p.y(), p.z()}; }

}  // namespace

PhantomCase sample_case(const PhantomSpec& spec, std::uint64_t seed) {
  Sampler s(seed);
  const Eigen::Vector3d up(0, 0, 1), anterior(0, 1, 0);
  const double sp = spec.spacing_mm;

  for (int attempt = 1; attempt <= spec.max_attempts; ++attempt) {
    std::array<Eigen::Vector3d, kNumLandmarks> b;  // body frame
    json joints;

    const double curl1 = s.uniform(spec.spine_curl), curl2 = s.uniform(spec.spine_curl);
    const double tilt = s.uniform(spec.head_tilt);
    auto sagittal = [](double deg) { return Eigen::Vector3d(0, std::sin(deg * kDeg), std::cos(deg * kDeg)); };
    b[kSacra] = Eigen::Vector3d::Zero();
    b[kSpine] = b[kSacra] + s.uniform(spec.trunk_segment) * sagittal(curl1);
    b[kNeck] = b[kSpine] + s.uniform(spec.trunk_segment) * sagittal(curl1 + curl2);
    b[kHeadTop] = b[kNeck] + s.uniform(spec.head_length) * sagittal(curl1 + curl2 + tilt);
    joints["spine_curl_deg"] = {curl1, curl2};
    joints["head_tilt_deg"] = tilt;

    for (int side = 0; side < 2; ++side) {
      const double sgn = side == 0 ? -1.0 : 1.0;  // left limbs sit at -x
      const int sh = side == 0 ? kLShoulder : kRShoulder;
      const int hip = side == 0 ? kLHip : kRHip;
      const char* tag = side == 0 ? "left" : "right";

      b[sh] = b[kNeck] + Eigen::Vector3d(sgn * s.uniform(spec.shoulder_half_width), 0.0, -1.5);
      const Eigen::Vector3d du = s.in_cone(Eigen::Vector3d(sgn * 0.55, 0.25, -0.8), spec.limb_cone_deg);
      const double elbow = s.uniform(spec.elbow_flex);
      b[sh + 1] = b[sh] + s.uniform(spec.upper_arm) * du;
      b[sh + 2] = b[sh + 1] + s.uniform(spec.forearm) * bend(du, anterior, elbow);

      b[hip] = b[kSacra] + Eigen::Vector3d(sgn * s.uniform(spec.hip_half_width), 0.0, -1.0);
      const Eigen::Vector3d dt = s.in_cone(Eigen::Vector3d(sgn * 0.25, 0.55, -0.8), spec.limb_cone_deg);
      const double knee = s.uniform(spec.knee_flex);
      b[hip + 1] = b[hip] + s.uniform(spec.thigh) * dt;
      b[hip + 2] = b[hip + 1] + s.uniform(spec.shin) * bend(dt, -anterior, knee);

      joints[tag] = {{"upper_arm_dir", vec_json(du)},
                     {"elbow_flex_deg", elbow},
                     {"thigh_dir", vec_json(dt)},
                     {"knee_flex_deg", knee}};
    }

    const double scale = s.uniform(spec.scale);
    const Eigen::Matrix3d rot = s.rotation();
    std::array<Eigen::Vector3d, kNumLandmarks> w;
    Eigen::Vector3d lo = Eigen::Vector3d::Constant(1e300), hi = Eigen::Vector3d::Constant(-1e300);
    for (int j = 0; j < kNumLandmarks; ++j) {
      w[j] = rot * (scale * b[j]);
      lo = lo.cwiseMin(w[j]);
      hi = hi.cwiseMax(w[j]);
    }
    Eigen::Vector3d t;
    bool fits = true;
    for (int k = 0; k < 3; ++k) {
      const double extent = static_cast<double>(spec.dims[static_cast<std::size_t>(k)] - 1) * sp;
      const double tlo = spec.margin_mm - lo[k], thi = extent - spec.margin_mm - hi[k];
      if (tlo > thi) {
        fits = false;
        break;
      }
      t[k] = s.uniform(tlo, thi);
    }
    if (!fits) continue;

    PhantomCase out;
    for (int j = 0; j < kNumLandmarks; ++j) {
      out.pose.xyz[static_cast<std::size_t>(j)] = w[j] + t;
      out.pose.valid[static_cast<std::size_t>(j)] = true;
    }
    const auto& segs = skeleton_segments();
    for (std::size_t e = 0; e < segs.size(); ++e) {
      out.segment_lengths[e] = (out.pose.xyz[static_cast<std::size_t>(segs[e].second)] -
                                out.pose.xyz[static_cast<std::size_t>(segs[e].first)])
                                   .norm();
    }

    // Appearance.
    auto P = [&](int j) { return out.pose.xyz[static_cast<std::size_t>(j)]; };
    std::vector<Capsule> caps;
    json intensities = json::array();
    const auto& table = landmark_table();
    for (std::size_t e = 0; e < segs.size(); ++e) {
      const auto [a, c] = segs[e];
      double r = spec.limb_radius_mm;
      if (e == 0) r = spec.head_radius_mm;
      else if (e <= 2) r = spec.torso_radius_mm;
      double inten = s.uniform(spec.segment_intensity);
      if (table[static_cast<std::size_t>(c)].side == Side::left) inten += spec.left_limb_offset;
      intensities.push_back(inten);
      caps.push_back({P(a), P(c), r * scale, inten});
    }
    for (int j = 0; j < kNumLandmarks; ++j) {
      double inten = 1.0;
      if (table[static_cast<std::size_t>(j)].side == Side::left) inten += spec.left_limb_offset;
      caps.push_back({P(j), P(j), spec.joint_radius_mm * scale, inten});
    }
    const Eigen::Vector3d belly = 0.5 * (P(kSpine) + P(kSacra)) +
                                  rot * anterior * (spec.torso_radius_mm + 1.4) * scale;
    caps.push_back({belly, belly, 1.4 * scale, 0.9});

    out.volume = Volume(spec.dims, sp, 0.0f);
    render(out.volume, caps);

    for (auto& x : out.volume.data) {
      double val = spec.background + x;
      val *= std::max(0.0, 1.0 + spec.multiplicative_noise * s.normal());
      val += spec.additive_noise * s.normal();
      x = static_cast<float>(val);
    }

    json shadows = json::array();
    if (s.bernoulli(spec.shadow_probability)) {
      const int face = static_cast<int>(s.uniform(0.0, 6.0));
      const int axis = std::min(face / 2, 2);
      Eigen::Vector3d apex;
      Eigen::Vector3d extent;
      for (int k = 0; k < 3; ++k) extent[k] = static_cast<double>(spec.dims[static_cast<std::size_t>(k)] - 1) * sp;
      for (int k = 0; k < 3; ++k) apex[k] = s.uniform(0.0, extent[k]);
      apex[axis] = (face % 2 == 0) ? 0.0 : extent[axis];
      Eigen::Vector3d aim = 0.5 * extent;
      for (int k = 0; k < 3; ++k) aim[k] += s.uniform(-0.15, 0.15) * extent[k];
      const Eigen::Vector3d dir = (aim - apex).normalized();
      const double half = s.uniform(spec.shadow_half_angle_deg);
      const double cos_half = std::cos(half * kDeg);
      for (std::int64_t z = 0; z < spec.dims[2]; ++z)
        for (std::int64_t y = 0; y < spec.dims[1]; ++y)
          for (std::int64_t x = 0; x < spec.dims[0]; ++x) {
            const Eigen::Vector3d p = Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y),
                                                      static_cast<double>(z)) * sp - apex;
            const double n = p.norm();
            if (n > 0.0 && p.dot(dir) >= cos_half * n) out.volume.at(x, y, z) = 0.0f;
          }
      shadows.push_back({{"apex_mm", vec_json(apex)}, {"axis", vec_json(dir)}, {"half_angle_deg", half}});
    }

    out.provenance = {{"seed", seed},
                      {"attempts", attempt},
                      {"scale", scale},
                      {"rotation", matrix_json(rot)},
                      {"translation_mm", vec_json(t)},
                      {"joints", joints},
                      {"segment_intensity", intensities},
                      {"segment_lengths_mm", out.segment_lengths},
                      {"shadows", shadows}};
    return out;
  }
  throw std::runtime_error("phantom spec does not fit the grid after " + std::to_string(spec.max_attempts) +
                           " attempts (seed " + std::to_string(seed) + ")");
}

std::string_view augmentation_name(Augmentation a) {
  switch (a) {
    case Augmentation::flip_x: return "flip_x";
    case Augmentation::flip_y: return "flip_y";
    case Augmentation::flip_z: return "flip_z";
    case Augmentation::rot90_x: return "rot90_x";
    case Augmentation::rot90_y: return "rot90_y";
    case Augmentation::rot90_z: return "rot90_z";
  }
  return "?";
}

Augmentation augmentation_from_name(std::string_view name) {
  for (auto a : {Augmentation::flip_x, Augmentation::flip_y, Augmentation::flip_z, Augmentation::rot90_x,
                 Augmentation::rot90_y, Augmentation::rot90_z}) {
    if (augmentation_name(a) == name) return a;
  }
  throw std::invalid_argument("unknown augmentation '" + std::string(name) + "'");
}

namespace {

bool is_flip(Augmentation a) {
  return a == Augmentation::flip_x || a == Augmentation::flip_y || a == Augmentation::flip_z;
}

Dims augmented_dims(const Dims& d, Augmentation a) {
  switch (a) {
    case Augmentation::rot90_x: return {d[0], d[2], d[1]};
    case Augmentation::rot90_y: return {d[2], d[1], d[0]};
    case Augmentation::rot90_z: return {d[1], d[0], d[2]};
    default: return d;
  }
}

// Maps a continuous voxel coordinate of the source grid into the output grid.
Eigen::Vector3d map_voxel(const Eigen::Vector3d& p, const Dims& d, Augmentation a) {
  const double ex = static_cast<double>(d[0] - 1), ey = static_cast<double>(d[1] - 1),
               ez = static_cast<double>(d[2] - 1);
  switch (a) {
    case Augmentation::flip_x: return {ex - p.x(), p.y(), p.z()};
    case Augmentation::flip_y: return {p.x(), ey - p.y(), p.z()};
    case Augmentation::flip_z: return {p.x(), p.y(), ez - p.z()};
    case Augmentation::rot90_x: return {p.x(), ez - p.z(), p.y()};
    case Augmentation::rot90_y: return {p.z(), p.y(), ex - p.x()};
    case Augmentation::rot90_z: return {ey - p.y(), p.x(), p.z()};
  }
  return p;
}

}  // namespace

Pose augment_pose(const Pose& p, const Dims& dims, double spacing_mm, Augmentation a) {
  Pose mapped;
  for (int j = 0; j < kNumLandmarks; ++j) {
    const auto pos = static_cast<std::size_t>(j);
    mapped.xyz[pos] = map_voxel(p.xyz[pos] / spacing_mm, dims, a) * spacing_mm;
    mapped.valid[pos] = p.valid[pos];
  }
  if (!is_flip(a)) return mapped;
  Pose swapped;
  for (int j = 0; j < kNumLandmarks; ++j) {
    const auto pos = static_cast<std::size_t>(j);
    const auto src = static_cast<std::size_t>(swap_partner(j));
    swapped.xyz[pos] = mapped.xyz[src];
    swapped.valid[pos] = mapped.valid[src];
  }
  return swapped;
}

PhantomCase augment(const PhantomCase& c, Augmentation a) {
  PhantomCase out;
  const Dims& d = c.volume.dims;
  out.volume = Volume(augmented_dims(d, a), c.volume.spacing_mm);
  for (std::int64_t z = 0; z < d[2]; ++z)
    for (std::int64_t y = 0; y < d[1]; ++y)
      for (std::int64_t x = 0; x < d[0]; ++x) {
        const Eigen::Vector3d q = map_voxel(Eigen::Vector3d(static_cast<double>(x), static_cast<double>(y),
                                                            static_cast<double>(z)), d, a);
        out.volume.at(static_cast<std::int64_t>(q.x()), static_cast<std::int64_t>(q.y()),
                      static_cast<std::int64_t>(q.z())) = c.volume.at(x, y, z);
      }
  out.pose = augment_pose(c.pose, d, c.volume.spacing_mm, a);
  out.provenance = c.provenance;
  out.provenance["augmentations"].push_back(augmentation_name(a));
  const auto& segs = skeleton_segments();
  for (std::size_t e = 0; e < segs.size(); ++e) {
    out.segment_lengths[e] = (out.pose.xyz[static_cast<std::size_t>(segs[e].second)] -
                              out.pose.xyz[static_cast<std::size_t>(segs[e].first)])
                                 .norm();
  }
  return out;
}

std::vector<std::uint64_t> derive_seeds(std::uint64_t seed, int count) {
  if (count < 0) throw std::invalid_argument("seed count must be non-negative");
  std::vector<std::uint64_t> out;
  std::set<std::uint64_t> seen;
  std::uint64_t state = seed;
  while (static_cast<int>(out.size()) < count) {
    // splitmix64
    std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    z ^= z >> 31;
    if (seen.insert(z).second) out.push_back(z);
  }
  return out;
}

json manifest_to_json(const Manifest& m) {
  json cases = json::array();
  for (const auto& e : m.entries) {
    cases.push_back({{"split", e.split},
                     {"id", e.id},
                     {"seed", e.seed},
                     {"volume", e.volume.generic_string()},
                     {"pose", e.pose.generic_string()}});
  }
  return {{"format", "volpose.manifest"},
          {"version", 1},
          {"master_seed", m.master_seed},
          {"spec", spec_to_json(m.spec)},
          {"cases", cases}};
}

Manifest manifest_from_json(const json& j) {
  if (j.value("format", "") != "volpose.manifest" || j.value("version", 0) != 1) {
    throw FormatError("not a version 1 dataset manifest");
  }
  Manifest m;
  m.master_seed = j.at("master_seed").get<std::uint64_t>();
  m.spec = spec_from_json(j.at("spec"));
  for (const auto& c : j.at("cases")) {
    m.entries.push_back({c.at("split").get<std::string>(), c.at("id").get<std::string>(),
                         c.at("seed").get<std::uint64_t>(), c.at("volume").get<std::string>(),
                         c.at("pose").get<std::string>()});
  }
  return m;
}

Manifest load_manifest(const std::filesystem::path& path) { return manifest_from_json(read_json(path)); }

Manifest make_dataset(const PhantomSpec& spec, int n_train, int n_test, std::uint64_t seed,
                      const std::filesystem::path& out_dir, bool overwrite, const json& extra) {
  if (n_train < 1 || n_test < 1) throw std::invalid_argument("n_train and n_test must be at least 1");
  const auto manifest_path = out_dir / "manifest.json";
  if (std::filesystem::exists(manifest_path) && !overwrite) {
    throw std::runtime_error(manifest_path.string() + " already exists; refusing to overwrite");
  }
  Manifest m;
  m.spec = spec;
  m.master_seed = seed;
  const auto seeds = derive_seeds(seed, n_train + n_test);
  std::set<std::filesystem::path> paths;
  for (int i = 0; i < n_train + n_test; ++i) {
    ManifestEntry e;
    e.split = i < n_train ? "train" : "test";
    const int local = i < n_train ? i : i - n_train;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%04d", e.split.c_str(), local);
    e.id = buf;
    e.seed = seeds[static_cast<std::size_t>(i)];
    e.volume = std::filesystem::path(e.split) / (e.id + ".vol.json");
    e.pose = std::filesystem::path(e.split) / (e.id + ".pose.json");
    if (!paths.insert(e.volume).second || !paths.insert(e.pose).second) {
      throw std::runtime_error("output path collision at " + e.volume.string());
    }
    m.entries.push_back(std::move(e));
  }
  std::filesystem::create_directories(out_dir / "train");
  std::filesystem::create_directories(out_dir / "test");
  for (const auto& e : m.entries) {
    const PhantomCase c = sample_case(spec, e.seed);
    json meta = extra;
    meta["case_id"] = e.id;
    write_volume(c.volume, out_dir / e.volume, meta);
    meta["provenance"] = c.provenance;
    write_pose(c.pose, spec.spacing_mm, out_dir / e.pose, meta);
  }
  json mj = extra;
  mj.update(manifest_to_json(m));
  write_json(mj, manifest_path);
  return m;
}

}  // namespace volpose::phantom
