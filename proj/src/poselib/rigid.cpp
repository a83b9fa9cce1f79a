// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/poselib/rigid.hpp"

#include <cmath>
#include <sstream>

#include <Eigen/LU>
#include <Eigen/SVD>

namespace volpose::poselib {

namespace {

constexpr double kCollinearRatio = 1e-10;

Eigen::Vector3d centroid(const std::vector<Eigen::Vector3d>& pts) {
  Eigen::Vector3d c = Eigen::Vector3d::Zero();
  for (const auto& p : pts) c += p;
  return c / static_cast<double>(pts.size());
}

// Ratio of the second to the first singular value of the centred scatter
// matrix (a squared length ratio); near zero when the points lie on a line.
double spread_ratio(const std::vector<Eigen::Vector3d>& pts, const Eigen::Vector3d& c) {
  Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
  for (const auto& p : pts) s += (p - c) * (p - c).transpose();
  const Eigen::Vector3d sv = Eigen::JacobiSVD<Eigen::Matrix3d>(s).singularValues();
  return sv[0] > 0.0 ? sv[1] / sv[0] : 0.0;
}

}  // namespace

Pose RigidTransform::apply(const Pose& p) const {
  Pose out = p;
  for (auto& x : out.xyz) x = apply(x);
  return out;
}

RigidFit fit_rigid(const std::vector<Eigen::Vector3d>& src, const std::vector<Eigen::Vector3d>& dst,
                   bool similarity) {
  if (src.size() != dst.size()) throw RegistrationError("point lists differ in length");
  if (src.size() < 3) {
    throw RegistrationError("rigid fit needs at least 3 point pairs, got " + std::to_string(src.size()));
  }
  const Eigen::Vector3d cs = centroid(src), cd = centroid(dst);
  const double rs = spread_ratio(src, cs), rd = spread_ratio(dst, cd);
  if (rs < kCollinearRatio || rd < kCollinearRatio) {
    std::ostringstream msg;
    msg << "rank-deficient configuration: spread ratio src " << rs << ", dst " << rd
        << " (threshold " << kCollinearRatio << ")";
    throw RegistrationError(msg.str());
  }

  Eigen::Matrix3d h = Eigen::Matrix3d::Zero();
  double src_var = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    h += (src[i] - cs) * (dst[i] - cd).transpose();
    src_var += (src[i] - cs).squaredNorm();
  }
  Eigen::JacobiSVD<Eigen::Matrix3d> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  Eigen::Matrix3d d = Eigen::Matrix3d::Identity();
  if ((svd.matrixV() * svd.matrixU().transpose()).determinant() < 0.0) d(2, 2) = -1.0;

  RigidFit fit;
  fit.transform.rotation = svd.matrixV() * d * svd.matrixU().transpose();
  if (similarity) fit.transform.scale = (svd.singularValues().asDiagonal() * d).trace() / src_var;
  fit.transform.translation = cd - fit.transform.scale * (fit.transform.rotation * cs);

  double sq = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) sq += (fit.transform.apply(src[i]) - dst[i]).squaredNorm();
  fit.rms = std::sqrt(sq / static_cast<double>(src.size()));
  return fit;
}

}  // namespace volpose::poselib
