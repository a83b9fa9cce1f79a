// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/metrics/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

#include "volpose/core/io.hpp"

namespace volpose::metrics {

using nlohmann::json;

Distances euclidean(const Pose& pred, const Pose& gt) {
  Distances d;
  for (std::size_t j = 0; j < kNumLandmarks; ++j) {
    d.valid[j] = pred.valid[j] && gt.valid[j];
    d.mm[j] = d.valid[j] ? (pred.xyz[j] - gt.xyz[j]).norm() : 0.0;
  }
  return d;
}

Distances euclidean(const Pose& pred, double pred_spacing_mm, const Pose& gt, double gt_spacing_mm) {
  if (std::abs(pred_spacing_mm - gt_spacing_mm) > 1e-9 * std::max(1.0, std::abs(gt_spacing_mm))) {
    throw std::invalid_argument("spacing reference mismatch: prediction " + std::to_string(pred_spacing_mm) +
                                " mm, ground truth " + std::to_string(gt_spacing_mm) + " mm");
  }
  return euclidean(pred, gt);
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 0; i <= 60; ++i) t.push_back(0.5 * i);
  return t;
}

PckCurve pck_curve(const std::vector<Distances>& cases, const std::vector<double>& thresholds) {
  if (thresholds.empty()) throw std::invalid_argument("PCK threshold grid is empty");
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    if (!(thresholds[i] > thresholds[i - 1])) throw std::invalid_argument("PCK thresholds must increase strictly");
  }
  std::size_t total = 0;
  for (const auto& c : cases)
    for (bool v : c.valid) total += v ? 1 : 0;
  if (total == 0) throw std::invalid_argument("PCK needs at least one valid distance");

  PckCurve out;
  out.thresholds = thresholds;
  out.pooled.assign(thresholds.size(), 0.0);
  for (std::size_t j = 0; j < kNumLandmarks; ++j) {
    out.per_landmark[j].assign(thresholds.size(), 0.0);
    std::size_t n = 0;
    for (const auto& c : cases) n += c.valid[j] ? 1 : 0;
    for (std::size_t t = 0; t < thresholds.size(); ++t) {
      std::size_t below = 0;
      for (const auto& c : cases) below += (c.valid[j] && c.mm[j] < thresholds[t]) ? 1 : 0;
      out.per_landmark[j][t] = n == 0 ? 0.0 : static_cast<double>(below) / static_cast<double>(n);
      out.pooled[t] += static_cast<double>(below);
    }
  }
  for (auto& v : out.pooled) v /= static_cast<double>(total);
  return out;
}

double auc(const std::vector<double>& thresholds, const std::vector<double>& pck) {
  if (thresholds.size() < 2) throw std::invalid_argument("AUC needs at least two thresholds");
  if (pck.size() != thresholds.size()) throw std::invalid_argument("PCK samples do not match the grid");
  double area = 0.0;
  for (std::size_t i = 1; i < thresholds.size(); ++i) {
    area += 0.5 * (pck[i] + pck[i - 1]) * (thresholds[i] - thresholds[i - 1]);
  }
  return 100.0 * area / (thresholds.back() - thresholds.front());
}

std::array<std::optional<double>, kNumSegments> segment_lengths(const Pose& p) {
  std::array<std::optional<double>, kNumSegments> out;
  const auto& segs = skeleton_segments();
  for (std::size_t e = 0; e < segs.size(); ++e) {
    const auto a = static_cast<std::size_t>(segs[e].first), b = static_cast<std::size_t>(segs[e].second);
    if (p.valid[a] && p.valid[b]) out[e] = (p.xyz[b] - p.xyz[a]).norm();
  }
  return out;
}

EvalReport evaluate(const std::vector<CaseResult>& cases, const std::vector<double>& thresholds) {
  if (cases.empty()) throw std::invalid_argument("nothing to evaluate");
  EvalReport r;
  for (const auto& c : cases) {
    r.case_ids.push_back(c.id);
    r.distances.push_back(euclidean(c.pred, c.gt));
    r.segment_lengths_mm.push_back(segment_lengths(c.pred));
  }
  r.pck = pck_curve(r.distances, thresholds);
  double all = 0.0;
  std::size_t n_all = 0;
  for (std::size_t j = 0; j < kNumLandmarks; ++j) {
    double s = 0.0;
    std::size_t n = 0;
    for (const auto& d : r.distances) {
      if (!d.valid[j]) continue;
      s += d.mm[j];
      ++n;
    }
    r.mean_mm[j] = n == 0 ? std::nan("") : s / static_cast<double>(n);
    all += s;
    n_all += n;
    r.auc_pct[j] = auc(thresholds, r.pck.per_landmark[j]);
  }
  r.mean_mm_all = all / static_cast<double>(n_all);
  r.auc_pct_all = auc(thresholds, r.pck.pooled);
  return r;
}

json report_to_json(const EvalReport& r) {
  json per_case = json::array();
  for (std::size_t i = 0; i < r.case_ids.size(); ++i) {
    json d = json::array();
    for (std::size_t j = 0; j < kNumLandmarks; ++j) {
      d.push_back(r.distances[i].valid[j] ? json(r.distances[i].mm[j]) : json(nullptr));
    }
    json seg = json::array();
    for (const auto& l : r.segment_lengths_mm[i]) seg.push_back(l ? json(*l) : json(nullptr));
    per_case.push_back({{"id", r.case_ids[i]}, {"distance_mm", d}, {"segment_length_mm", seg}});
  }
  json pck = json::object();
  pck["thresholds_mm"] = r.pck.thresholds;
  pck["pooled"] = r.pck.pooled;
  for (std::size_t j = 0; j < kNumLandmarks; ++j) pck["L" + std::to_string(j + 1)] = r.pck.per_landmark[j];
  return {{"format", "volpose.eval"},
          {"version", 1},
          {"case_count", r.case_ids.size()},
          {"mean_mm", r.mean_mm},
          {"auc_pct", r.auc_pct},
          {"mean_mm_all", r.mean_mm_all},
          {"auc_pct_all", r.auc_pct_all},
          {"pck", pck},
          {"cases", per_case}};
}

namespace {

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

void write_report(const EvalReport& r, const std::filesystem::path& dir, const json& extra) {
  std::filesystem::create_directories(dir);
  json j = extra;
  j.update(report_to_json(r));
  write_json(j, dir / "report.json");

  std::string header = "metric";
  for (int j2 = 1; j2 <= kNumLandmarks; ++j2) header += ",L" + std::to_string(j2);
  header += ",mean\n";

  std::ofstream table(dir / "table.csv", std::ios::trunc);
  if (!table) throw FormatError("cannot write " + (dir / "table.csv").string());
  table << header << "euclidean_mm";
  for (double v : r.mean_mm) table << ',' << fmt(v);
  table << ',' << fmt(r.mean_mm_all) << "\nauc_pct";
  for (double v : r.auc_pct) table << ',' << fmt(v);
  table << ',' << fmt(r.auc_pct_all) << '\n';

  std::ofstream pck(dir / "pck.csv", std::ios::trunc);
  if (!pck) throw FormatError("cannot write " + (dir / "pck.csv").string());
  std::string ph = "threshold_mm";
  for (int j2 = 1; j2 <= kNumLandmarks; ++j2) ph += ",L" + std::to_string(j2);
  pck << ph << ",mean\n";
  for (std::size_t t = 0; t < r.pck.thresholds.size(); ++t) {
    pck << fmt(r.pck.thresholds[t]);
    for (std::size_t j2 = 0; j2 < kNumLandmarks; ++j2) pck << ',' << fmt(r.pck.per_landmark[j2][t]);
    pck << ',' << fmt(r.pck.pooled[t]) << '\n';
  }
}

}  // namespace volpose::metrics
