// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/ssl/refine.hpp"

#include <cmath>

#include "volpose/core/io.hpp"

namespace volpose::ssl {

using nlohmann::json;

void RefineConfig::validate() const {
  if (iterations < 0) throw std::invalid_argument("iterations must be non-negative");
  if (!(lr > 0.0)) throw std::invalid_argument("refinement learning rate must be positive");
  if (k < 1) throw std::invalid_argument("support size K must be at least 1");
}

json refine_config_to_json(const RefineConfig& c) {
  json j = {{"iterations", c.iterations},
            {"lr", c.lr},
            {"k", c.k},
            {"similarity", c.similarity},
            {"snapshot_each_iter", c.snapshot_each_iter},
            {"decode_window", c.decode.window},
            {"confidence_floor", c.decode.confidence_floor},
            {"subtract_background", c.decode.subtract_background}};
  if (c.gcp) {
    j["gcp"] = {{"policy", autodiff::policy_name(c.gcp->policy)}, {"k", c.gcp->k}, {"manual", c.gcp->manual}};
  } else {
    j["gcp"] = "off";
  }
  return j;
}

RefineConfig refine_config_from_json(const json& j) {
  RefineConfig c;
  c.iterations = j.value("iterations", c.iterations);
  c.lr = j.value("lr", c.lr);
  c.k = j.value("k", c.k);
  c.similarity = j.value("similarity", c.similarity);
  c.snapshot_each_iter = j.value("snapshot_each_iter", c.snapshot_each_iter);
  c.decode.window = j.value("decode_window", c.decode.window);
  c.decode.confidence_floor = j.value("confidence_floor", c.decode.confidence_floor);
  c.decode.subtract_background = j.value("subtract_background", c.decode.subtract_background);
  if (j.contains("gcp") && j.at("gcp").is_object()) {
    autodiff::CheckpointRequest r;
    r.policy = autodiff::policy_from_name(j.at("gcp").at("policy").get<std::string>());
    r.k = j.at("gcp").value("k", std::size_t{0});
    r.manual = j.at("gcp").value("manual", std::vector<autodiff::NodeId>{});
    c.gcp = r;
  }
  c.validate();
  return c;
}

RefineResult refine(const detector::Detector& base, const Volume& volume, const poselib::PoseLibrary& library,
                    const RefineConfig& cfg) {
  cfg.validate();
  detector::Detector det = base;
  const detector::Prepared prep = detector::prepare(volume, det.config());
  autodiff::Adam opt({.lr = cfg.lr, .beta1 = 0.5, .beta2 = 0.999});

  RefineResult r;
  r.initial = heatmap::decode(det.infer(prep), cfg.decode);
  r.final_pose = r.initial;
  DecodedPose current = r.initial;
  for (int it = 0; it < cfg.iterations; ++it) {
    IterationRecord rec;
    rec.iteration = it + 1;
    rec.decoded = current;
    const poselib::SupportSet support =
        poselib::retrieve_support(current, library, {.k = cfg.k, .similarity = cfg.similarity});
    if (support.declined) {
      r.declined = true;
      r.message = support.reason;
      r.final_pose = r.initial;
      return r;
    }
    double err = 0.0;
    for (const auto& e : support.entries) {
      err += e.error_mm;
      rec.support_ids.push_back(e.atlas_id);
    }
    rec.mean_support_error_mm = err / static_cast<double>(support.entries.size());

    const heatmap::HeatmapStack proxy =
        poselib::build_label_proxy(support, prep.grid, det.config().sigma_vox);
    auto [loss, grads] = det.loss_and_gradients(prep, proxy.values, cfg.gcp);
    if (!std::isfinite(loss)) {
      r.aborted = true;
      r.message = "non-finite refinement loss at iteration " + std::to_string(it + 1);
      r.final_pose = r.initial;
      return r;
    }
    opt.step(det.parameters(), grads);
    rec.loss_before = loss;
    rec.loss_after = det.loss(prep, proxy.values);
    r.trace.push_back(std::move(rec));
    current = heatmap::decode(det.infer(prep), cfg.decode);
  }
  r.final_pose = current;
  return r;
}

BatchResult refine_batch(const detector::Detector& base, const std::vector<RefineCase>& cases,
                         const poselib::PoseLibrary& library, const RefineConfig& cfg) {
  BatchResult b;
  double sum_initial = 0.0, sum_final = 0.0;
  std::size_t n_landmarks = 0;
  for (const auto& c : cases) {
    b.ids.push_back(c.id);
    ++b.summary.cases;
    try {
      RefineResult r = refine(base, c.volume, library, cfg);
      b.summary.declined += r.declined ? 1 : 0;
      b.summary.aborted += r.aborted ? 1 : 0;
      if (c.ground_truth) {
        for (std::size_t j = 0; j < kNumLandmarks; ++j) {
          sum_initial += (r.initial.pose.xyz[j] - c.ground_truth->xyz[j]).norm();
          sum_final += (r.final_pose.pose.xyz[j] - c.ground_truth->xyz[j]).norm();
          ++n_landmarks;
        }
      }
      b.results.emplace_back(std::move(r));
      b.errors.emplace_back();
    } catch (const std::exception& e) {
      ++b.summary.failed;
      b.results.emplace_back(std::nullopt);
      b.errors.emplace_back(e.what());
    }
  }
  if (n_landmarks > 0) {
    b.summary.mean_error_initial_mm = sum_initial / static_cast<double>(n_landmarks);
    b.summary.mean_error_final_mm = sum_final / static_cast<double>(n_landmarks);
  }
  return b;
}

json trace_to_json(const RefineResult& r, double spacing_mm) {
  json iters = json::array();
  for (const auto& rec : r.trace) {
    iters.push_back({{"iteration", rec.iteration},
                     {"loss_before", rec.loss_before},
                     {"loss_after", rec.loss_after},
                     {"mean_support_error_mm", rec.mean_support_error_mm},
                     {"support_ids", rec.support_ids},
                     {"pose", pose_to_json(rec.decoded.pose, spacing_mm)},
                     {"confidence", rec.decoded.confidence}});
  }
  return {{"format", "volpose.refine_trace"},
          {"version", 1},
          {"declined", r.declined},
          {"aborted", r.aborted},
          {"message", r.message},
          {"iterations", iters}};
}

}  // namespace volpose::ssl
