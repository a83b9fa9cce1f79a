// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Acceptance suite. Prints one PASS/FAIL line per criterion and exits non-zero
// if any criterion fails. Criteria 8 and 10 drive the volpose binary through
// the full phantom pipeline twice.

#include <sys/wait.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Geometry>

#include "CLI11.hpp"

#include "support/gradcheck.hpp"
#include "support/metrics_fixture.hpp"
#include "volpose/autodiff/checkpoint_policy.hpp"
#include "volpose/cli/run_config.hpp"
#include "volpose/core/hash.hpp"
#include "volpose/core/io.hpp"
#include "volpose/detector/detector.hpp"
#include "volpose/heatmap/heatmap.hpp"
#include "volpose/metrics/metrics.hpp"
#include "volpose/poselib/library.hpp"
#include "volpose/poselib/rigid.hpp"

namespace {

namespace fs = std::filesystem;
using namespace volpose;
using Clock = std::chrono::steady_clock;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// ---------------------------------------------------------------------------
// 1. Gradient check

Outcome gradient_check() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(20240601);
  double worst = 0.0;
  std::string worst_name;
  int tensors = 0;
  std::string per;
  for (const auto& c : testing::primitive_cases()) {
    double case_worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto r = c.run(rng);
      tensors += r.tensors_checked;
      case_worst = std::max(case_worst, r.max_rel_error);
    }
    per += fmt(" %s=%.1e", c.name.c_str(), case_worst);
    if (case_worst >= worst) {
      worst = case_worst;
      worst_name = c.name;
    }
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 120.0,
          fmt("max relative error %.2e (%s) over %d tensors in %.1f s;", worst, worst_name.c_str(), tensors, secs) +
              per};
}

// ---------------------------------------------------------------------------
// 2-4. Checkpointing on the reference detector

struct StepRun {
  autodiff::GradientMap grads;
  double loss = 0.0;
  std::size_t peak = 0;
  double seconds = 0.0;
};

struct RefNet {
  detector::DetectorGraph net;
  autodiff::Graph::InputMap inputs;

  explicit RefNet(std::int64_t n) {
    detector::DetectorConfig cfg;  // depth 3, 8 base channels
    net = detector::build_detector(cfg, {n, n, n});
    net.graph.init_parameters(cfg.init_seed);
    std::mt19937_64 rng(static_cast<std::uint64_t>(n));
    std::normal_distribution<float> nd;
    autodiff::Tensor image({1, n, n, n}), target({kNumLandmarks, n, n, n});
    for (auto& v : image.data()) v = nd(rng);
    std::uniform_real_distribution<float> u(0.0f, 1.0f);
    for (auto& v : target.data()) v = u(rng);
    inputs = {{"image", image}, {"target", target}};
  }

  StepRun plain() {
    net.graph.clear_values();
    const auto t0 = Clock::now();
    StepRun r;
    r.loss = net.graph.forward(inputs, false);
    r.grads = net.graph.backward_plain();
    r.seconds = seconds_since(t0);
    r.peak = net.graph.stats().step_peak_bytes;
    return r;
  }

  StepRun checkpointed(const autodiff::CheckpointRequest& req) {
    net.graph.clear_values();
    const auto t0 = Clock::now();
    StepRun r;
    net.graph.set_checkpoints(autodiff::select_checkpoints(net.graph, req));
    r.loss = net.graph.forward(inputs, true);
    r.grads = net.graph.backward_checkpointed();
    r.seconds = seconds_since(t0);
    r.peak = net.graph.stats().step_peak_bytes;
    return r;
  }
};

bool bitwise_equal(const autodiff::GradientMap& a, const autodiff::GradientMap& b) {
  if (a.size() != b.size()) return false;
  for (const auto& [id, t] : a) {
    auto it = b.find(id);
    if (it == b.end() || !t.bitwise_equal(it->second)) return false;
  }
  return true;
}

Outcome checkpoint_equivalence() {
  const auto t0 = Clock::now();
  RefNet ref(32);
  const auto plain = ref.plain();
  const std::size_t k = static_cast<std::size_t>(std::lround(std::sqrt(static_cast<double>(ref.net.graph.size()))));
  const auto bb = ref.checkpointed({autodiff::CheckpointPolicy::block_boundary, 0, {}});
  const auto ek = ref.checkpointed({autodiff::CheckpointPolicy::every_k, k, {}});
  const bool eq_bb = bitwise_equal(plain.grads, bb.grads) && plain.loss == bb.loss;
  const bool eq_ek = bitwise_equal(plain.grads, ek.grads) && plain.loss == ek.loss;
  const double secs = seconds_since(t0);
  return {eq_bb && eq_ek && secs < 300.0,
          fmt("%zu nodes, %zu parameter tensors; block_boundary %s, every_k(k=%zu) %s; %.1f s",
              ref.net.graph.size(), plain.grads.size(), eq_bb ? "bitwise equal" : "DIFFERS", k,
              eq_ek ? "bitwise equal" : "DIFFERS", secs)};
}

Outcome memory_reduction() {
  RefNet ref(32);
  const auto plain = ref.plain();
  const auto bb = ref.checkpointed({autodiff::CheckpointPolicy::block_boundary, 0, {}});
  const double ratio = static_cast<double>(bb.peak) / static_cast<double>(plain.peak);

  // Simulated device: the budget a 25% saving would leave.
  const auto cap = static_cast<std::size_t>(0.75 * static_cast<double>(plain.peak));
  ref.net.graph.set_memory_cap(cap);
  bool plain_over = false;
  try {
    ref.plain();
  } catch (const autodiff::MemoryCapExceeded&) {
    plain_over = true;
  }

  RefNet big(40);
  big.net.graph.set_memory_cap(cap);
  bool big_fits = true;
  std::size_t big_peak = 0;
  try {
    big_peak = big.checkpointed({autodiff::CheckpointPolicy::block_boundary, 0, {}}).peak;
  } catch (const autodiff::MemoryCapExceeded&) {
    big_fits = false;
  }
  return {ratio <= 0.75 && plain_over && big_fits,
          fmt("peak ratio checkpointed/plain = %.3f (%zu / %zu bytes, %.1f%% lower); cap %zu bytes: plain 32^3 %s, "
              "checkpointed 40^3 %s (peak %zu bytes)",
              ratio, bb.peak, plain.peak, 100.0 * (1.0 - ratio), cap, plain_over ? "exceeds it" : "FITS",
              big_fits ? "runs under it" : "EXCEEDS it", big_peak)};
}

Outcome recompute_overhead() {
  RefNet ref(32);
  ref.plain();  // warm caches and allocator
  std::vector<double> tp, tc;
  for (int i = 0; i < 3; ++i) {
    tp.push_back(ref.plain().seconds);
    tc.push_back(ref.checkpointed({autodiff::CheckpointPolicy::block_boundary, 0, {}}).seconds);
  }
  std::sort(tp.begin(), tp.end());
  std::sort(tc.begin(), tc.end());
  const double ratio = tc[1] / tp[1];
  return {ratio < 2.5, fmt("step time ratio checkpointed/plain = %.2f (median %.3f s vs %.3f s)", ratio, tc[1], tp[1])};
}

// ---------------------------------------------------------------------------
// 5. Rigid registration

Outcome rigid_fit() {
  std::mt19937_64 rng(55);
  std::normal_distribution<double> n01;
  std::uniform_real_distribution<double> u(-30.0, 30.0);
  double worst_r = 0.0, worst_t = 0.0, sum_sq = 0.0;
  const double sigma = 0.5;
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Matrix3d r =
        Eigen::Quaterniond(n01(rng), n01(rng), n01(rng), n01(rng)).normalized().toRotationMatrix();
    const Eigen::Vector3d t(u(rng), u(rng), u(rng));
    std::vector<Eigen::Vector3d> src(10), dst(10), noisy(10);
    for (int i = 0; i < 10; ++i) {
      src[i] = {u(rng), u(rng), u(rng)};
      dst[i] = r * src[i] + t;
      noisy[i] = dst[i] + sigma * Eigen::Vector3d(n01(rng), n01(rng), n01(rng));
    }
    const auto fit = poselib::fit_rigid(src, dst);
    worst_r = std::max(worst_r, (fit.transform.rotation - r).norm());
    worst_t = std::max(worst_t, (fit.transform.translation - t).norm());
    // Per-coordinate residual, comparable with the per-axis noise sigma.
    const double rms_coord = poselib::fit_rigid(src, noisy).rms / std::sqrt(3.0);
    sum_sq += rms_coord * rms_coord;
  }
  const double rms = std::sqrt(sum_sq / 200.0);
  const bool ok = worst_r < 1e-9 && worst_t < 1e-9 && std::abs(rms - sigma) <= 0.2 * sigma;
  return {ok, fmt("max rotation Frobenius error %.2e, max translation error %.2e mm; noisy rms %.4f mm per "
                  "coordinate vs sigma %.2f (%.1f%% off)",
                  worst_r, worst_t, rms, sigma, 100.0 * std::abs(rms - sigma) / sigma)};
}

// ---------------------------------------------------------------------------
// 6. Retrieval against brute force

Pose random_pose(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(5.0, 60.0);
  Pose p;
  for (auto& x : p.xyz) x = {u(rng), u(rng), u(rng)};
  return p;
}

Outcome retrieval() {
  std::mt19937_64 rng(66);
  int compared = 0, mismatched = 0;
  for (int l = 0; l < 50; ++l) {
    poselib::PoseLibrary lib;
    for (int i = 0; i < 50; ++i) lib.atlases.push_back({fmt("lib%02d_atlas%02d", l, i), random_pose(rng), "random"});
    DecodedPose q{random_pose(rng), {}};
    q.confidence.fill(1.0);

    std::vector<std::pair<double, std::string>> brute;
    for (const auto& a : lib.atlases) {
      std::vector<Eigen::Vector3d> s, d;
      for (int pos : registration_subset()) {
        s.push_back(a.pose.xyz[pos]);
        d.push_back(q.pose.xyz[pos]);
      }
      const auto t = poselib::fit_rigid(s, d).transform;
      double e = 0.0;
      for (int pos : registration_subset()) e += (t.apply(a.pose.xyz[pos]) - q.pose.xyz[pos]).norm();
      brute.emplace_back(e, a.id);
    }
    std::sort(brute.begin(), brute.end());
    for (int k : {1, 5, 10}) {
      const auto s = poselib::retrieve_support(q, lib, {k, false});
      ++compared;
      bool same = static_cast<int>(s.entries.size()) == k;
      for (int i = 0; same && i < k; ++i) same = s.entries[i].atlas_id == brute[i].second;
      mismatched += same ? 0 : 1;
    }
  }
  return {mismatched == 0, fmt("%d of %d rankings (50 libraries x K in {1,5,10}) equal brute force", compared - mismatched,
                               compared)};
}

// ---------------------------------------------------------------------------
// 7. Heatmap round trip

Outcome heatmap_round_trip() {
  std::mt19937_64 rng(77);
  const Grid g{{64, 64, 64}, 1.0, Eigen::Vector3d::Zero()};
  std::uniform_real_distribution<double> u(0.0, 63.0);
  double worst = 0.0, sum = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Pose p;
    for (auto& x : p.xyz) x = {u(rng), u(rng), u(rng)};
    const auto d = heatmap::decode(heatmap::encode(p, g, 2.0));
    for (int j = 0; j < kNumLandmarks; ++j) {
      const double e = (d.pose.xyz[j] - p.xyz[j]).norm() / g.spacing_mm;
      worst = std::max(worst, e);
      sum += e;
    }
  }
  return {worst <= 0.5, fmt("max error %.3f voxel, mean %.3f voxel over 100 poses x 16 landmarks (sigma 2)", worst,
                            sum / 1600.0)};
}

// ---------------------------------------------------------------------------
// 8 and 10. Phantom pipeline through the command-line tool

struct PipelineResult {
  bool ok = false;
  std::string error;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
  double plain_mm = 0.0, ssl_mm = 0.0;
  double plain_limb_mm = 0.0, ssl_limb_mm = 0.0;
  int declined = 0;
  std::map<std::string, std::string> hashes;  // relative path -> sha256
};

int run_cli(const fs::path& log, const std::string& args) {
  const std::string cmd = "VOLPOSE_LOG=quiet '" VOLPOSE_CLI_PATH "' " + args + " >> '" + log.string() + "' 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

cli::RunConfig pipeline_config() {
  cli::RunConfig c;
  c.seed = 2024;
  c.n_train = 50;
  c.n_test = 10;
  c.phantom.left_limb_offset = 0.0;  // hardest left/right ambiguity
  c.train.epochs = 10;
  c.train.augment_probability = 0.5;
  c.refine.iterations = 6;
  c.refine.lr = 5e-4;
  return c;
}

std::pair<double, double> mean_errors(const nlohmann::json& report) {
  double all = 0.0, limb = 0.0;
  int n_all = 0, n_limb = 0;
  const auto& limbs = limb_landmarks();
  for (const auto& c : report.at("cases")) {
    const auto& d = c.at("distance_mm");
    for (int j = 0; j < kNumLandmarks; ++j) {
      if (d[j].is_null()) continue;
      all += d[j].get<double>();
      ++n_all;
      if (std::find(limbs.begin(), limbs.end(), j) != limbs.end()) {
        limb += d[j].get<double>();
        ++n_limb;
      }
    }
  }
  return {all / n_all, limb / n_limb};
}

PipelineResult run_pipeline(const fs::path& dir) {
  PipelineResult r;
  const auto t0 = Clock::now();
  fs::remove_all(dir);
  fs::create_directories(dir);
  const fs::path cfg = dir / "config.json";
  write_json(cli::to_json(pipeline_config()), cfg);
  const fs::path log = dir.parent_path() / (dir.filename().string() + ".log");
  fs::remove(log);
  const std::string c = " --config '" + cfg.string() + "'";
  const std::string d = "'" + dir.string() + "/";

  auto step = [&](const std::string& what, const std::string& args) {
    if (!r.error.empty()) return;
    if (run_cli(log, args) != 0) r.error = what + " failed (see " + log.string() + ")";
  };
  step("phantom-gen", "phantom-gen" + c + " --out " + d + "data'");
  step("build-library", "build-library" + c + " --data " + d + "data' --out " + d + "library.json'");
  const auto tt = Clock::now();
  step("train", "train" + c + " --data " + d + "data' --out " + d + "model'");
  r.train_seconds = seconds_since(tt);
  step("infer", "infer" + c + " --model " + d + "model' --input " + d + "data' --out " + d + "plain'");
  step("refine", "refine" + c + " --model " + d + "model' --input " + d + "data' --library " + d +
                     "library.json' --out " + d + "ssl'");
  step("eval plain", "eval" + c + " --pred " + d + "plain' --gt " + d + "data' --out " + d + "eval_plain'");
  step("eval ssl", "eval" + c + " --pred " + d + "ssl' --gt " + d + "data' --out " + d + "eval_ssl'");
  r.total_seconds = seconds_since(t0);
  if (!r.error.empty()) return r;

  std::tie(r.plain_mm, r.plain_limb_mm) = mean_errors(read_json(dir / "eval_plain/report.json"));
  std::tie(r.ssl_mm, r.ssl_limb_mm) = mean_errors(read_json(dir / "eval_ssl/report.json"));
  for (const auto& e : fs::directory_iterator(dir / "ssl")) {
    if (e.path().extension() == ".json" && read_json(e.path()).at("refine").at("declined").get<bool>()) ++r.declined;
  }
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) r.hashes[fs::relative(e.path(), dir).string()] = sha256_file(e.path());
  }
  r.ok = true;
  return r;
}

Outcome end_to_end(const PipelineResult& r) {
  if (!r.ok) return {false, r.error};
  const bool a = r.plain_mm < 6.0;
  const bool b = r.ssl_mm <= r.plain_mm;
  const bool c = r.ssl_limb_mm < r.plain_limb_mm;
  const bool t = r.train_seconds < 3600.0;
  return {a && b && c && t,
          fmt("(a) plain mean %.3f mm %s 6 voxels; (b) SSL mean %.3f mm %s plain; (c) limb subset SSL %.3f mm vs "
              "plain %.3f mm %s; training %.0f s %s 3600 s; %d declined; pipeline %.0f s",
              r.plain_mm, a ? "<" : ">=", r.ssl_mm, b ? "<=" : ">", r.ssl_limb_mm, r.plain_limb_mm,
              c ? "(lower)" : "(NOT lower)", r.train_seconds, t ? "<" : ">=", r.declined, r.total_seconds)};
}

Outcome determinism(const PipelineResult& first, const fs::path& dir) {
  if (!first.ok) return {false, "first run failed: " + first.error};
  const auto second = run_pipeline(dir);
  if (!second.ok) return {false, "second run failed: " + second.error};
  std::vector<std::string> differ;
  std::set<std::string> names;
  for (const auto& [k, v] : first.hashes) names.insert(k);
  for (const auto& [k, v] : second.hashes) names.insert(k);
  for (const auto& n : names) {
    auto a = first.hashes.find(n), b = second.hashes.find(n);
    if (a == first.hashes.end() || b == second.hashes.end() || a->second != b->second) differ.push_back(n);
  }
  std::string detail = fmt("%zu artifacts hashed, %zu differ", names.size(), differ.size());
  for (std::size_t i = 0; i < std::min<std::size_t>(differ.size(), 5); ++i) detail += (i ? ", " : ": ") + differ[i];
  return {differ.empty(), detail};
}

// ---------------------------------------------------------------------------
// 9. Metrics

Outcome metrics_oracles(const fs::path& work) {
  const auto f = testing::metrics_fixture();
  const auto r = metrics::evaluate(f.cases, f.thresholds);
  bool exact = true;
  for (int j = 0; j < kNumLandmarks; ++j) {
    for (std::size_t t = 0; t < f.thresholds.size(); ++t) exact &= r.pck.per_landmark[j][t] == f.pck[j][t];
    exact &= std::abs(r.auc_pct[j] - f.auc_pct[j]) < 1e-12 && std::abs(r.mean_mm[j] - f.mean_mm[j]) < 1e-12;
  }
  for (std::size_t t = 0; t < f.thresholds.size(); ++t) exact &= r.pck.pooled[t] == f.pooled[t];
  exact &= std::abs(r.auc_pct_all - f.pooled_auc_pct) < 1e-12 && std::abs(r.mean_mm_all - f.mean_mm_all) < 1e-12;

  // Monotonicity and bounds on a larger random set.
  std::mt19937_64 rng(99);
  std::exponential_distribution<double> e(0.15);
  std::vector<metrics::Distances> cases(40);
  for (auto& d : cases) {
    d.valid.fill(true);
    for (auto& m : d.mm) m = e(rng);
  }
  const auto thr = metrics::default_thresholds();
  const auto curve = metrics::pck_curve(cases, thr);
  bool monotone = true, bounded = true;
  for (std::size_t i = 1; i < thr.size(); ++i) {
    monotone &= curve.pooled[i] >= curve.pooled[i - 1];
    for (int j = 0; j < kNumLandmarks; ++j) monotone &= curve.per_landmark[j][i] >= curve.per_landmark[j][i - 1];
  }
  for (int j = 0; j < kNumLandmarks; ++j) {
    const double a = metrics::auc(thr, curve.per_landmark[j]);
    bounded &= a >= 0.0 && a <= 100.0;
  }

  const fs::path dir = work / "metrics_fixture";
  fs::remove_all(dir);
  metrics::write_report(r, dir);
  std::string header = "metric";
  for (int j = 1; j <= kNumLandmarks; ++j) header += ",L" + std::to_string(j);
  header += ",mean";
  std::ifstream table(dir / "table.csv"), pck(dir / "pck.csv");
  std::string th, ph;
  std::getline(table, th);
  std::getline(pck, ph);
  const bool columns = th == header && ph == "threshold_mm" + header.substr(6);
  return {exact && monotone && bounded && columns,
          fmt("fixture %s; PCK %s; AUC %s; CSV columns %s", exact ? "exact" : "MISMATCH",
              monotone ? "monotone" : "NOT monotone", bounded ? "in [0, 100]" : "OUT OF RANGE",
              columns ? "L1..L16 + mean" : "WRONG")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volpose acceptance suite"};
  std::string work = "acceptance_work";
  std::vector<int> only;
  app.add_option("--work", work, "Scratch directory for pipeline artifacts");
  app.add_option("--only", only, "Run just these criteria")->delimiter(',');
  CLI11_PARSE(app, argc, argv);
  const fs::path root = fs::absolute(work);
  fs::create_directories(root);

  auto wanted = [&](int n) { return only.empty() || std::find(only.begin(), only.end(), n) != only.end(); };
  int failures = 0;
  auto report = [&](int n, const char* title, const std::function<Outcome()>& fn) {
    if (!wanted(n)) return;
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += o.pass ? 0 : 1;
    std::printf("CRITERION %2d %s  %s: %s\n", n, o.pass ? "PASS" : "FAIL", title, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "gradient check", gradient_check);
  report(2, "checkpointed backward equivalence", checkpoint_equivalence);
  report(3, "checkpointing memory", memory_reduction);
  report(4, "recomputation overhead", recompute_overhead);
  report(5, "rigid registration", rigid_fit);
  report(6, "retrieval ranking", retrieval);
  report(7, "heatmap round trip", heatmap_round_trip);
  PipelineResult first;
  if (wanted(8) || wanted(10)) first = run_pipeline(root / "pipeline_run1");
  report(8, "end-to-end phantom pipeline", [&] { return end_to_end(first); });
  report(9, "metrics oracles", [&] { return metrics_oracles(root); });
  report(10, "determinism", [&] { return determinism(first, root / "pipeline_run2"); });
  return failures == 0 ? 0 : 1;
}
