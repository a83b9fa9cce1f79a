// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// volpose: phantom generation, training, inference, refinement and
// evaluation from the command line.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
// VOLPOSE_LOG=quiet silences progress messages on stderr.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "volpose/cli/run_config.hpp"
#include "volpose/core/io.hpp"
#include "volpose/detector/detector.hpp"
#include "volpose/metrics/metrics.hpp"
#include "volpose/phantom/phantom.hpp"
#include "volpose/poselib/library.hpp"
#include "volpose/ssl/refine.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace volpose;
using cli::ConfigError;

namespace {

bool quiet() {
  const char* v = std::getenv("VOLPOSE_LOG");
  return v != nullptr && std::string(v) == "quiet";
}

template <typename... Args>
void info(const char* fmt, Args... args) {
  if (quiet()) return;
  std::fprintf(stderr, fmt, args...);
  std::fputc('\n', stderr);
}

void require_exists(const fs::path& p, const std::string& what) {
  if (p.empty()) throw ConfigError(what + " path is required");
  if (!fs::exists(p)) throw ConfigError(what + " '" + p.string() + "' does not exist");
}

struct CaseRef {
  std::string id;
  fs::path volume;
  fs::path pose;  // empty when unknown
};

std::string case_id_from(const fs::path& p) {
  std::string name = p.filename().string();
  for (const std::string suffix : {".vol.json", ".pose.json", ".json"}) {
    if (name.size() > suffix.size() && name.ends_with(suffix)) return name.substr(0, name.size() - suffix.size());
  }
  return name;
}

std::optional<fs::path> manifest_at(const fs::path& p) {
  if (fs::is_directory(p) && fs::exists(p / "manifest.json")) return p / "manifest.json";
  if (fs::is_regular_file(p) && p.extension() == ".json") {
    try {
      if (read_json(p).value("format", "") == "volpose.manifest") return p;
    } catch (const FormatError&) {
    }
  }
  return std::nullopt;
}

std::vector<CaseRef> manifest_cases(const fs::path& manifest, const std::string& split) {
  const auto m = phantom::load_manifest(manifest);
  std::vector<CaseRef> out;
  for (const auto& e : m.entries) {
    if (split != "all" && e.split != split) continue;
    out.push_back({e.id, manifest.parent_path() / e.volume, manifest.parent_path() / e.pose});
  }
  if (out.empty()) throw ConfigError("manifest " + manifest.string() + " has no '" + split + "' cases");
  return out;
}

/// A manifest (or a directory holding one), a directory of *.vol.json
/// volumes, or a single volume header.
std::vector<CaseRef> resolve_volumes(const fs::path& input, const std::string& split) {
  require_exists(input, "input");
  if (auto m = manifest_at(input)) return manifest_cases(*m, split);
  std::vector<CaseRef> out;
  if (fs::is_directory(input)) {
    for (const auto& e : fs::directory_iterator(input)) {
      if (e.path().filename().string().ends_with(".vol.json")) out.push_back({case_id_from(e.path()), e.path(), {}});
    }
    std::sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  } else {
    out.push_back({case_id_from(input), input, {}});
  }
  if (out.empty()) throw ConfigError("no volumes found under " + input.string());
  return out;
}

/// Ground-truth or predicted poses keyed by case id.
std::map<std::string, fs::path> resolve_poses(const fs::path& input, const std::string& split) {
  require_exists(input, "pose source");
  std::map<std::string, fs::path> out;
  if (auto m = manifest_at(input)) {
    for (const auto& c : manifest_cases(*m, split)) out[c.id] = c.pose;
    return out;
  }
  if (!fs::is_directory(input)) throw ConfigError(input.string() + " is neither a manifest nor a directory");
  for (const auto& e : fs::directory_iterator(input)) {
    if (e.path().filename().string().ends_with(".pose.json")) out[case_id_from(e.path())] = e.path();
  }
  if (out.empty()) throw ConfigError("no pose files found under " + input.string());
  return out;
}

cli::RunConfig base_config(const std::string& path) {
  return path.empty() ? cli::RunConfig{} : cli::load_run_config(path);
}

void write_config(const cli::RunConfig& cfg, const fs::path& dir) {
  fs::create_directories(dir);
  json j = cli::to_json(cfg);
  j["sha256"] = cli::config_hash(cfg);
  write_json(j, dir / "run_config.json");
}

std::optional<autodiff::CheckpointRequest> parse_gcp(const std::string& name, std::size_t k) {
  if (name == "off") return std::nullopt;
  autodiff::CheckpointRequest r;
  try {
    r.policy = autodiff::policy_from_name(name);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  if (r.policy == autodiff::CheckpointPolicy::manual) throw ConfigError("--gcp manual is only available through a config file");
  if (r.policy == autodiff::CheckpointPolicy::every_k && k == 0) throw ConfigError("--gcp every_k needs --gcp-k > 0");
  r.k = k;
  return r;
}

// ---------------------------------------------------------------------------

struct PhantomGenArgs {
  std::string config, out;
  std::optional<int> n_train, n_test;
  std::optional<std::uint64_t> seed;
  std::optional<double> asymmetry;
  bool force = false;
};

int run_phantom_gen(const PhantomGenArgs& a) {
  auto cfg = base_config(a.config);
  if (a.n_train) cfg.n_train = *a.n_train;
  if (a.n_test) cfg.n_test = *a.n_test;
  if (a.seed) cfg.seed = *a.seed;
  if (a.asymmetry) cfg.phantom.left_limb_offset = *a.asymmetry;
  if (cfg.n_train < 1 || cfg.n_test < 1) throw ConfigError("--n-train and --n-test must be at least 1");
  const fs::path out = a.out;
  info("generating %d train / %d test phantoms into %s", cfg.n_train, cfg.n_test, out.c_str());
  phantom::make_dataset(cfg.phantom, cfg.n_train, cfg.n_test, cfg.seed, out, a.force, cli::config_echo(cfg));
  write_config(cfg, out);
  return 0;
}

struct LibraryArgs {
  std::string config, data, out, split = "train";
  bool with_flips = false;
};

int run_build_library(const LibraryArgs& a) {
  const auto cfg = base_config(a.config);
  const auto cases = manifest_cases(*[&] {
    require_exists(a.data, "dataset");
    auto m = manifest_at(a.data);
    if (!m) throw ConfigError(a.data + " holds no dataset manifest");
    return m;
  }(), a.split);
  poselib::PoseLibrary lib;
  for (const auto& c : cases) {
    double sp = 1.0;
    const Pose p = read_pose(c.pose, &sp);
    lib.atlases.push_back({c.id, p, a.split});
    if (a.with_flips) {
      const Volume v = read_volume(c.volume);
      for (auto f : {phantom::Augmentation::flip_x, phantom::Augmentation::flip_y, phantom::Augmentation::flip_z}) {
        lib.atlases.push_back({c.id + "." + std::string(phantom::augmentation_name(f)),
                               phantom::augment_pose(p, v.dims, v.spacing_mm, f), a.split + "+" +
                                   std::string(phantom::augmentation_name(f))});
      }
    }
  }
  lib.validate();
  fs::create_directories(fs::path(a.out).parent_path().empty() ? "." : fs::path(a.out).parent_path());
  poselib::save_library(lib, a.out, cli::config_echo(cfg));
  info("library with %zu atlases written to %s", lib.size(), a.out.c_str());
  return 0;
}

struct TrainArgs {
  std::string config, data, out, gcp;
  std::optional<int> epochs, batch_size;
  std::optional<double> lr, augment;
  std::optional<std::uint64_t> seed;
  std::size_t gcp_k = 0;
};

int run_train(const TrainArgs& a) {
  auto cfg = base_config(a.config);
  if (a.epochs) cfg.train.epochs = *a.epochs;
  if (a.batch_size) cfg.train.batch_size = *a.batch_size;
  if (a.lr) cfg.train.lr = *a.lr;
  if (a.augment) cfg.train.augment_probability = *a.augment;
  if (a.seed) cfg.train.seed = *a.seed;
  if (!a.gcp.empty()) cfg.train.gcp = parse_gcp(a.gcp, a.gcp_k);
  try {
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require_exists(a.data, "dataset");
  const auto manifest = manifest_at(a.data);
  if (!manifest) throw ConfigError(a.data + " holds no dataset manifest");

  std::vector<detector::TrainCase> cases;
  for (const auto& c : manifest_cases(*manifest, "train")) {
    cases.push_back({c.id, read_volume(c.volume), read_pose(c.pose)});
  }
  const fs::path out = a.out;
  fs::create_directories(out);
  write_config(cfg, out);
  const json echo = cli::config_echo(cfg);

  detector::Detector det(cfg.detector);
  info("training on %zu cases for %d epochs (%lld parameters, gcp %s)", cases.size(), cfg.train.epochs,
       static_cast<long long>(det.parameter_count()),
       cfg.train.gcp ? std::string(autodiff::policy_name(cfg.train.gcp->policy)).c_str() : "off");
  const auto result = detector::train(det, cases, cfg.train, [&](int epoch, const detector::Detector& d,
                                                                  const detector::TrainResult& r) {
    char name[32];
    std::snprintf(name, sizeof name, "epoch_%03d", epoch + 1);
    d.save(out / "checkpoints" / name, echo);
    info("epoch %d/%d mean loss %.6g", epoch + 1, cfg.train.epochs, r.epoch_mean.back());
  });
  det.save(out, echo);
  detector::write_loss_csv(result, out / "loss.csv");
  return 0;
}

struct InferArgs {
  std::string config, model, input, out, split = "test", library;
  bool dump_heatmaps = false;
  std::optional<int> iterations, k;
  std::optional<double> lr;
  bool snapshot = false;
};

void dump_heatmaps(const heatmap::HeatmapStack& s, const fs::path& dir, const json& echo) {
  fs::create_directories(dir);
  for (int c = 0; c < kNumLandmarks; ++c) {
    Volume v(s.grid.dims, s.grid.spacing_mm);
    std::copy(s.channel(c), s.channel(c) + s.grid.numel(), v.data.begin());
    json extra = echo;
    extra["origin_mm"] = {s.grid.origin_mm.x(), s.grid.origin_mm.y(), s.grid.origin_mm.z()};
    extra["landmark"] = c + 1;
    char name[32];
    std::snprintf(name, sizeof name, "L%02d.vol.json", c + 1);
    write_volume(v, dir / name, extra);
  }
}

json confidence_json(const DecodedPose& d) { return d.confidence; }

int run_infer(const InferArgs& a) {
  const auto cfg = base_config(a.config);
  require_exists(a.model, "model");
  auto det = detector::Detector::load(a.model);
  const auto cases = resolve_volumes(a.input, a.split);
  const fs::path out = a.out;
  fs::create_directories(out);
  const json echo = cli::config_echo(cfg);
  for (const auto& c : cases) {
    const Volume v = read_volume(c.volume);
    const auto stack = det.infer(v);
    const auto decoded = heatmap::decode(stack, cfg.refine.decode);
    json extra = echo;
    extra["case_id"] = c.id;
    extra["confidence"] = confidence_json(decoded);
    write_pose(decoded.pose, v.spacing_mm, out / (c.id + ".pose.json"), extra);
    if (a.dump_heatmaps) dump_heatmaps(stack, out / "heatmaps" / c.id, echo);
  }
  info("wrote %zu pose files to %s", cases.size(), a.out.c_str());
  return 0;
}

int run_refine(const InferArgs& a) {
  auto cfg = base_config(a.config);
  if (a.iterations) cfg.refine.iterations = *a.iterations;
  if (a.lr) cfg.refine.lr = *a.lr;
  if (a.k) cfg.refine.k = *a.k;
  if (a.snapshot) cfg.refine.snapshot_each_iter = true;
  try {
    cfg.refine.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  require_exists(a.model, "model");
  require_exists(a.library, "library");
  const auto det = detector::Detector::load(a.model);
  const auto lib = poselib::load_library(a.library);
  if (static_cast<std::size_t>(cfg.refine.k) > lib.size()) {
    throw ConfigError("--k " + std::to_string(cfg.refine.k) + " exceeds the library size " + std::to_string(lib.size()));
  }
  const auto cases = resolve_volumes(a.input, a.split);
  const fs::path out = a.out;
  fs::create_directories(out);
  const json echo = cli::config_echo(cfg);
  int declined = 0;
  for (const auto& c : cases) {
    const Volume v = read_volume(c.volume);
    const auto r = ssl::refine(det, v, lib, cfg.refine);
    declined += r.declined ? 1 : 0;
    json extra = echo;
    extra["case_id"] = c.id;
    extra["confidence"] = confidence_json(r.final_pose);
    extra["refine"] = {{"declined", r.declined},
                       {"aborted", r.aborted},
                       {"message", r.message},
                       {"iterations_completed", r.trace.size()}};
    write_pose(r.final_pose.pose, v.spacing_mm, out / (c.id + ".pose.json"), extra);
    if (cfg.refine.snapshot_each_iter) {
      fs::create_directories(out / "traces");
      json t = echo;
      t.update(ssl::trace_to_json(r, v.spacing_mm));
      write_json(t, out / "traces" / (c.id + ".trace.json"));
    }
  }
  info("refined %zu cases (%d declined) into %s", cases.size(), declined, a.out.c_str());
  return 0;
}

struct EvalArgs {
  std::string config, pred, gt, out, split = "test";
};

int run_eval(const EvalArgs& a) {
  const auto cfg = base_config(a.config);
  const auto preds = resolve_poses(a.pred, "all");
  const auto gts = resolve_poses(a.gt, a.split);
  std::vector<metrics::CaseResult> cases;
  for (const auto& [id, gt_path] : gts) {
    auto it = preds.find(id);
    if (it == preds.end()) throw ConfigError("no prediction for case '" + id + "'");
    double sp_pred = 0.0, sp_gt = 0.0;
    metrics::CaseResult r{id, read_pose(it->second, &sp_pred), read_pose(gt_path, &sp_gt)};
    if (std::abs(sp_pred - sp_gt) > 1e-9) {
      throw ConfigError("case '" + id + "': spacing reference " + std::to_string(sp_pred) +
                        " mm disagrees with ground truth " + std::to_string(sp_gt) + " mm");
    }
    cases.push_back(std::move(r));
  }
  const auto report = metrics::evaluate(cases, cfg.thresholds_mm);
  metrics::write_report(report, a.out, cli::config_echo(cfg));
  info("%zu cases: mean %.3f mm, AUC %.2f%%", cases.size(), report.mean_mm_all, report.auc_pct_all);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"volpose: volumetric 16-landmark detection toolkit"};
  app.require_subcommand(1);

  PhantomGenArgs pg;
  auto* c_pg = app.add_subcommand("phantom-gen", "Generate a synthetic phantom dataset");
  c_pg->add_option("--config", pg.config, "Run config JSON");
  c_pg->add_option("--out", pg.out, "Output directory")->required();
  c_pg->add_option("--n-train", pg.n_train, "Training cases (default 50)");
  c_pg->add_option("--n-test", pg.n_test, "Test cases (default 10)");
  c_pg->add_option("--seed", pg.seed, "Master seed");
  c_pg->add_option("--asymmetry", pg.asymmetry, "Left limb intensity offset (0 is hardest)");
  c_pg->add_flag("--force", pg.force, "Overwrite an existing dataset");

  LibraryArgs lb;
  auto* c_lb = app.add_subcommand("build-library", "Build a pose library from dataset poses");
  c_lb->add_option("--config", lb.config, "Run config JSON");
  c_lb->add_option("--data", lb.data, "Dataset directory or manifest")->required();
  c_lb->add_option("--split", lb.split, "Split to take poses from (default train)");
  c_lb->add_option("--out", lb.out, "Library JSON path")->required();
  c_lb->add_flag("--with-flips", lb.with_flips, "Add label-swapped flips of every pose");

  TrainArgs tr;
  auto* c_tr = app.add_subcommand("train", "Train the detector");
  c_tr->add_option("--config", tr.config, "Run config JSON");
  c_tr->add_option("--data", tr.data, "Dataset directory or manifest")->required();
  c_tr->add_option("--out", tr.out, "Model directory")->required();
  c_tr->add_option("--epochs", tr.epochs, "Epochs (default 20)");
  c_tr->add_option("--batch-size", tr.batch_size, "Cases per step (default 1)");
  c_tr->add_option("--lr", tr.lr, "Learning rate (default 1e-3)");
  c_tr->add_option("--seed", tr.seed, "Shuffle seed");
  c_tr->add_option("--augment", tr.augment, "Per-step flip/rotation probability");
  c_tr->add_option("--gcp", tr.gcp, "Checkpointing: off, block_boundary or every_k");
  c_tr->add_option("--gcp-k", tr.gcp_k, "Stride for every_k");

  InferArgs inf;
  auto* c_inf = app.add_subcommand("infer", "Detect landmarks");
  c_inf->add_option("--config", inf.config, "Run config JSON");
  c_inf->add_option("--model", inf.model, "Model directory")->required();
  c_inf->add_option("--input", inf.input, "Volume header, directory or dataset")->required();
  c_inf->add_option("--split", inf.split, "Dataset split (default test)");
  c_inf->add_option("--out", inf.out, "Output directory")->required();
  c_inf->add_flag("--dump-heatmaps", inf.dump_heatmaps, "Write the 16 heatmap channels");

  InferArgs rf;
  auto* c_rf = app.add_subcommand("refine", "Detect landmarks with test-time refinement");
  c_rf->add_option("--config", rf.config, "Run config JSON");
  c_rf->add_option("--model", rf.model, "Model directory")->required();
  c_rf->add_option("--input", rf.input, "Volume header, directory or dataset")->required();
  c_rf->add_option("--split", rf.split, "Dataset split (default test)");
  c_rf->add_option("--library", rf.library, "Pose library JSON")->required();
  c_rf->add_option("--out", rf.out, "Output directory")->required();
  c_rf->add_option("--iterations", rf.iterations, "Refinement iterations (default 6)");
  c_rf->add_option("--lr", rf.lr, "Refinement learning rate (default 5e-4)");
  c_rf->add_option("--k", rf.k, "Support set size (default 10)");
  c_rf->add_flag("--snapshot", rf.snapshot, "Write per-iteration traces");

  EvalArgs ev;
  auto* c_ev = app.add_subcommand("eval", "Score predictions against ground truth");
  c_ev->add_option("--config", ev.config, "Run config JSON");
  c_ev->add_option("--pred", ev.pred, "Directory of predicted pose files")->required();
  c_ev->add_option("--gt", ev.gt, "Ground-truth pose directory or dataset")->required();
  c_ev->add_option("--split", ev.split, "Dataset split when --gt is a dataset (default test)");
  c_ev->add_option("--out", ev.out, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (c_pg->parsed()) return run_phantom_gen(pg);
    if (c_lb->parsed()) return run_build_library(lb);
    if (c_tr->parsed()) return run_train(tr);
    if (c_inf->parsed()) return run_infer(inf);
    if (c_rf->parsed()) return run_refine(rf);
    if (c_ev->parsed()) return run_eval(ev);
  } catch (const ConfigError& e) {
    std::cerr << "volpose: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "volpose: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
