// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/detector/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include "volpose/autodiff/graph_io.hpp"
#include "volpose/core/io.hpp"
#include "volpose/phantom/phantom.hpp"

namespace volpose::detector {

using autodiff::Graph;
using autodiff::NodeId;
using autodiff::Tensor;
using nlohmann::json;

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(DetectorConfig, depth, base_channels, convs_per_block,
                                                input_scale, sigma_vox, init_seed, head_init_scale)

void DetectorConfig::validate() const {
  if (depth < 1) throw std::invalid_argument("detector depth must be at least 1");
  if (base_channels < 1) throw std::invalid_argument("base_channels must be positive");
  if (convs_per_block < 2) throw std::invalid_argument("convs_per_block must be at least 2");
  if (!(input_scale > 0.0 && input_scale <= 1.0)) throw std::invalid_argument("input_scale must lie in (0, 1]");
  if (!(sigma_vox > 0.0)) throw std::invalid_argument("sigma_vox must be positive");
  if (!(head_init_scale > 0.0)) throw std::invalid_argument("head_init_scale must be positive");
}

json config_to_json(const DetectorConfig& c) { return c; }

DetectorConfig config_from_json(const json& j) {
  DetectorConfig c = j.get<DetectorConfig>();
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw std::invalid_argument("learning rate must be positive");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be at least 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be non-negative");
  if (augment_probability < 0.0 || augment_probability > 1.0) {
    throw std::invalid_argument("augment_probability must lie in [0, 1]");
  }
}

json train_config_to_json(const TrainConfig& c) {
  json j = {{"lr", c.lr},
            {"beta1", c.beta1},
            {"beta2", c.beta2},
            {"batch_size", c.batch_size},
            {"epochs", c.epochs},
            {"seed", c.seed},
            {"augment_probability", c.augment_probability}};
  if (c.gcp) {
    j["gcp"] = {{"policy", autodiff::policy_name(c.gcp->policy)}, {"k", c.gcp->k}, {"manual", c.gcp->manual}};
  } else {
    j["gcp"] = "off";
  }
  return j;
}

TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  c.lr = j.value("lr", c.lr);
  c.beta1 = j.value("beta1", c.beta1);
  c.beta2 = j.value("beta2", c.beta2);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.augment_probability = j.value("augment_probability", c.augment_probability);
  if (j.contains("gcp") && j.at("gcp").is_object()) {
    autodiff::CheckpointRequest r;
    r.policy = autodiff::policy_from_name(j.at("gcp").at("policy").get<std::string>());
    r.k = j.at("gcp").value("k", std::size_t{0});
    r.manual = j.at("gcp").value("manual", std::vector<NodeId>{});
    c.gcp = r;
  }
  c.validate();
  return c;
}

DetectorGraph build_detector(const DetectorConfig& cfg, const Dims& dims) {
  cfg.validate();
  const std::int64_t unit = std::int64_t{1} << cfg.depth;
  for (int a = 0; a < 3; ++a) {
    const auto n = dims[static_cast<std::size_t>(a)];
    if (n <= 0 || n % unit != 0) {
      const auto need = (n + unit - 1) / unit * unit;
      throw autodiff::ShapeError(0, "working extent " + std::to_string(n) + " along axis " + std::to_string(a) +
                                        " is not a multiple of " + std::to_string(unit) + "; pad by " +
                                        std::to_string(need - n) + " voxels");
    }
  }
  DetectorGraph d;
  Graph& g = d.graph;
  d.image = g.input("image", {1, dims[2], dims[1], dims[0]});

  auto triple = [&](NodeId x, std::int64_t ch, const std::string& name) {
    const NodeId c = g.conv3d(x, ch, 3, name + ".conv");
    return g.relu(g.batch_norm(c, name + ".bn"), name + ".relu");
  };

  std::vector<NodeId> skips;
  NodeId x = d.image;
  for (int l = 0; l < cfg.depth; ++l) {
    g.set_block("enc" + std::to_string(l));
    const std::int64_t ch = std::int64_t{cfg.base_channels} << l;
    for (int k = 0; k < cfg.convs_per_block; ++k) x = triple(x, ch, "enc" + std::to_string(l) + "." + std::to_string(k));
    skips.push_back(x);
    x = g.max_pool3d(x, "enc" + std::to_string(l) + ".pool");
  }
  g.set_block("bottom");
  for (int k = 0; k < cfg.convs_per_block; ++k) {
    x = triple(x, std::int64_t{cfg.base_channels} << cfg.depth, "bottom." + std::to_string(k));
  }
  for (int l = cfg.depth - 1; l >= 0; --l) {
    const std::string tag = "dec" + std::to_string(l);
    g.set_block(tag);
    const std::int64_t ch = std::int64_t{cfg.base_channels} << l;
    NodeId up = g.deconv3d(x, ch, tag + ".up");
    up = g.relu(g.batch_norm(up, tag + ".up.bn"), tag + ".up.relu");
    x = g.concat(up, skips[static_cast<std::size_t>(l)], tag + ".cat");
    for (int k = 0; k < cfg.convs_per_block; ++k) x = triple(x, ch, tag + "." + std::to_string(k));
  }
  g.set_block("head");
  d.output = g.conv3d(x, kNumLandmarks, 1, "head");
  g.set_block("");
  d.target = g.input("target", {kNumLandmarks, dims[2], dims[1], dims[0]});
  d.loss = g.l2_loss(d.output, d.target, "loss");
  return d;
}

Prepared prepare(const Volume& v, const DetectorConfig& cfg) {
  cfg.validate();
  const double s = cfg.input_scale;
  const std::int64_t unit = std::int64_t{1} << cfg.depth;
  Dims work{}, padded{}, pad_lo{};
  for (std::size_t a = 0; a < 3; ++a) {
    work[a] = std::max<std::int64_t>(1, std::llround(static_cast<double>(v.dims[a]) * s));
    padded[a] = (work[a] + unit - 1) / unit * unit;
    pad_lo[a] = (padded[a] - work[a]) / 2;
  }

  // Trilinear resampling: working voxel i sits at source voxel (i + 0.5) / s - 0.5.
  std::vector<float> res(static_cast<std::size_t>(work[0] * work[1] * work[2]));
  struct Tap {
    std::int64_t i0, i1;
    double w1;
  };
  auto taps = [&](std::size_t a) {
    std::vector<Tap> t(static_cast<std::size_t>(work[a]));
    const double hi = static_cast<double>(v.dims[a] - 1);
    for (std::int64_t i = 0; i < work[a]; ++i) {
      const double src = std::clamp((static_cast<double>(i) + 0.5) / s - 0.5, 0.0, hi);
      const auto i0 = static_cast<std::int64_t>(std::floor(src));
      const auto i1 = std::min<std::int64_t>(i0 + 1, v.dims[a] - 1);
      t[static_cast<std::size_t>(i)] = {i0, i1, src - static_cast<double>(i0)};
    }
    return t;
  };
  const auto tx = taps(0), ty = taps(1), tz = taps(2);
  std::size_t o = 0;
  for (const auto& z : tz)
    for (const auto& y : ty)
      for (const auto& x : tx) {
        auto at = [&](std::int64_t xx, std::int64_t yy, std::int64_t zz) { return static_cast<double>(v.at(xx, yy, zz)); };
        const double c00 = at(x.i0, y.i0, z.i0) * (1 - x.w1) + at(x.i1, y.i0, z.i0) * x.w1;
        const double c10 = at(x.i0, y.i1, z.i0) * (1 - x.w1) + at(x.i1, y.i1, z.i0) * x.w1;
        const double c01 = at(x.i0, y.i0, z.i1) * (1 - x.w1) + at(x.i1, y.i0, z.i1) * x.w1;
        const double c11 = at(x.i0, y.i1, z.i1) * (1 - x.w1) + at(x.i1, y.i1, z.i1) * x.w1;
        const double c0 = c00 * (1 - y.w1) + c10 * y.w1;
        const double c1 = c01 * (1 - y.w1) + c11 * y.w1;
        res[o++] = static_cast<float>(c0 * (1 - z.w1) + c1 * z.w1);
      }

  double mean = 0.0;
  for (float f : res) mean += f;
  mean /= static_cast<double>(res.size());
  double var = 0.0;
  for (float f : res) var += (f - mean) * (f - mean);
  const double sd = std::sqrt(var / static_cast<double>(res.size()));
  const double inv = sd > 1e-12 ? 1.0 / sd : 1.0;

  Prepared p;
  p.grid.dims = padded;
  p.grid.spacing_mm = v.spacing_mm / s;
  for (int a = 0; a < 3; ++a) {
    p.grid.origin_mm[a] = (0.5 / s - 0.5) * v.spacing_mm - static_cast<double>(pad_lo[static_cast<std::size_t>(a)]) * p.grid.spacing_mm;
  }
  p.image = Tensor({1, padded[2], padded[1], padded[0]});
  o = 0;
  for (std::int64_t z = 0; z < work[2]; ++z)
    for (std::int64_t y = 0; y < work[1]; ++y)
      for (std::int64_t x = 0; x < work[0]; ++x) {
        const std::size_t dst = static_cast<std::size_t>(
            ((z + pad_lo[2]) * padded[1] + (y + pad_lo[1])) * padded[0] + (x + pad_lo[0]));
        p.image[dst] = static_cast<float>((res[o++] - mean) * inv);
      }
  return p;
}

heatmap::HeatmapStack make_target(const Pose& pose, const Volume& v, const Prepared& p,
                                  const DetectorConfig& cfg) {
  const Grid vg = Grid::of(v);
  for (int j = 0; j < kNumLandmarks; ++j) {
    if (pose.valid[static_cast<std::size_t>(j)] && !vg.contains_mm(pose.xyz[static_cast<std::size_t>(j)])) {
      throw heatmap::OutOfBoundsLandmark(j + 1, "landmark " + std::to_string(j + 1) + " lies outside the volume");
    }
  }
  return heatmap::encode(pose, p.grid, cfg.sigma_vox);
}

Detector::Detector(DetectorConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  // Smallest lattice whose bottom level still admits a 3x3x3 kernel.
  const std::int64_t unit = std::int64_t{2} << cfg_.depth;
  dims_ = {unit, unit, unit};
  net_ = build_detector(cfg_, dims_);
  net_.graph.init_parameters(cfg_.init_seed);
  // A near-zero head starts every channel at the (mostly zero) target level;
  // the default He scale makes early steps spend themselves cancelling noise.
  for (auto& p : net_.graph.parameters()) {
    if (p.id != "head.weight") continue;
    for (auto& v : p.value.data()) v *= static_cast<float>(cfg_.head_init_scale);
  }
}

void Detector::ensure_shape(const Dims& working_dims) {
  if (working_dims == dims_) return;
  DetectorGraph next = build_detector(cfg_, working_dims);
  auto& dst = next.graph.parameters();
  const auto& src = net_.graph.parameters();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i].value = src[i].value;
  net_ = std::move(next);
  dims_ = working_dims;
}

heatmap::HeatmapStack Detector::infer(const Prepared& p) {
  ensure_shape(p.grid.dims);
  heatmap::HeatmapStack s;
  s.grid = p.grid;
  s.values = net_.graph.evaluate({{"image", p.image}}, net_.output);
  return s;
}

heatmap::HeatmapStack Detector::infer(const Volume& v) { return infer(prepare(v, cfg_)); }

DecodedPose Detector::detect(const Volume& v, const heatmap::DecodeOptions& opt) {
  return heatmap::decode(infer(v), opt);
}

std::pair<double, autodiff::GradientMap> Detector::loss_and_gradients(
    const Prepared& p, const Tensor& target, const std::optional<autodiff::CheckpointRequest>& gcp) {
  ensure_shape(p.grid.dims);
  Graph& g = net_.graph;
  const Graph::InputMap in = {{"image", p.image}, {"target", target}};
  if (gcp) {
    g.set_checkpoints(autodiff::select_checkpoints(g, *gcp));
    const double loss = g.forward(in, true);
    return {loss, g.backward_checkpointed()};
  }
  const double loss = g.forward(in, false);
  return {loss, g.backward_plain()};
}

double Detector::loss(const Prepared& p, const Tensor& target) {
  ensure_shape(p.grid.dims);
  Graph& g = net_.graph;
  const double l = g.forward({{"image", p.image}, {"target", target}}, false);
  g.clear_values();
  return l;
}

void Detector::save(const std::filesystem::path& dir, const json& extra) const {
  std::filesystem::create_directories(dir);
  json gj = extra;
  gj.update(autodiff::graph_to_json(net_.graph));
  write_json(gj, dir / "graph.json");
  json manifest = autodiff::save_parameters(net_.graph, dir / "params.bin", dir / "params.json");
  if (!extra.empty()) {
    manifest.update(extra);
    write_json(manifest, dir / "params.json");
  }
  json dj = extra;
  dj["format"] = "volpose.detector";
  dj["version"] = 1;
  dj["config"] = config_to_json(cfg_);
  dj["working_dims"] = dims_;
  write_json(dj, dir / "detector.json");
}

Detector Detector::load(const std::filesystem::path& dir) {
  const json dj = read_json(dir / "detector.json");
  if (dj.value("format", "") != "volpose.detector" || dj.value("version", 0) != 1) {
    throw FormatError((dir / "detector.json").string() + ": not a version 1 detector description");
  }
  Detector d(config_from_json(dj.at("config")));
  d.ensure_shape(dj.at("working_dims").get<Dims>());
  const Graph recorded = autodiff::graph_from_json(read_json(dir / "graph.json"));
  if (autodiff::graph_to_json(recorded) != autodiff::graph_to_json(d.net_.graph)) {
    throw FormatError((dir / "graph.json").string() + ": graph does not match the detector config");
  }
  autodiff::load_parameters(d.net_.graph, dir / "params.bin", dir / "params.json");
  return d;
}

TrainResult train(Detector& det, const std::vector<TrainCase>& cases, const TrainConfig& cfg,
                  const EpochCallback& on_epoch) {
  cfg.validate();
  if (cases.empty()) throw std::invalid_argument("training set is empty");
  const DetectorConfig& dc = det.config();

  // Ingestion: every case must encode cleanly on its working grid.
  for (const auto& c : cases) {
    try {
      make_target(c.pose, c.volume, prepare(c.volume, dc), dc);
    } catch (const heatmap::OutOfBoundsLandmark& e) {
      throw heatmap::OutOfBoundsLandmark(e.index(), "case '" + c.id + "': " + e.what());
    }
  }

  autodiff::Adam opt({.lr = cfg.lr, .beta1 = cfg.beta1, .beta2 = cfg.beta2, .eps = 1e-8});
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(cases.size());
  TrainResult result;
  int step = 0;
  const auto& augs = std::array{phantom::Augmentation::flip_x,  phantom::Augmentation::flip_y,
                                phantom::Augmentation::flip_z,  phantom::Augmentation::rot90_x,
                                phantom::Augmentation::rot90_y, phantom::Augmentation::rot90_z};
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_sum = 0.0;
    int epoch_steps = 0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      autodiff::GradientMap acc;
      double loss_sum = 0.0;
      for (std::size_t i = b; i < e; ++i) {
        const TrainCase& c = cases[order[i]];
        Volume vol = c.volume;
        Pose pose = c.pose;
        if (cfg.augment_probability > 0.0 &&
            std::uniform_real_distribution<double>(0.0, 1.0)(rng) < cfg.augment_probability) {
          const auto a = augs[std::uniform_int_distribution<std::size_t>(0, augs.size() - 1)(rng)];
          phantom::PhantomCase pc{std::move(vol), pose, {}, {}};
          pc = phantom::augment(pc, a);
          vol = std::move(pc.volume);
          pose = pc.pose;
        }
        const Prepared p = prepare(vol, dc);
        const auto target = make_target(pose, vol, p, dc);
        auto [loss, grads] = det.loss_and_gradients(p, target.values, cfg.gcp);
        if (!std::isfinite(loss)) {
          throw std::runtime_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step));
        }
        loss_sum += loss;
        if (acc.empty()) {
          acc = std::move(grads);
        } else {
          for (auto& [id, g] : acc) {
            auto src = grads.at(id).data();
            auto dst = g.data();
            for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
          }
        }
      }
      const auto n = static_cast<float>(e - b);
      if (n > 1.0f) {
        for (auto& [id, g] : acc)
          for (auto& v : g.data()) v /= n;
      }
      opt.step(det.parameters(), acc);
      const double mean_loss = loss_sum / static_cast<double>(e - b);
      result.steps.push_back({epoch, step, mean_loss});
      epoch_sum += mean_loss;
      ++epoch_steps;
      ++step;
    }
    result.epoch_mean.push_back(epoch_sum / epoch_steps);
    if (on_epoch) on_epoch(epoch, det, result);
  }
  return result;
}

void write_loss_csv(const TrainResult& r, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,step,loss\n";
  char buf[64];
  for (const auto& s : r.steps) {
    std::snprintf(buf, sizeof buf, "%.9g", s.loss);
    out << s.epoch << ',' << s.step << ',' << buf << '\n';
  }
}

}  // namespace volpose::detector
