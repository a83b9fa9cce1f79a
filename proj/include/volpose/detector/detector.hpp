// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// 3D encoder-decoder landmark detector.
//
// Each encoder level runs convs_per_block (conv, batch_norm, relu) triples and
// a 2x max pool; the bottom level runs the triples alone; each decoder level
// upsamples with a stride-2 deconv (+ batch_norm, relu), concatenates the
// matching encoder features and runs the triples again. A 1x1x1 conv maps to
// 16 heatmap channels. Blocks are tagged enc<l>, bottom, dec<l>, head.

#ifndef VOLPOSE_DETECTOR_DETECTOR_HPP
#define VOLPOSE_DETECTOR_DETECTOR_HPP

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "volpose/autodiff/checkpoint_policy.hpp"
#include "volpose/autodiff/graph.hpp"
#include "volpose/autodiff/optimizer.hpp"
#include "volpose/core/grid.hpp"
#include "volpose/core/pose.hpp"
#include "volpose/core/volume.hpp"
#include "volpose/heatmap/heatmap.hpp"

namespace volpose::detector {

struct DetectorConfig {
  int depth = 3;
  int base_channels = 8;
  int convs_per_block = 2;
  double input_scale = 0.5;
  double sigma_vox = 2.0;
  std::uint64_t init_seed = 1;
  /// Multiplier on the initial 1x1x1 head weights.
  double head_init_scale = 0.01;

  void validate() const;
};

nlohmann::json config_to_json(const DetectorConfig& c);
DetectorConfig config_from_json(const nlohmann::json& j);

/// Graph with inputs "image" [1, z, y, x] and "target" [16, z, y, x], the
/// heatmap output node and an l2 loss. Extents must be multiples of 2^depth;
/// otherwise a ShapeError names the padding required.
struct DetectorGraph {
  autodiff::Graph graph;
  autodiff::NodeId image = -1;
  autodiff::NodeId target = -1;
  autodiff::NodeId output = -1;
  autodiff::NodeId loss = -1;
};
DetectorGraph build_detector(const DetectorConfig& cfg, const Dims& working_dims);

/// Volume resampled by input_scale, z-scored and zero-padded to a multiple of
/// 2^depth, together with where that lattice sits in the volume frame.
struct Prepared {
  Grid grid;
  autodiff::Tensor image;  // [1, z, y, x]
};
Prepared prepare(const Volume& v, const DetectorConfig& cfg);

struct TrainCase {
  std::string id;
  Volume volume;
  Pose pose;
};

struct TrainConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  int batch_size = 1;
  int epochs = 20;
  std::uint64_t seed = 0;
  /// Probability of replacing a training case by a random flip or quarter
  /// turn of it at each step.
  double augment_probability = 0.0;
  /// Checkpointing policy; nullopt trains with the plain backward pass.
  std::optional<autodiff::CheckpointRequest> gcp;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& c);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct LossRecord {
  int epoch = 0;
  int step = 0;  // global step, 0-based
  double loss = 0.0;
};

struct TrainResult {
  std::vector<LossRecord> steps;
  std::vector<double> epoch_mean;
};

class Detector {
 public:
  explicit Detector(DetectorConfig cfg);

  const DetectorConfig& config() const { return cfg_; }

  /// Rebuilds the graph for new padded working extents, carrying parameter
  /// values across. Parameters are initialised once, at construction.
  void ensure_shape(const Dims& working_dims);
  const Dims& working_dims() const { return dims_; }
  DetectorGraph& net() { return net_; }
  const DetectorGraph& net() const { return net_; }

  std::vector<autodiff::Parameter>& parameters() { return net_.graph.parameters(); }
  const std::vector<autodiff::Parameter>& parameters() const { return net_.graph.parameters(); }
  std::int64_t parameter_count() const { return net_.graph.parameter_count(); }

  /// Heatmaps on the prepared working grid.
  heatmap::HeatmapStack infer(const Volume& v);
  heatmap::HeatmapStack infer(const Prepared& p);
  DecodedPose detect(const Volume& v, const heatmap::DecodeOptions& opt = {});

  /// Forward + backward on one prepared case; returns the loss and the
  /// gradients. The parameters are not changed.
  std::pair<double, autodiff::GradientMap> loss_and_gradients(
      const Prepared& p, const autodiff::Tensor& target,
      const std::optional<autodiff::CheckpointRequest>& gcp);
  /// Loss of the current parameters against `target` without gradients.
  double loss(const Prepared& p, const autodiff::Tensor& target);

  /// Writes graph.json, params.bin, params.json and detector.json.
  void save(const std::filesystem::path& dir, const nlohmann::json& extra = nlohmann::json::object()) const;
  static Detector load(const std::filesystem::path& dir);

 private:
  DetectorConfig cfg_;
  DetectorGraph net_;
  Dims dims_{0, 0, 0};
};

/// Heatmap target for a case on its prepared grid. Rejects landmarks outside
/// the volume or the working grid with the landmark index.
heatmap::HeatmapStack make_target(const Pose& pose, const Volume& v, const Prepared& p,
                                  const DetectorConfig& cfg);

using EpochCallback = std::function<void(int epoch, const Detector&, const TrainResult&)>;

/// Adam over the cases in a seeded shuffled order, batch_size cases per step.
TrainResult train(Detector& det, const std::vector<TrainCase>& cases, const TrainConfig& cfg,
                  const EpochCallback& on_epoch = {});

void write_loss_csv(const TrainResult& r, const std::filesystem::path& path);

}  // namespace volpose::detector

#endif  // VOLPOSE_DETECTOR_DETECTOR_HPP
