// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/cli/run_config.hpp"

#include "volpose/core/hash.hpp"
#include "volpose/core/io.hpp"
#include "volpose/metrics/metrics.hpp"

namespace volpose::cli {

using nlohmann::json;

RunConfig::RunConfig() : thresholds_mm(metrics::default_thresholds()) {}

json to_json(const RunConfig& c) {
  return {{"format", "volpose.run_config"},
          {"version", kRunConfigVersion},
          {"seed", c.seed},
          {"phantom", phantom::spec_to_json(c.phantom)},
          {"n_train", c.n_train},
          {"n_test", c.n_test},
          {"detector", detector::config_to_json(c.detector)},
          {"train", detector::train_config_to_json(c.train)},
          {"refine", ssl::refine_config_to_json(c.refine)},
          {"thresholds_mm", c.thresholds_mm}};
}

RunConfig from_json(const json& j) {
  try {
    if (!j.is_object()) throw ConfigError("run config must be a JSON object");
    if (j.contains("version") && j.at("version").get<int>() != kRunConfigVersion) {
      throw ConfigError("unsupported run config version " + j.at("version").dump());
    }
    // Merge the given sections over the defaults so partial files work.
    json merged = to_json(RunConfig{});
    merged.merge_patch(j);
    RunConfig c;
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.phantom = phantom::spec_from_json(merged.at("phantom"));
    c.n_train = merged.at("n_train").get<int>();
    c.n_test = merged.at("n_test").get<int>();
    c.detector = detector::config_from_json(merged.at("detector"));
    c.train = detector::train_config_from_json(merged.at("train"));
    c.refine = ssl::refine_config_from_json(merged.at("refine"));
    c.thresholds_mm = merged.at("thresholds_mm").get<std::vector<double>>();
    return c;
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(std::string("invalid run config: ") + e.what());
  }
}

RunConfig load_run_config(const std::filesystem::path& path) {
  json j;
  try {
    j = read_json(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return from_json(j);
}

std::string config_hash(const RunConfig& c) { return sha256_hex(to_json(c).dump()); }

json config_echo(const RunConfig& c) {
  return {{"run_config", {{"version", kRunConfigVersion}, {"sha256", config_hash(c)}}}};
}

}  // namespace volpose::cli
