// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// The merged, versioned configuration of a run. Every artifact written by the
// command-line tool carries {version, sha256} of the resolved config.

#ifndef VOLPOSE_CLI_RUN_CONFIG_HPP
#define VOLPOSE_CLI_RUN_CONFIG_HPP

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "volpose/detector/detector.hpp"
#include "volpose/phantom/phantom.hpp"
#include "volpose/ssl/refine.hpp"

namespace volpose::cli {

inline constexpr int kRunConfigVersion = 1;

/// Bad configuration or arguments; maps to exit code 2.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RunConfig {
  std::uint64_t seed = 0;
  phantom::PhantomSpec phantom;
  int n_train = 50;
  int n_test = 10;
  detector::DetectorConfig detector;
  detector::TrainConfig train;
  ssl::RefineConfig refine;
  std::vector<double> thresholds_mm;

  RunConfig();
};

nlohmann::json to_json(const RunConfig& c);
/// Keys absent from `j` keep their defaults. Throws ConfigError.
RunConfig from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

std::string config_hash(const RunConfig& c);
/// {"run_config": {"version", "sha256"}} for embedding in artifacts.
nlohmann::json config_echo(const RunConfig& c);

}  // namespace volpose::cli

#endif  // VOLPOSE_CLI_RUN_CONFIG_HPP
