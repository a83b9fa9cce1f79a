// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Graph structure <-> versioned JSON, and parameters <-> a flat little-endian
// float32 blob described by a JSON manifest (id -> byte offset, shape).

#ifndef VOLPOSE_AUTODIFF_GRAPH_IO_HPP
#define VOLPOSE_AUTODIFF_GRAPH_IO_HPP

#include <filesystem>
#include <string>

#include "json.hpp"

#include "volpose/autodiff/graph.hpp"

namespace volpose::autodiff {

inline constexpr int kGraphFormatVersion = 1;
inline constexpr int kParamFormatVersion = 1;

nlohmann::json graph_to_json(const Graph& graph);
/// Rebuilds the node list (parameters zero-initialised). Throws GraphError on
/// an unknown version or inconsistent description.
Graph graph_from_json(const nlohmann::json& j);

/// Returns the manifest that was written next to the blob.
nlohmann::json save_parameters(const Graph& graph, const std::filesystem::path& blob_path,
                               const std::filesystem::path& manifest_path);
void load_parameters(Graph& graph, const std::filesystem::path& blob_path,
                     const std::filesystem::path& manifest_path);

}  // namespace volpose::autodiff

#endif  // VOLPOSE_AUTODIFF_GRAPH_IO_HPP
