// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/autodiff/graph_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>

namespace volpose::autodiff {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little,
              "parameter blobs are written in host order; big-endian hosts are unsupported");

json shape_json(const Shape& s) { return json(s); }

Shape shape_from(const json& j) { return j.get<Shape>(); }

}  // namespace

json graph_to_json(const Graph& graph) {
  json nodes = json::array();
  for (const auto& n : graph.nodes()) {
    json jn = {{"id", n.id},
               {"op", op_name(n.op)},
               {"name", n.name},
               {"block", n.block},
               {"inputs", n.inputs},
               {"shape", shape_json(n.shape)}};
    if (n.op == OpKind::conv3d || n.op == OpKind::deconv3d) {
      jn["out_channels"] = n.attrs.out_channels;
      jn["kernel"] = n.attrs.kernel;
    }
    json params = json::array();
    for (std::size_t p : n.params) {
      const auto& prm = graph.parameters()[p];
      params.push_back({{"id", prm.id}, {"shape", shape_json(prm.value.shape())}});
    }
    jn["params"] = std::move(params);
    nodes.push_back(std::move(jn));
  }
  return {{"format", "volpose.graph"},
          {"version", kGraphFormatVersion},
          {"dtype", "f32"},
          {"loss", graph.loss_node()},
          {"nodes", std::move(nodes)}};
}

Graph graph_from_json(const json& j) {
  if (j.value("format", "") != "volpose.graph") throw GraphError("not a volpose graph description");
  if (j.value("version", 0) != kGraphFormatVersion) {
    throw GraphError("unsupported graph format version " + std::to_string(j.value("version", 0)));
  }
  Graph g;
  for (const auto& jn : j.at("nodes")) {
    const OpKind op = op_from_name(jn.at("op").get<std::string>());
    const auto inputs = jn.at("inputs").get<std::vector<NodeId>>();
    const auto name = jn.at("name").get<std::string>();
    g.set_block(jn.value("block", ""));
    auto need = [&](std::size_t n) {
      if (inputs.size() != n) {
        throw GraphError("node " + std::to_string(jn.at("id").get<int>()) + ": expected " +
                         std::to_string(n) + " inputs");
      }
    };
    NodeId id = -1;
    switch (op) {
      case OpKind::input:
        id = g.input(name, shape_from(jn.at("shape")));
        break;
      case OpKind::conv3d:
        need(1);
        id = g.conv3d(inputs[0], jn.at("out_channels"), jn.at("kernel"), name);
        break;
      case OpKind::deconv3d:
        need(1);
        id = g.deconv3d(inputs[0], jn.at("out_channels"), name);
        break;
      case OpKind::max_pool3d:
        need(1);
        id = g.max_pool3d(inputs[0], name);
        break;
      case OpKind::batch_norm:
        need(1);
        id = g.batch_norm(inputs[0], name);
        break;
      case OpKind::relu:
        need(1);
        id = g.relu(inputs[0], name);
        break;
      case OpKind::concat:
        need(2);
        id = g.concat(inputs[0], inputs[1], name);
        break;
      case OpKind::add:
        need(2);
        id = g.add(inputs[0], inputs[1], name);
        break;
      case OpKind::l2_loss:
        need(2);
        id = g.l2_loss(inputs[0], inputs[1], name);
        break;
      case OpKind::sum:
        need(1);
        id = g.sum(inputs[0], name);
        break;
    }
    if (id != jn.at("id").get<NodeId>()) throw GraphError("node ids are not topological positions");
    if (g.node(id).shape != shape_from(jn.at("shape"))) {
      throw ShapeError(id, "node " + std::to_string(id) + ": recorded shape " +
                               shape_to_string(shape_from(jn.at("shape"))) +
                               " disagrees with rebuilt shape " + shape_to_string(g.node(id).shape));
    }
  }
  g.set_block("");
  if (j.contains("loss") && j.at("loss").get<NodeId>() >= 0) g.set_loss(j.at("loss").get<NodeId>());
  return g;
}

json save_parameters(const Graph& graph, const std::filesystem::path& blob_path,
                     const std::filesystem::path& manifest_path) {
  std::ofstream blob(blob_path, std::ios::binary | std::ios::trunc);
  if (!blob) throw std::runtime_error("cannot write " + blob_path.string());
  json entries = json::array();
  std::size_t offset = 0;
  for (const auto& p : graph.parameters()) {
    blob.write(reinterpret_cast<const char*>(p.value.raw()),
               static_cast<std::streamsize>(p.value.bytes()));
    entries.push_back({{"id", p.id},
                       {"offset", offset},
                       {"shape", shape_json(p.value.shape())},
                       {"count", p.value.numel()}});
    offset += p.value.bytes();
  }
  if (!blob) throw std::runtime_error("short write to " + blob_path.string());
  json manifest = {{"format", "volpose.params"},
                   {"version", kParamFormatVersion},
                   {"dtype", "f32"},
                   {"byte_order", "little"},
                   {"total_bytes", offset},
                   {"params", std::move(entries)}};
  std::ofstream mf(manifest_path, std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write " + manifest_path.string());
  mf << manifest.dump(2) << '\n';
  return manifest;
}

void load_parameters(Graph& graph, const std::filesystem::path& blob_path,
                     const std::filesystem::path& manifest_path) {
  std::ifstream mf(manifest_path);
  if (!mf) throw std::runtime_error("cannot read " + manifest_path.string());
  const json manifest = json::parse(mf);
  if (manifest.value("format", "") != "volpose.params" ||
      manifest.value("version", 0) != kParamFormatVersion || manifest.value("dtype", "") != "f32") {
    throw GraphError("unsupported parameter manifest " + manifest_path.string());
  }
  std::ifstream blob(blob_path, std::ios::binary);
  if (!blob) throw std::runtime_error("cannot read " + blob_path.string());
  std::vector<char> bytes((std::istreambuf_iterator<char>(blob)), std::istreambuf_iterator<char>());
  if (bytes.size() != manifest.at("total_bytes").get<std::size_t>()) {
    throw GraphError("parameter blob size disagrees with manifest");
  }

  std::map<std::string, const json*> by_id;
  for (const auto& e : manifest.at("params")) by_id[e.at("id").get<std::string>()] = &e;
  for (auto& p : graph.parameters()) {
    auto it = by_id.find(p.id);
    if (it == by_id.end()) throw GraphError("parameter '" + p.id + "' missing from manifest");
    const json& e = *it->second;
    if (shape_from(e.at("shape")) != p.value.shape()) {
      throw GraphError("parameter '" + p.id + "' shape mismatch: manifest " +
                       shape_to_string(shape_from(e.at("shape"))) + ", graph " +
                       shape_to_string(p.value.shape()));
    }
    const auto offset = e.at("offset").get<std::size_t>();
    if (offset + p.value.bytes() > bytes.size()) throw GraphError("parameter '" + p.id + "' out of range");
    std::memcpy(p.value.raw(), bytes.data() + offset, p.value.bytes());
  }
}

}  // namespace volpose::autodiff
