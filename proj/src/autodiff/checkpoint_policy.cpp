// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/autodiff/checkpoint_policy.hpp"

#include <map>
#include <string>

namespace volpose::autodiff {

std::string_view policy_name(CheckpointPolicy p) {
  switch (p) {
    case CheckpointPolicy::block_boundary:
      return "block_boundary";
    case CheckpointPolicy::every_k:
      return "every_k";
    case CheckpointPolicy::manual:
      return "manual";
  }
  return "?";
}

CheckpointPolicy policy_from_name(std::string_view name) {
  if (name == "block_boundary") return CheckpointPolicy::block_boundary;
  if (name == "every_k") return CheckpointPolicy::every_k;
  if (name == "manual") return CheckpointPolicy::manual;
  throw std::invalid_argument("unknown checkpoint policy '" + std::string(name) + "'");
}

template <typename T>
std::set<NodeId> select_checkpoints(const BasicGraph<T>& graph, const CheckpointRequest& req) {
  std::set<NodeId> out;
  const auto& nodes = graph.nodes();

  if (req.policy == CheckpointPolicy::manual) {
    for (NodeId id : req.manual) {
      if (id < 0 || static_cast<std::size_t>(id) >= nodes.size()) {
        throw GraphError("manual checkpoint list references unknown node id " +
                         std::to_string(id));
      }
      out.insert(id);
    }
    return out;
  }

  if (req.policy == CheckpointPolicy::every_k) {
    if (req.k == 0) throw std::invalid_argument("every_k policy needs k >= 1");
    for (const auto& n : nodes) {
      if (static_cast<std::size_t>(n.id) % req.k == 0) out.insert(n.id);
    }
  } else {
    const auto consumers = graph.consumers();
    std::map<std::string, NodeId> block_end;
    for (const auto& n : nodes) {
      if (!n.block.empty()) block_end[n.block] = n.id;
    }
    for (const auto& [block, id] : block_end) {
      bool feeds_concat = false;
      for (NodeId c : consumers[id]) feeds_concat |= nodes[c].op == OpKind::concat;
      if (!feeds_concat) out.insert(id);
    }
  }

  for (const auto& n : nodes) {
    if (n.op == OpKind::input) out.insert(n.id);
  }
  if (graph.loss_node() >= 0) out.insert(graph.loss_node());
  return out;
}

template std::set<NodeId> select_checkpoints(const BasicGraph<float>&, const CheckpointRequest&);
template std::set<NodeId> select_checkpoints(const BasicGraph<double>&, const CheckpointRequest&);

}  // namespace volpose::autodiff
