// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_AUTODIFF_CHECKPOINT_POLICY_HPP
#define VOLPOSE_AUTODIFF_CHECKPOINT_POLICY_HPP

#include <cstddef>
#include <set>
#include <string_view>
#include <vector>

#include "volpose/autodiff/graph.hpp"

namespace volpose::autodiff {

enum class CheckpointPolicy { block_boundary, every_k, manual };

std::string_view policy_name(CheckpointPolicy p);
CheckpointPolicy policy_from_name(std::string_view name);

struct CheckpointRequest {
  CheckpointPolicy policy = CheckpointPolicy::block_boundary;
  std::size_t k = 0;            // every_k stride
  std::vector<NodeId> manual;   // manual node list
};

/// Picks the nodes whose values survive a discarding forward pass.
///
/// block_boundary: the last node of every builder block, except nodes that
/// feed a channel concat directly (skip sources are recomputed from the
/// checkpoint upstream of them instead of being pinned).
/// every_k: nodes whose id is a multiple of k.
/// Inputs and the loss are added to the first two policies' results.
template <typename T>
std::set<NodeId> select_checkpoints(const BasicGraph<T>& graph, const CheckpointRequest& req);

extern template std::set<NodeId> select_checkpoints(const BasicGraph<float>&,
                                                    const CheckpointRequest&);
extern template std::set<NodeId> select_checkpoints(const BasicGraph<double>&,
                                                    const CheckpointRequest&);

}  // namespace volpose::autodiff

#endif  // VOLPOSE_AUTODIFF_CHECKPOINT_POLICY_HPP
