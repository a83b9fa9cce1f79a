// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode differentiation over an explicit, append-only computation
// graph. Node ids are topological positions: a node's inputs always have
// smaller ids.
//
// Two training paths are provided:
//  * forward(discard=false) + backward_plain(): every node value stays live.
//  * forward(discard=true) + backward_checkpointed(): only checkpoint nodes
//    keep their values after the forward pass; the backward pass walks the
//    checkpoint-delimited segments in reverse, re-running each segment from
//    the checkpoints upstream of it before backpropagating through it.
//
// Both paths accumulate gradients in the same node order and all kernels
// reduce in a fixed order, so their gradient maps are bitwise equal.

#ifndef VOLPOSE_AUTODIFF_GRAPH_HPP
#define VOLPOSE_AUTODIFF_GRAPH_HPP

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "volpose/autodiff/tensor.hpp"

namespace volpose::autodiff {

using NodeId = std::int32_t;

enum class OpKind { input, conv3d, deconv3d, max_pool3d, batch_norm, relu, concat, add, l2_loss, sum };

std::string_view op_name(OpKind op);
OpKind op_from_name(std::string_view name);

/// Shape rule violated while building or feeding the graph.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(NodeId node, const std::string& what);
  NodeId node() const { return node_; }

 private:
  NodeId node_;
};

/// Misuse of the graph API (unknown ids, passes run out of order, ...).
class GraphError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class NonFiniteError : public std::runtime_error {
 public:
  NonFiniteError(NodeId first_bad_node, const std::string& what);
  NodeId node() const { return node_; }

 private:
  NodeId node_;
};

/// Raised when checkpointed backward finds a value it relies on missing.
class InvariantViolation : public std::logic_error {
 public:
  InvariantViolation(int segment, const std::string& what);
  int segment() const { return segment_; }

 private:
  int segment_;
};

struct NodeAttrs {
  std::int64_t out_channels = 0;
  std::int64_t kernel = 0;
};

template <typename T>
struct BasicNode {
  NodeId id = -1;
  OpKind op = OpKind::input;
  std::string name;
  std::string block;  // builder tag, used by the block_boundary policy
  std::vector<NodeId> inputs;
  std::vector<std::size_t> params;  // indices into BasicGraph::parameters()
  NodeAttrs attrs;
  Shape shape;
  std::optional<BasicTensor<T>> value;
  bool is_checkpoint = false;
};

template <typename T>
struct BasicParameter {
  std::string id;
  BasicTensor<T> value;
};

/// Parameter id -> gradient of the loss, same shape as the parameter.
template <typename T>
using BasicGradientMap = std::map<std::string, BasicTensor<T>>;

/// Thrown when a value allocation would push live bytes past the meter cap.
class MemoryCapExceeded : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Live-bytes accounting for node value buffers only, with an optional
/// simulated capacity.
class MemMeter {
 public:
  void reset() { current_ = peak_ = 0; }
  /// 0 disables the cap. Survives reset().
  void set_cap(std::size_t bytes) { cap_ = bytes; }
  std::size_t cap() const { return cap_; }
  void allocate(std::size_t bytes);
  void release(std::size_t bytes);
  std::size_t current() const { return current_; }
  std::size_t peak() const { return peak_; }

 private:
  std::size_t current_ = 0;
  std::size_t peak_ = 0;
  std::size_t cap_ = 0;
};

struct PassStats {
  std::size_t forward_peak_bytes = 0;
  std::size_t step_peak_bytes = 0;   // forward + backward
  std::size_t recompute_events = 0;  // node evaluations during backward
  std::set<NodeId> recomputed;       // distinct nodes discarded and re-run
  int segments = 0;
};

template <typename T>
class BasicGraph {
 public:
  using Tensor = BasicTensor<T>;
  using Node = BasicNode<T>;
  using Parameter = BasicParameter<T>;
  using GradientMap = BasicGradientMap<T>;
  using InputMap = std::map<std::string, Tensor, std::less<>>;

  // --- construction -------------------------------------------------------
  NodeId input(std::string name, Shape shape);
  NodeId conv3d(NodeId x, std::int64_t out_channels, std::int64_t kernel, std::string name);
  NodeId deconv3d(NodeId x, std::int64_t out_channels, std::string name);
  NodeId max_pool3d(NodeId x, std::string name = {});
  NodeId batch_norm(NodeId x, std::string name);
  NodeId relu(NodeId x, std::string name = {});
  NodeId concat(NodeId a, NodeId b, std::string name = {});
  NodeId add(NodeId a, NodeId b, std::string name = {});
  NodeId l2_loss(NodeId pred, NodeId target, std::string name = {});
  NodeId sum(NodeId x, std::string name = {});

  /// Tag applied to nodes added from now on.
  void set_block(std::string tag) { block_ = std::move(tag); }
  /// Defaults to the most recently added l2_loss or sum node.
  void set_loss(NodeId id);
  NodeId loss_node() const { return loss_; }

  /// He-normal weights, zero biases, unit BN scale. Deterministic per seed.
  void init_parameters(std::uint64_t seed);

  // --- inspection ---------------------------------------------------------
  std::size_t size() const { return nodes_.size(); }
  const Node& node(NodeId id) const;
  const std::vector<Node>& nodes() const { return nodes_; }
  std::vector<Parameter>& parameters() { return params_; }
  const std::vector<Parameter>& parameters() const { return params_; }
  std::int64_t parameter_count() const;
  NodeId find_input(std::string_view name) const;
  /// Consumers of each node, in id order.
  std::vector<std::vector<NodeId>> consumers() const;

  // --- checkpointing -------------------------------------------------------
  /// Replaces the checkpoint set. Inputs and the loss are always treated as
  /// checkpoints by the checkpointed passes whether listed or not.
  void set_checkpoints(const std::set<NodeId>& ids);
  const std::set<NodeId>& checkpoints() const { return checkpoints_; }

  // --- execution -----------------------------------------------------------
  /// Runs the loss's ancestors. With discard=true only checkpoint values are
  /// retained once their forward consumers have run.
  T forward(const InputMap& inputs, bool discard);
  GradientMap backward_plain();
  GradientMap backward_checkpointed();

  /// Inference path: computes `output` and its ancestors, freeing each value
  /// once its consumers have run. Leaves no values behind.
  Tensor evaluate(const InputMap& inputs, NodeId output);

  /// Gradient w.r.t. a named input from the last backward pass, if any.
  const Tensor* input_gradient(std::string_view name) const;
  const Tensor* value(NodeId id) const;
  void clear_values();

  const MemMeter& mem_meter() const { return meter_; }
  /// Simulated memory limit for value buffers; 0 removes it. A pass that
  /// would exceed it throws MemoryCapExceeded.
  void set_memory_cap(std::size_t bytes) { meter_.set_cap(bytes); }
  const PassStats& stats() const { return stats_; }

 private:
  enum class Mode { none, plain, checkpointed };

  NodeId add_node(Node n);
  void check_id(NodeId id) const;
  bool effective_checkpoint(NodeId id) const;
  std::vector<bool> ancestors_of(NodeId id) const;
  Tensor compute(NodeId id, const InputMap* inputs) const;
  void store(NodeId id, Tensor t);
  void release(NodeId id);
  void backward_node(NodeId id, std::vector<std::optional<Tensor>>& grads,
                     std::vector<std::optional<Tensor>>& param_grads);
  void materialize(NodeId id, int segment, std::vector<NodeId>& created);
  GradientMap collect(std::vector<std::optional<Tensor>>& grads,
                      std::vector<std::optional<Tensor>>& param_grads);

  std::vector<Node> nodes_;
  std::vector<Parameter> params_;
  std::set<NodeId> checkpoints_;
  std::string block_;
  NodeId loss_ = -1;
  Mode mode_ = Mode::none;
  MemMeter meter_;
  PassStats stats_;
  std::map<std::string, Tensor, std::less<>> input_grads_;
};

/// Which inputs (by position) and whether the output a primitive's backward
/// rule reads. Drives what checkpointed recomputation must keep alive.
struct BackwardNeeds {
  bool inputs[2] = {false, false};
  bool output = false;
};
BackwardNeeds backward_needs(OpKind op);

using Graph = BasicGraph<float>;
using Graph64 = BasicGraph<double>;
using GradientMap = BasicGradientMap<float>;
using Parameter = BasicParameter<float>;

extern template class BasicGraph<float>;
extern template class BasicGraph<double>;

}  // namespace volpose::autodiff

#endif  // VOLPOSE_AUTODIFF_GRAPH_HPP
