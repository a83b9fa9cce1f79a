// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/autodiff/graph.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

#include "kernels.hpp"

namespace volpose::autodiff {

namespace {

constexpr std::string_view kOpNames[] = {"input", "conv3d",  "deconv3d", "max_pool3d", "batch_norm",
                                         "relu",  "concat", "add",      "l2_loss",    "sum"};

std::string node_label(NodeId id, OpKind op) {
  return "node " + std::to_string(id) + " (" + std::string(op_name(op)) + ")";
}

}  // namespace

std::string_view op_name(OpKind op) { return kOpNames[static_cast<int>(op)]; }

OpKind op_from_name(std::string_view name) {
  for (std::size_t i = 0; i < std::size(kOpNames); ++i) {
    if (kOpNames[i] == name) return static_cast<OpKind>(i);
  }
  throw GraphError("unknown op kind '" + std::string(name) + "'");
}

ShapeError::ShapeError(NodeId node, const std::string& what)
    : std::invalid_argument(what), node_(node) {}

NonFiniteError::NonFiniteError(NodeId first_bad_node, const std::string& what)
    : std::runtime_error(what), node_(first_bad_node) {}

InvariantViolation::InvariantViolation(int segment, const std::string& what)
    : std::logic_error("segment " + std::to_string(segment) + ": " + what), segment_(segment) {}

void MemMeter::allocate(std::size_t bytes) {
  if (cap_ != 0 && current_ + bytes > cap_) {
    throw MemoryCapExceeded("allocating " + std::to_string(bytes) + " bytes with " + std::to_string(current_) +
                            " live exceeds the cap of " + std::to_string(cap_));
  }
  current_ += bytes;
  peak_ = std::max(peak_, current_);
}

void MemMeter::release(std::size_t bytes) { current_ -= std::min(bytes, current_); }

BackwardNeeds backward_needs(OpKind op) {
  BackwardNeeds n;
  switch (op) {
    case OpKind::conv3d:
    case OpKind::deconv3d:
    case OpKind::max_pool3d:
    case OpKind::batch_norm:
      n.inputs[0] = true;
      break;
    case OpKind::relu:
      n.output = true;
      break;
    case OpKind::l2_loss:
      n.inputs[0] = n.inputs[1] = true;
      break;
    case OpKind::input:
    case OpKind::concat:
    case OpKind::add:
    case OpKind::sum:
      break;
  }
  return n;
}

// ---------------------------------------------------------------------------
// construction

template <typename T>
void BasicGraph<T>::check_id(NodeId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) {
    throw GraphError("unknown node id " + std::to_string(id));
  }
}

template <typename T>
NodeId BasicGraph<T>::add_node(Node n) {
  n.id = static_cast<NodeId>(nodes_.size());
  n.block = block_;
  for (NodeId in : n.inputs) check_id(in);
  nodes_.push_back(std::move(n));
  mode_ = Mode::none;
  return nodes_.back().id;
}

template <typename T>
NodeId BasicGraph<T>::input(std::string name, Shape shape) {
  const auto next = static_cast<NodeId>(nodes_.size());
  if (shape.empty()) throw ShapeError(next, node_label(next, OpKind::input) + ": empty shape");
  for (auto e : shape) {
    if (e <= 0) {
      throw ShapeError(next, node_label(next, OpKind::input) + ": non-positive extent in " +
                                 shape_to_string(shape));
    }
  }
  for (const auto& n : nodes_) {
    if (n.op == OpKind::input && n.name == name) {
      throw GraphError("duplicate input name '" + name + "'");
    }
  }
  Node n;
  n.op = OpKind::input;
  n.name = std::move(name);
  n.shape = std::move(shape);
  return add_node(std::move(n));
}

namespace {

void require_rank4(NodeId next, OpKind op, const Shape& s) {
  if (s.size() != 4) {
    throw ShapeError(next, node_label(next, op) + ": expected rank-4 [C, D, H, W] input, got " +
                               shape_to_string(s));
  }
}

}  // namespace

template <typename T>
NodeId BasicGraph<T>::conv3d(NodeId x, std::int64_t out_channels, std::int64_t kernel,
                             std::string name) {
  check_id(x);
  const auto next = static_cast<NodeId>(nodes_.size());
  const Shape& in = nodes_[x].shape;
  require_rank4(next, OpKind::conv3d, in);
  if (out_channels <= 0) throw ShapeError(next, node_label(next, OpKind::conv3d) + ": out_channels must be positive");
  if (kernel <= 0 || kernel % 2 == 0) {
    throw ShapeError(next, node_label(next, OpKind::conv3d) + ": kernel must be odd and positive, got " +
                               std::to_string(kernel));
  }
  for (int i = 1; i < 4; ++i) {
    if (kernel / 2 >= in[i]) {
      throw ShapeError(next, node_label(next, OpKind::conv3d) + ": kernel " + std::to_string(kernel) +
                                 " does not fit same-padding on input " + shape_to_string(in));
    }
  }
  Node n;
  n.op = OpKind::conv3d;
  n.name = name;
  n.inputs = {x};
  n.attrs = {out_channels, kernel};
  n.shape = {out_channels, in[1], in[2], in[3]};
  n.params = {params_.size(), params_.size() + 1};
  params_.push_back({name + ".weight", Tensor({out_channels, in[0], kernel, kernel, kernel})});
  params_.push_back({name + ".bias", Tensor({out_channels})});
  return add_node(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::deconv3d(NodeId x, std::int64_t out_channels, std::string name) {
  check_id(x);
  const auto next = static_cast<NodeId>(nodes_.size());
  const Shape& in = nodes_[x].shape;
  require_rank4(next, OpKind::deconv3d, in);
  if (out_channels <= 0) throw ShapeError(next, node_label(next, OpKind::deconv3d) + ": out_channels must be positive");
  Node n;
  n.op = OpKind::deconv3d;
  n.name = name;
  n.inputs = {x};
  n.attrs = {out_channels, 2};
  n.shape = {out_channels, 2 * in[1], 2 * in[2], 2 * in[3]};
  n.params = {params_.size(), params_.size() + 1};
  params_.push_back({name + ".weight", Tensor({in[0], out_channels, 2, 2, 2})});
  params_.push_back({name + ".bias", Tensor({out_channels})});
  return add_node(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::max_pool3d(NodeId x, std::string name) {
  check_id(x);
  const auto next = static_cast<NodeId>(nodes_.size());
  const Shape& in = nodes_[x].shape;
  require_rank4(next, OpKind::max_pool3d, in);
  for (int i = 1; i < 4; ++i) {
    if (in[i] < 2) {
      throw ShapeError(next, node_label(next, OpKind::max_pool3d) +
                                 ": spatial extents must be >= 2, got " + shape_to_string(in));
    }
  }
  Node n;
  n.op = OpKind::max_pool3d;
  n.name = std::move(name);
  n.inputs = {x};
  n.shape = {in[0], in[1] / 2, in[2] / 2, in[3] / 2};
  return add_node(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::batch_norm(NodeId x, std::string name) {
  check_id(x);
  const auto next = static_cast<NodeId>(nodes_.size());
  const Shape& in = nodes_[x].shape;
  require_rank4(next, OpKind::batch_norm, in);
  Node n;
  n.op = OpKind::batch_norm;
  n.name = name;
  n.inputs = {x};
  n.shape = in;
  n.params = {params_.size(), params_.size() + 1};
  params_.push_back({name + ".gamma", Tensor({in[0]}, T{1})});
  params_.push_back({name + ".beta", Tensor({in[0]})});
  return add_node(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::relu(NodeId x, std::string name) {
  check_id(x);
  Node n;
  n.op = OpKind::relu;
  n.name = std::move(name);
  n.inputs = {x};
  n.shape = nodes_[x].shape;
  return add_node(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::concat(NodeId a, NodeId b, std::string name) {
  check_id(a);
  check_id(b);
  const auto next = static_cast<NodeId>(nodes_.size());
  const Shape& sa = nodes_[a].shape;
  const Shape& sb = nodes_[b].shape;
  require_rank4(next, OpKind::concat, sa);
  require_rank4(next, OpKind::concat, sb);
  if (!std::equal(sa.begin() + 1, sa.end(), sb.begin() + 1)) {
    throw ShapeError(next, node_label(next, OpKind::concat) + ": spatial extents differ, expected " +
                               shape_to_string(sa) + " got " + shape_to_string(sb));
  }
  Node n;
  n.op = OpKind::concat;
  n.name = std::move(name);
  n.inputs = {a, b};
  n.shape = {sa[0] + sb[0], sa[1], sa[2], sa[3]};
  return add_node(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::add(NodeId a, NodeId b, std::string name) {
  check_id(a);
  check_id(b);
  const auto next = static_cast<NodeId>(nodes_.size());
  if (nodes_[a].shape != nodes_[b].shape) {
    throw ShapeError(next, node_label(next, OpKind::add) + ": expected " +
                               shape_to_string(nodes_[a].shape) + " got " +
                               shape_to_string(nodes_[b].shape));
  }
  Node n;
  n.op = OpKind::add;
  n.name = std::move(name);
  n.inputs = {a, b};
  n.shape = nodes_[a].shape;
  return add_node(std::move(n));
}

template <typename T>
NodeId BasicGraph<T>::l2_loss(NodeId pred, NodeId target, std::string name) {
  check_id(pred);
  check_id(target);
  const auto next = static_cast<NodeId>(nodes_.size());
  if (nodes_[pred].shape != nodes_[target].shape) {
    throw ShapeError(next, node_label(next, OpKind::l2_loss) + ": expected " +
                               shape_to_string(nodes_[pred].shape) + " got " +
                               shape_to_string(nodes_[target].shape));
  }
  Node n;
  n.op = OpKind::l2_loss;
  n.name = std::move(name);
  n.inputs = {pred, target};
  n.shape = {1};
  loss_ = add_node(std::move(n));
  return loss_;
}

template <typename T>
NodeId BasicGraph<T>::sum(NodeId x, std::string name) {
  check_id(x);
  Node n;
  n.op = OpKind::sum;
  n.name = std::move(name);
  n.inputs = {x};
  n.shape = {1};
  loss_ = add_node(std::move(n));
  return loss_;
}

template <typename T>
void BasicGraph<T>::set_loss(NodeId id) {
  check_id(id);
  if (nodes_[id].shape != Shape{1}) {
    throw ShapeError(id, node_label(id, nodes_[id].op) + ": loss must be a scalar, got " +
                             shape_to_string(nodes_[id].shape));
  }
  loss_ = id;
  mode_ = Mode::none;
}

template <typename T>
void BasicGraph<T>::init_parameters(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (const auto& n : nodes_) {
    if (n.op == OpKind::conv3d || n.op == OpKind::deconv3d) {
      auto& w = params_[n.params[0]].value;
      const double fan_in = n.op == OpKind::conv3d
                                ? static_cast<double>(w.dim(1) * w.dim(2) * w.dim(3) * w.dim(4))
                                : static_cast<double>(w.dim(0));
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& v : w.data()) v = static_cast<T>(dist(rng));
      params_[n.params[1]].value.fill(T{0});
    } else if (n.op == OpKind::batch_norm) {
      params_[n.params[0]].value.fill(T{1});
      params_[n.params[1]].value.fill(T{0});
    }
  }
}

// ---------------------------------------------------------------------------
// inspection

template <typename T>
const typename BasicGraph<T>::Node& BasicGraph<T>::node(NodeId id) const {
  check_id(id);
  return nodes_[id];
}

template <typename T>
std::int64_t BasicGraph<T>::parameter_count() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
NodeId BasicGraph<T>::find_input(std::string_view name) const {
  for (const auto& n : nodes_) {
    if (n.op == OpKind::input && n.name == name) return n.id;
  }
  throw GraphError("no input named '" + std::string(name) + "'");
}

template <typename T>
std::vector<std::vector<NodeId>> BasicGraph<T>::consumers() const {
  std::vector<std::vector<NodeId>> out(nodes_.size());
  for (const auto& n : nodes_) {
    for (NodeId in : n.inputs) out[in].push_back(n.id);
  }
  return out;
}

template <typename T>
void BasicGraph<T>::set_checkpoints(const std::set<NodeId>& ids) {
  for (NodeId id : ids) check_id(id);
  checkpoints_ = ids;
  for (auto& n : nodes_) n.is_checkpoint = ids.contains(n.id);
}

template <typename T>
bool BasicGraph<T>::effective_checkpoint(NodeId id) const {
  return nodes_[id].is_checkpoint || nodes_[id].op == OpKind::input || id == loss_;
}

template <typename T>
std::vector<bool> BasicGraph<T>::ancestors_of(NodeId id) const {
  std::vector<bool> active(nodes_.size(), false);
  active[id] = true;
  for (NodeId i = id; i >= 0; --i) {
    if (!active[i]) continue;
    for (NodeId in : nodes_[i].inputs) active[in] = true;
  }
  return active;
}

template <typename T>
const typename BasicGraph<T>::Tensor* BasicGraph<T>::value(NodeId id) const {
  check_id(id);
  return nodes_[id].value ? &*nodes_[id].value : nullptr;
}

template <typename T>
const typename BasicGraph<T>::Tensor* BasicGraph<T>::input_gradient(std::string_view name) const {
  auto it = input_grads_.find(name);
  return it == input_grads_.end() ? nullptr : &it->second;
}

template <typename T>
void BasicGraph<T>::clear_values() {
  for (auto& n : nodes_) n.value.reset();
  meter_.reset();
  mode_ = Mode::none;
}

// ---------------------------------------------------------------------------
// execution

template <typename T>
void BasicGraph<T>::store(NodeId id, Tensor t) {
  meter_.allocate(t.bytes());
  nodes_[id].value = std::move(t);
}

template <typename T>
void BasicGraph<T>::release(NodeId id) {
  auto& v = nodes_[id].value;
  if (!v) return;
  meter_.release(v->bytes());
  v.reset();
}

template <typename T>
typename BasicGraph<T>::Tensor BasicGraph<T>::compute(NodeId id, const InputMap* inputs) const {
  const Node& n = nodes_[id];
  auto in = [&](std::size_t i) -> const Tensor& {
    const auto& v = nodes_[n.inputs[i]].value;
    if (!v) {
      throw GraphError(node_label(id, n.op) + ": input node " + std::to_string(n.inputs[i]) +
                       " has no value");
    }
    return *v;
  };
  auto param = [&](std::size_t i) -> const Tensor& { return params_[n.params[i]].value; };

  if (n.op == OpKind::input) {
    if (inputs == nullptr) throw GraphError(node_label(id, n.op) + ": input value unavailable");
    auto it = inputs->find(n.name);
    if (it == inputs->end()) throw GraphError("missing value for input '" + n.name + "'");
    if (it->second.shape() != n.shape) {
      throw ShapeError(id, node_label(id, n.op) + " '" + n.name + "': expected " +
                               shape_to_string(n.shape) + " got " +
                               shape_to_string(it->second.shape()));
    }
    return it->second;
  }

  Tensor out(n.shape);
  switch (n.op) {
    case OpKind::conv3d:
      kernels::conv3d_forward(in(0), param(0), param(1), out);
      break;
    case OpKind::deconv3d:
      kernels::deconv3d_forward(in(0), param(0), param(1), out);
      break;
    case OpKind::max_pool3d:
      kernels::max_pool3d_forward(in(0), out);
      break;
    case OpKind::batch_norm:
      kernels::batch_norm_forward(in(0), param(0), param(1), out);
      break;
    case OpKind::relu:
      kernels::relu_forward(in(0), out);
      break;
    case OpKind::concat:
      kernels::concat_forward(in(0), in(1), out);
      break;
    case OpKind::add:
      kernels::add_forward(in(0), in(1), out);
      break;
    case OpKind::l2_loss:
      out[0] = kernels::l2_loss_forward(in(0), in(1));
      break;
    case OpKind::sum:
      out[0] = kernels::sum_forward(in(0));
      break;
    case OpKind::input:
      break;
  }
  return out;
}

template <typename T>
T BasicGraph<T>::forward(const InputMap& inputs, bool discard) {
  if (loss_ < 0) throw GraphError("forward: graph has no loss node");
  if (discard && checkpoints_.empty()) {
    throw GraphError("forward: discard=true requires a non-empty checkpoint set");
  }
  clear_values();
  stats_ = {};
  input_grads_.clear();

  const std::vector<bool> active = ancestors_of(loss_);
  std::vector<int> uses(nodes_.size(), 0);
  for (const auto& n : nodes_) {
    if (!active[n.id]) continue;
    for (NodeId in : n.inputs) ++uses[in];
  }

  NodeId first_bad = -1;
  for (const auto& n : nodes_) {
    if (!active[n.id]) continue;
    store(n.id, compute(n.id, &inputs));
    if (first_bad < 0 && !nodes_[n.id].value->all_finite()) first_bad = n.id;
    if (discard) {
      for (NodeId in : n.inputs) {
        if (--uses[in] == 0 && !effective_checkpoint(in)) release(in);
      }
      if (uses[n.id] == 0 && !effective_checkpoint(n.id)) release(n.id);
    }
  }
  stats_.forward_peak_bytes = meter_.peak();
  mode_ = discard ? Mode::checkpointed : Mode::plain;

  const T loss = (*nodes_[loss_].value)[0];
  if (!std::isfinite(loss)) {
    throw NonFiniteError(first_bad, "non-finite loss; first non-finite value at " +
                                        node_label(first_bad, nodes_[first_bad].op));
  }
  return loss;
}

namespace {

template <typename T>
void accumulate(std::optional<BasicTensor<T>>& slot, BasicTensor<T>&& g) {
  if (!slot) {
    slot = std::move(g);
    return;
  }
  auto dst = slot->data();
  auto src = g.data();
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace

template <typename T>
void BasicGraph<T>::backward_node(NodeId id, std::vector<std::optional<Tensor>>& grads,
                                  std::vector<std::optional<Tensor>>& param_grads) {
  const Node& n = nodes_[id];
  const Tensor& gy = *grads[id];
  auto in = [&](std::size_t i) -> const Tensor& {
    const auto& v = nodes_[n.inputs[i]].value;
    if (!v) {
      throw GraphError(node_label(id, n.op) + ": backward needs the value of node " +
                       std::to_string(n.inputs[i]));
    }
    return *v;
  };
  auto in_shape = [&](std::size_t i) -> const Shape& { return nodes_[n.inputs[i]].shape; };
  auto param = [&](std::size_t i) -> const Tensor& { return params_[n.params[i]].value; };

  switch (n.op) {
    case OpKind::input:
      return;
    case OpKind::conv3d:
    case OpKind::deconv3d: {
      Tensor gx(in_shape(0));
      Tensor gw(param(0).shape());
      Tensor gb(param(1).shape());
      if (n.op == OpKind::conv3d) {
        kernels::conv3d_backward(in(0), param(0), gy, gx, gw, gb);
      } else {
        kernels::deconv3d_backward(in(0), param(0), gy, gx, gw, gb);
      }
      accumulate(param_grads[n.params[0]], std::move(gw));
      accumulate(param_grads[n.params[1]], std::move(gb));
      accumulate(grads[n.inputs[0]], std::move(gx));
      return;
    }
    case OpKind::max_pool3d: {
      Tensor gx(in_shape(0));
      kernels::max_pool3d_backward(in(0), gy, gx);
      accumulate(grads[n.inputs[0]], std::move(gx));
      return;
    }
    case OpKind::batch_norm: {
      Tensor gx(in_shape(0));
      Tensor gg(param(0).shape());
      Tensor gbeta(param(1).shape());
      kernels::batch_norm_backward(in(0), param(0), gy, gx, gg, gbeta);
      accumulate(param_grads[n.params[0]], std::move(gg));
      accumulate(param_grads[n.params[1]], std::move(gbeta));
      accumulate(grads[n.inputs[0]], std::move(gx));
      return;
    }
    case OpKind::relu: {
      if (!n.value) throw GraphError(node_label(id, n.op) + ": backward needs its own value");
      Tensor gx(in_shape(0));
      kernels::relu_backward(*n.value, gy, gx);
      accumulate(grads[n.inputs[0]], std::move(gx));
      return;
    }
    case OpKind::concat: {
      Tensor ga(in_shape(0));
      Tensor gb(in_shape(1));
      kernels::concat_backward(gy, ga, gb);
      accumulate(grads[n.inputs[0]], std::move(ga));
      accumulate(grads[n.inputs[1]], std::move(gb));
      return;
    }
    case OpKind::add: {
      accumulate(grads[n.inputs[0]], Tensor(gy));
      accumulate(grads[n.inputs[1]], Tensor(gy));
      return;
    }
    case OpKind::l2_loss: {
      Tensor gp(in_shape(0));
      Tensor gt(in_shape(1));
      kernels::l2_loss_backward(in(0), in(1), gy[0], gp, gt);
      accumulate(grads[n.inputs[0]], std::move(gp));
      accumulate(grads[n.inputs[1]], std::move(gt));
      return;
    }
    case OpKind::sum: {
      accumulate(grads[n.inputs[0]], Tensor(in_shape(0), gy[0]));
      return;
    }
  }
}

template <typename T>
typename BasicGraph<T>::GradientMap BasicGraph<T>::collect(
    std::vector<std::optional<Tensor>>& grads, std::vector<std::optional<Tensor>>& param_grads) {
  GradientMap out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (param_grads[i]) out.emplace(params_[i].id, std::move(*param_grads[i]));
  }
  for (const auto& n : nodes_) {
    if (n.op == OpKind::input && grads[n.id]) input_grads_.emplace(n.name, std::move(*grads[n.id]));
  }
  stats_.step_peak_bytes = meter_.peak();
  return out;
}

template <typename T>
typename BasicGraph<T>::GradientMap BasicGraph<T>::backward_plain() {
  if (mode_ != Mode::plain) {
    throw GraphError("backward_plain: run forward(discard=false) first");
  }
  const std::vector<bool> active = ancestors_of(loss_);
  for (const auto& n : nodes_) {
    if (active[n.id] && !n.value) {
      throw GraphError("backward_plain: " + node_label(n.id, n.op) +
                       " has no value (forward not run)");
    }
  }
  std::vector<std::optional<Tensor>> grads(nodes_.size());
  std::vector<std::optional<Tensor>> param_grads(params_.size());
  grads[loss_] = Tensor({1}, T{1});
  for (NodeId id = loss_; id >= 0; --id) {
    if (!active[id] || !grads[id]) continue;
    backward_node(id, grads, param_grads);
    if (nodes_[id].op != OpKind::input) grads[id].reset();
  }
  mode_ = Mode::none;
  return collect(grads, param_grads);
}

template <typename T>
void BasicGraph<T>::materialize(NodeId id, int segment, std::vector<NodeId>& created) {
  if (nodes_[id].value) return;
  if (effective_checkpoint(id)) {
    throw InvariantViolation(segment, "checkpoint " + node_label(id, nodes_[id].op) +
                                          " was discarded before the segments that need it");
  }
  std::vector<NodeId> local;
  for (NodeId in : nodes_[id].inputs) materialize(in, segment, local);
  store(id, compute(id, nullptr));
  ++stats_.recompute_events;
  stats_.recomputed.insert(id);
  for (NodeId t : local) release(t);
  created.push_back(id);
}

template <typename T>
typename BasicGraph<T>::GradientMap BasicGraph<T>::backward_checkpointed() {
  if (mode_ != Mode::checkpointed) {
    throw GraphError("backward_checkpointed: run forward(discard=true) first");
  }
  const std::vector<bool> active = ancestors_of(loss_);

  // Segment k covers the active nodes after checkpoint k-1 up to and
  // including checkpoint k. Fed inputs hold their values throughout, so they
  // never close a segment; otherwise an input declared late (a target) would
  // cut its consumer off from the other operand.
  std::vector<std::vector<NodeId>> segments(1);
  for (const auto& n : nodes_) {
    if (!active[n.id]) continue;
    segments.back().push_back(n.id);
    if (effective_checkpoint(n.id) && n.op != OpKind::input && n.id != loss_) segments.emplace_back();
  }
  if (segments.back().empty()) segments.pop_back();
  stats_.segments = static_cast<int>(segments.size());

  std::vector<std::optional<Tensor>> grads(nodes_.size());
  std::vector<std::optional<Tensor>> param_grads(params_.size());
  grads[loss_] = Tensor({1}, T{1});

  for (int s = static_cast<int>(segments.size()) - 1; s >= 0; --s) {
    const auto& seg = segments[s];
    const NodeId end = seg.back();
    if (!nodes_[end].value) {
      throw InvariantViolation(s, "upstream checkpoint " + node_label(end, nodes_[end].op) +
                                      " has no value");
    }

    // Values the segment's backward rules read, and the position (in reverse
    // processing order) of their last reader.
    std::map<NodeId, std::size_t> last_reader;
    for (std::size_t r = 0; r < seg.size(); ++r) {
      const Node& v = nodes_[seg[seg.size() - 1 - r]];
      const BackwardNeeds needs = backward_needs(v.op);
      if (needs.output) last_reader[v.id] = r;
      for (std::size_t i = 0; i < v.inputs.size(); ++i) {
        if (needs.inputs[i]) last_reader[v.inputs[i]] = r;
      }
    }
    auto needed = [&](NodeId id) { return last_reader.contains(id); };

    // Forward consumers inside this segment, to free transient values early.
    std::map<NodeId, int> uses;
    for (NodeId v : seg) {
      if (effective_checkpoint(v)) continue;
      for (NodeId in : nodes_[v].inputs) ++uses[in];
    }

    for (NodeId v : seg) {
      if (effective_checkpoint(v)) continue;
      std::vector<NodeId> created;
      for (NodeId in : nodes_[v].inputs) materialize(in, s, created);
      store(v, compute(v, nullptr));
      ++stats_.recompute_events;
      stats_.recomputed.insert(v);
      for (NodeId in : nodes_[v].inputs) {
        if (--uses[in] == 0 && !effective_checkpoint(in) && !needed(in)) release(in);
      }
      if (uses[v] == 0 && !needed(v)) release(v);
    }

    for (std::size_t r = 0; r < seg.size(); ++r) {
      const NodeId v = seg[seg.size() - 1 - r];
      if (active[v] && grads[v]) {
        const BackwardNeeds needs = backward_needs(nodes_[v].op);
        for (std::size_t i = 0; i < nodes_[v].inputs.size(); ++i) {
          const NodeId in = nodes_[v].inputs[i];
          if (needs.inputs[i] && !nodes_[in].value) {
            throw InvariantViolation(s, "value of " + node_label(in, nodes_[in].op) +
                                            " missing for backward of " +
                                            node_label(v, nodes_[v].op));
          }
        }
        backward_node(v, grads, param_grads);
        if (nodes_[v].op != OpKind::input) grads[v].reset();
      }
      for (auto it = last_reader.begin(); it != last_reader.end();) {
        if (it->second == r && !effective_checkpoint(it->first)) {
          release(it->first);
          it = last_reader.erase(it);
        } else {
          ++it;
        }
      }
    }

    // Everything downstream of this segment is done: drop what is left,
    // including the checkpoint closing the segment.
    for (NodeId v : seg) release(v);
    for (const auto& [id, r] : last_reader) {
      if (!effective_checkpoint(id)) release(id);
    }
  }
  mode_ = Mode::none;
  return collect(grads, param_grads);
}

template <typename T>
typename BasicGraph<T>::Tensor BasicGraph<T>::evaluate(const InputMap& inputs, NodeId output) {
  check_id(output);
  clear_values();
  const std::vector<bool> active = ancestors_of(output);
  std::vector<int> uses(nodes_.size(), 0);
  for (const auto& n : nodes_) {
    if (!active[n.id]) continue;
    for (NodeId in : n.inputs) ++uses[in];
  }
  for (const auto& n : nodes_) {
    if (!active[n.id]) continue;
    store(n.id, compute(n.id, &inputs));
    for (NodeId in : n.inputs) {
      if (--uses[in] == 0) release(in);
    }
  }
  auto& slot = nodes_[output].value;
  meter_.release(slot->bytes());
  Tensor out = std::move(*slot);
  slot.reset();
  return out;
}

template class BasicGraph<float>;
template class BasicGraph<double>;

}  // namespace volpose::autodiff
