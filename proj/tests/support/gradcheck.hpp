// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// Central-difference oracle for the autodiff primitives, in double precision.

#ifndef VOLPOSE_TESTS_SUPPORT_GRADCHECK_HPP
#define VOLPOSE_TESTS_SUPPORT_GRADCHECK_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "volpose/autodiff/graph.hpp"

namespace volpose::testing {

using autodiff::Graph64;
using autodiff::NodeId;
using autodiff::Shape;
using autodiff::Tensor64;

/// Values spaced far apart relative to the step so that max-pool and relu
/// never sit within a step of a kink.
inline Tensor64 kink_free_tensor(const Shape& shape, std::mt19937_64& rng) {
  Tensor64 t(shape);
  const auto n = static_cast<std::size_t>(t.numel());
  std::vector<double> v(n);
  for (std::size_t i = 0; i < n; ++i) {
    v[i] = (static_cast<double>(i) - 0.5 * static_cast<double>(n) + 0.25) * (2.0 / static_cast<double>(n + 1));
  }
  std::shuffle(v.begin(), v.end(), rng);
  std::copy(v.begin(), v.end(), t.data().begin());
  return t;
}

inline Tensor64 normal_tensor(const Shape& shape, std::mt19937_64& rng) {
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor64 t(shape);
  for (auto& x : t.data()) x = d(rng);
  return t;
}

struct GradcheckResult {
  double max_rel_error = 0.0;
  std::string worst;  // which tensor produced it
  int tensors_checked = 0;
};

/// Relative error between two gradient vectors: ||a - n|| / max(||a||, ||n||).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - n[i]) * (a[i] - n[i]);
    na += a[i] * a[i];
    nn += n[i] * n[i];
  }
  const double denom = std::max(std::sqrt(na), std::sqrt(nn));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

/// Compares analytic gradients of every input and parameter of `g` (loss set)
/// with central differences of step h.
inline GradcheckResult gradcheck(Graph64& g, Graph64::InputMap inputs, double h = 1e-4) {
  GradcheckResult r;
  g.forward(inputs, false);
  const auto grads = g.backward_plain();

  auto loss_at = [&](const Graph64::InputMap& in) { return g.forward(in, false); };

  auto record = [&](const std::string& what, const std::vector<double>& a,
                    const std::vector<double>& n) {
    const double e = relative_error(a, n);
    ++r.tensors_checked;
    if (e > r.max_rel_error || r.worst.empty()) {
      r.max_rel_error = std::max(r.max_rel_error, e);
      r.worst = what;
    }
  };

  for (auto& [name, t] : inputs) {
    const Tensor64* ga = g.input_gradient(name);
    if (ga == nullptr) continue;
    std::vector<double> a(ga->data().begin(), ga->data().end());
    std::vector<double> n(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double orig = t[i];
      t[i] = orig + h;
      const double up = loss_at(inputs);
      t[i] = orig - h;
      const double down = loss_at(inputs);
      t[i] = orig;
      n[i] = (up - down) / (2.0 * h);
    }
    record("input " + name, a, n);
  }
  for (auto& p : g.parameters()) {
    auto it = grads.find(p.id);
    if (it == grads.end()) continue;
    std::vector<double> a(it->second.data().begin(), it->second.data().end());
    std::vector<double> n(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = loss_at(inputs);
      p.value[i] = orig - h;
      const double down = loss_at(inputs);
      p.value[i] = orig;
      n[i] = (up - down) / (2.0 * h);
    }
    record("param " + p.id, a, n);
  }
  return r;
}

/// One primitive under test, wrapped so that its output feeds an l2 loss
/// against a random target (or is itself the loss).
struct PrimitiveCase {
  std::string name;
  std::function<GradcheckResult(std::mt19937_64&)> run;
};

inline Graph64::InputMap with_target(Graph64& g, NodeId out, Graph64::InputMap in,
                                     std::mt19937_64& rng) {
  const Shape s = g.node(out).shape;
  g.l2_loss(out, g.input("target", s));
  in["target"] = normal_tensor(s, rng);
  return in;
}

inline std::vector<PrimitiveCase> primitive_cases() {
  std::vector<PrimitiveCase> cases;
  cases.push_back({"conv3d", [](std::mt19937_64& rng) {
                     Graph64 g;
                     const Shape s{2, 3, 4, 5};
                     auto x = g.input("x", s);
                     auto c = g.conv3d(x, 2, 3, "c");
                     g.init_parameters(rng());
                     for (auto& p : g.parameters()) p.value = normal_tensor(p.value.shape(), rng);
                     auto in = with_target(g, c, {{"x", normal_tensor(s, rng)}}, rng);
                     return gradcheck(g, in);
                   }});
  cases.push_back({"deconv3d", [](std::mt19937_64& rng) {
                     Graph64 g;
                     const Shape s{2, 2, 3, 2};
                     auto x = g.input("x", s);
                     auto c = g.deconv3d(x, 2, "u");
                     g.init_parameters(rng());
                     for (auto& p : g.parameters()) p.value = normal_tensor(p.value.shape(), rng);
                     auto in = with_target(g, c, {{"x", normal_tensor(s, rng)}}, rng);
                     return gradcheck(g, in);
                   }});
  cases.push_back({"max_pool3d", [](std::mt19937_64& rng) {
                     Graph64 g;
                     const Shape s{2, 4, 5, 4};
                     auto x = g.input("x", s);
                     auto p = g.max_pool3d(x);
                     auto in = with_target(g, p, {{"x", kink_free_tensor(s, rng)}}, rng);
                     return gradcheck(g, in);
                   }});
  cases.push_back({"batch_norm", [](std::mt19937_64& rng) {
                     Graph64 g;
                     const Shape s{2, 3, 3, 4};
                     auto x = g.input("x", s);
                     auto b = g.batch_norm(x, "bn");
                     g.init_parameters(rng());
                     for (auto& p : g.parameters()) p.value = normal_tensor(p.value.shape(), rng);
                     auto in = with_target(g, b, {{"x", normal_tensor(s, rng)}}, rng);
                     return gradcheck(g, in);
                   }});
  cases.push_back({"relu", [](std::mt19937_64& rng) {
                     Graph64 g;
                     const Shape s{2, 3, 3, 3};
                     auto x = g.input("x", s);
                     auto y = g.relu(x);
                     auto in = with_target(g, y, {{"x", kink_free_tensor(s, rng)}}, rng);
                     return gradcheck(g, in);
                   }});
  cases.push_back({"concat", [](std::mt19937_64& rng) {
                     Graph64 g;
                     auto a = g.input("a", {2, 2, 3, 3});
                     auto b = g.input("b", {3, 2, 3, 3});
                     auto c = g.concat(a, b);
                     auto in = with_target(g, c,
                                           {{"a", normal_tensor({2, 2, 3, 3}, rng)},
                                            {"b", normal_tensor({3, 2, 3, 3}, rng)}},
                                           rng);
                     return gradcheck(g, in);
                   }});
  cases.push_back({"add", [](std::mt19937_64& rng) {
                     Graph64 g;
                     const Shape s{2, 3, 2, 3};
                     auto a = g.input("a", s);
                     auto b = g.input("b", s);
                     auto c = g.add(a, b);
                     auto in = with_target(
                         g, c, {{"a", normal_tensor(s, rng)}, {"b", normal_tensor(s, rng)}}, rng);
                     return gradcheck(g, in);
                   }});
  cases.push_back({"l2_loss", [](std::mt19937_64& rng) {
                     Graph64 g;
                     const Shape s{3, 3, 2, 4};
                     auto a = g.input("pred", s);
                     auto b = g.input("truth", s);
                     g.l2_loss(a, b);
                     return gradcheck(
                         g, {{"pred", normal_tensor(s, rng)}, {"truth", normal_tensor(s, rng)}});
                   }});
  return cases;
}

}  // namespace volpose::testing

#endif  // VOLPOSE_TESTS_SUPPORT_GRADCHECK_HPP
