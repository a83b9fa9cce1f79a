// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_AUTODIFF_OPTIMIZER_HPP
#define VOLPOSE_AUTODIFF_OPTIMIZER_HPP

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "volpose/autodiff/graph.hpp"

namespace volpose::autodiff {

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moments are kept in double and keyed by
/// parameter id; parameters without a gradient entry are left untouched.
template <typename T>
class BasicAdam {
 public:
  explicit BasicAdam(AdamConfig cfg);

  void step(std::vector<BasicParameter<T>>& params, const BasicGradientMap<T>& grads);
  std::int64_t steps() const { return t_; }
  const AdamConfig& config() const { return cfg_; }

 private:
  AdamConfig cfg_;
  std::int64_t t_ = 0;
  std::map<std::string, std::vector<double>> m_;
  std::map<std::string, std::vector<double>> v_;
};

using Adam = BasicAdam<float>;

extern template class BasicAdam<float>;
extern template class BasicAdam<double>;

}  // namespace volpose::autodiff

#endif  // VOLPOSE_AUTODIFF_OPTIMIZER_HPP
