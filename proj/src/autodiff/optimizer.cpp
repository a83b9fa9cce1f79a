// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#include "volpose/autodiff/optimizer.hpp"

#include <cmath>
#include <stdexcept>

namespace volpose::autodiff {

template <typename T>
BasicAdam<T>::BasicAdam(AdamConfig cfg) : cfg_(cfg) {
  if (!(cfg_.lr > 0.0)) throw std::invalid_argument("Adam learning rate must be positive");
  if (cfg_.beta1 < 0.0 || cfg_.beta1 >= 1.0 || cfg_.beta2 < 0.0 || cfg_.beta2 >= 1.0) {
    throw std::invalid_argument("Adam betas must lie in [0, 1)");
  }
}

template <typename T>
void BasicAdam<T>::step(std::vector<BasicParameter<T>>& params, const BasicGradientMap<T>& grads) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    auto git = grads.find(p.id);
    if (git == grads.end()) continue;
    const auto g = git->second.data();
    auto w = p.value.data();
    if (g.size() != w.size()) {
      throw std::invalid_argument("gradient for '" + p.id + "' has the wrong size");
    }
    auto& m = m_[p.id];
    auto& v = v_[p.id];
    if (m.empty()) {
      m.assign(w.size(), 0.0);
      v.assign(w.size(), 0.0);
    }
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = static_cast<double>(g[i]);
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * gi;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * gi * gi;
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] = static_cast<T>(static_cast<double>(w[i]) - cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps));
    }
  }
}

template class BasicAdam<float>;
template class BasicAdam<double>;

}  // namespace volpose::autodiff
