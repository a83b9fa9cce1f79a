// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0
//
// CPU kernels for the autodiff primitives. Activations are [C, D, H, W].
// Every reduction walks its operands in a fixed order so that recomputing a
// value reproduces it bit for bit.

#ifndef VOLPOSE_SRC_AUTODIFF_KERNELS_HPP
#define VOLPOSE_SRC_AUTODIFF_KERNELS_HPP

#include "volpose/autodiff/tensor.hpp"

namespace volpose::autodiff::kernels {

// "same" padding, stride 1, odd cubic kernel. w: [Co, Ci, K, K, K], b: [Co].
template <typename T>
void conv3d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                    BasicTensor<T>& y);
template <typename T>
void conv3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy,
                     BasicTensor<T>& gx, BasicTensor<T>& gw, BasicTensor<T>& gb);

// Transposed convolution, kernel 2, stride 2. w: [Ci, Co, 2, 2, 2], b: [Co].
template <typename T>
void deconv3d_forward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& b,
                      BasicTensor<T>& y);
template <typename T>
void deconv3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& w, const BasicTensor<T>& gy,
                       BasicTensor<T>& gx, BasicTensor<T>& gw, BasicTensor<T>& gb);

// 2x2x2 window, stride 2, odd extents floor-divide. Ties go to the lowest
// linear index inside the window.
template <typename T>
void max_pool3d_forward(const BasicTensor<T>& x, BasicTensor<T>& y);
template <typename T>
void max_pool3d_backward(const BasicTensor<T>& x, const BasicTensor<T>& gy, BasicTensor<T>& gx);

// Per-channel statistics over the spatial extent (batch size 1).
inline constexpr double kBatchNormEps = 1e-5;
template <typename T>
void batch_norm_forward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                        const BasicTensor<T>& beta, BasicTensor<T>& y);
template <typename T>
void batch_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gamma,
                         const BasicTensor<T>& gy, BasicTensor<T>& gx, BasicTensor<T>& ggamma,
                         BasicTensor<T>& gbeta);

template <typename T>
void relu_forward(const BasicTensor<T>& x, BasicTensor<T>& y);
// Uses the forward output: the mask y > 0 equals x > 0 and gives grad 0 at x = 0.
template <typename T>
void relu_backward(const BasicTensor<T>& y, const BasicTensor<T>& gy, BasicTensor<T>& gx);

template <typename T>
void concat_forward(const BasicTensor<T>& a, const BasicTensor<T>& b, BasicTensor<T>& y);
template <typename T>
void concat_backward(const BasicTensor<T>& gy, BasicTensor<T>& ga, BasicTensor<T>& gb);

template <typename T>
void add_forward(const BasicTensor<T>& a, const BasicTensor<T>& b, BasicTensor<T>& y);

// Mean squared error over all elements.
template <typename T>
T l2_loss_forward(const BasicTensor<T>& pred, const BasicTensor<T>& target);
template <typename T>
void l2_loss_backward(const BasicTensor<T>& pred, const BasicTensor<T>& target, T gy,
                      BasicTensor<T>& gpred, BasicTensor<T>& gtarget);

template <typename T>
T sum_forward(const BasicTensor<T>& x);

}  // namespace volpose::autodiff::kernels

#endif  // VOLPOSE_SRC_AUTODIFF_KERNELS_HPP
