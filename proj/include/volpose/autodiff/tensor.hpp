// Copyright 2026 The volpose Authors.
// SPDX-License-Identifier: Apache-2.0

#ifndef VOLPOSE_AUTODIFF_TENSOR_HPP
#define VOLPOSE_AUTODIFF_TENSOR_HPP

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

namespace volpose::autodiff {

using Shape = std::vector<std::int64_t>;

enum class DType { f32, f64 };

std::string shape_to_string(const Shape& shape);
std::int64_t shape_numel(const Shape& shape);

/// Dense row-major tensor. The last extent varies fastest, so a [C, D, H, W]
/// activation stores x contiguously.
template <typename T>
class BasicTensor {
  static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);

 public:
  using value_type = T;

  BasicTensor() = default;
  explicit BasicTensor(Shape shape, T fill = T{0});
  BasicTensor(Shape shape, std::vector<T> data);

  static constexpr DType dtype() {
    return std::is_same_v<T, float> ? DType::f32 : DType::f64;
  }

  const Shape& shape() const { return shape_; }
  std::int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  std::int64_t numel() const { return static_cast<std::int64_t>(data_.size()); }
  std::size_t bytes() const { return data_.size() * sizeof(T); }
  bool empty() const { return data_.empty(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  T* raw() { return data_.data(); }
  const T* raw() const { return data_.data(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  void fill(T v);
  bool all_finite() const;

  /// Exact element-wise equality, including shape. NaNs compare unequal.
  bool bitwise_equal(const BasicTensor& other) const;

 private:
  Shape shape_;
  std::vector<T> data_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

extern template class BasicTensor<float>;
extern template class BasicTensor<double>;

}  // namespace volpose::autodiff

#endif  // VOLPOSE_AUTODIFF_TENSOR_HPP
