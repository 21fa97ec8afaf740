// Copyright 2026 The xmodlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef XMODLAB_TENSOR_HPP_
#define XMODLAB_TENSOR_HPP_

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <utility>
#include <vector>

#include "xmodlab/error.hpp"

namespace xmodlab {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

// Dense row-major array. The gradient buffer is optional and, when present,
// always has numel() elements.
template <typename T>
class BasicTensor {
 public:
  using value_type = T;

  BasicTensor() : shape_{1}, data_(1, T(0)) {}

  explicit BasicTensor(Shape shape, T fill = T(0))
      : shape_(std::move(shape)) {
    check_shape();
    data_.assign(shape_numel(shape_), fill);
  }

  BasicTensor(Shape shape, std::vector<T> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    check_shape();
    if (data_.size() != shape_numel(shape_)) {
      throw DimensionError("tensor data has " + std::to_string(data_.size()) +
                           " elements but shape " + shape_string(shape_) +
                           " needs " + std::to_string(shape_numel(shape_)));
    }
  }

  static BasicTensor scalar(T v) { return BasicTensor(Shape{1}, {v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t numel() const { return data_.size(); }

  // Product of all but the last dimension; the last dimension.
  std::size_t rows() const { return numel() / cols(); }
  std::size_t cols() const { return shape_.back(); }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }
  std::vector<T>& storage() { return data_; }
  const std::vector<T>& storage() const { return data_; }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  const T& at(std::size_t r, std::size_t c) const {
    return data_[r * cols() + c];
  }

  bool has_grad() const { return !grad_.empty(); }
  std::span<T> grad() { return grad_; }
  std::span<const T> grad() const { return grad_; }
  std::vector<T>& grad_storage() { return grad_; }
  void ensure_grad() {
    if (grad_.size() != data_.size()) grad_.assign(data_.size(), T(0));
  }
  void zero_grad() {
    if (!grad_.empty()) std::fill(grad_.begin(), grad_.end(), T(0));
  }
  void drop_grad() { grad_.clear(); grad_.shrink_to_fit(); }

  bool all_finite() const {
    for (T v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  void reshape(Shape shape) {
    if (shape_numel(shape) != numel()) {
      throw DimensionError("cannot reshape " + shape_string(shape_) + " to " +
                           shape_string(shape));
    }
    shape_ = std::move(shape);
    check_shape();
  }

  template <typename U>
  BasicTensor<U> cast() const {
    std::vector<U> out(data_.begin(), data_.end());
    return BasicTensor<U>(shape_, std::move(out));
  }

  friend bool operator==(const BasicTensor& a, const BasicTensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  void check_shape() const {
    if (shape_.empty()) throw DimensionError("tensor shape must be non-empty");
    for (std::size_t d : shape_) {
      if (d == 0) {
        throw DimensionError("tensor dimensions must be positive, got " +
                             shape_string(shape_));
      }
    }
  }

  Shape shape_;
  std::vector<T> data_;
  std::vector<T> grad_;
};

using Tensor = BasicTensor<float>;
using Tensor64 = BasicTensor<double>;

}  // namespace xmodlab

#endif  // XMODLAB_TENSOR_HPP_
