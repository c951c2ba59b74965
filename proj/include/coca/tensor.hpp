/*
 * Copyright 2026 The coca-desk Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *    http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */
#pragma once

#include "coca/common.hpp"

#include <optional>
#include <span>

namespace coca {

// Dense row-major tensor. Storage is a (rows x cols) matrix where cols is the
// trailing extent and rows the product of the leading ones, so every tensor
// is also a matrix view without copying.
template <typename Scalar>
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::span<const Scalar> values);
  Tensor(Shape shape, Matrix<Scalar> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor scalar(Scalar value);
  static Tensor from_matrix(const Matrix<Scalar>& m);

  const Shape& shape() const { return shape_; }
  Index rank() const { return static_cast<Index>(shape_.size()); }
  Index dim(Index axis) const;
  Index size() const { return data_.size(); }
  Index rows() const { return data_.rows(); }
  Index cols() const { return data_.cols(); }

  Matrix<Scalar>& matrix() { return data_; }
  const Matrix<Scalar>& matrix() const { return data_; }
  std::span<Scalar> values() { return {data_.data(), static_cast<std::size_t>(data_.size())}; }
  std::span<const Scalar> values() const {
    return {data_.data(), static_cast<std::size_t>(data_.size())};
  }
  Scalar item() const;

  // Same data, new shape; numel must match.
  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  template <typename Other>
  Tensor<Other> cast() const {
    return Tensor<Other>(shape_, data_.template cast<Other>().eval());
  }

  bool requires_grad() const { return requires_grad_; }
  void set_requires_grad(bool on) { requires_grad_ = on; }

  bool has_grad() const { return grad_.has_value(); }
  Matrix<Scalar>& grad();
  const Matrix<Scalar>& grad() const;
  void zero_grad();
  void clear_grad() { grad_.reset(); }

  bool all_finite() const { return data_.allFinite(); }

 private:
  Shape shape_;
  Matrix<Scalar> data_;
  bool requires_grad_ = false;
  std::optional<Matrix<Scalar>> grad_;
};

// (rows, cols) a shape folds into.
std::pair<Index, Index> matrix_extents(const Shape& shape);

extern template class Tensor<float>;
extern template class Tensor<double>;

}  // namespace coca
