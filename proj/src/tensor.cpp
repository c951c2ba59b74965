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
#include "coca/tensor.hpp"

#include <sstream>

namespace coca {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Index shape_numel(const Shape& shape) {
  Index n = 1;
  for (Index e : shape) n *= e;
  return n;
}

std::pair<Index, Index> matrix_extents(const Shape& shape) {
  if (shape.empty()) return {1, 1};
  for (Index e : shape) {
    if (e <= 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
  }
  Index cols = shape.back();
  return {shape_numel(shape) / cols, cols};
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape) : shape_(std::move(shape)) {
  auto [r, c] = matrix_extents(shape_);
  data_ = Matrix<Scalar>::Zero(r, c);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, std::span<const Scalar> values) : shape_(std::move(shape)) {
  auto [r, c] = matrix_extents(shape_);
  if (static_cast<Index>(values.size()) != r * c) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape_));
  }
  data_ = Eigen::Map<const Matrix<Scalar>>(values.data(), r, c);
}

template <typename Scalar>
Tensor<Scalar>::Tensor(Shape shape, Matrix<Scalar> values) : shape_(std::move(shape)) {
  auto [r, c] = matrix_extents(shape_);
  if (values.size() != r * c) {
    throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                     shape_str(shape_));
  }
  data_ = std::move(values);
  if (data_.rows() != r) data_ = Eigen::Map<Matrix<Scalar>>(data_.data(), r, c).eval();
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::scalar(Scalar value) {
  Tensor t(Shape{1});
  t.data_(0, 0) = value;
  return t;
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::from_matrix(const Matrix<Scalar>& m) {
  return Tensor(Shape{m.rows(), m.cols()}, Matrix<Scalar>(m));
}

template <typename Scalar>
Index Tensor<Scalar>::dim(Index axis) const {
  if (axis < 0) axis += rank();
  if (axis < 0 || axis >= rank()) throw ShapeError("axis out of range for " + shape_str(shape_));
  return shape_[static_cast<std::size_t>(axis)];
}

template <typename Scalar>
Scalar Tensor<Scalar>::item() const {
  if (size() != 1) throw ShapeError("item() on non-scalar tensor " + shape_str(shape_));
  return data_(0, 0);
}

template <typename Scalar>
Tensor<Scalar> Tensor<Scalar>::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

template <typename Scalar>
void Tensor<Scalar>::reshape(Shape shape) {
  auto [r, c] = matrix_extents(shape);
  if (r * c != size()) {
    throw ShapeError("cannot reshape " + shape_str(shape_) + " to " + shape_str(shape));
  }
  if (r != data_.rows()) {
    data_ = Eigen::Map<Matrix<Scalar>>(data_.data(), r, c).eval();
    if (grad_) *grad_ = Eigen::Map<Matrix<Scalar>>(grad_->data(), r, c).eval();
  }
  shape_ = std::move(shape);
}

template <typename Scalar>
Matrix<Scalar>& Tensor<Scalar>::grad() {
  if (!grad_) grad_ = Matrix<Scalar>::Zero(data_.rows(), data_.cols());
  return *grad_;
}

template <typename Scalar>
const Matrix<Scalar>& Tensor<Scalar>::grad() const {
  if (!grad_) throw Error("tensor has no gradient");
  return *grad_;
}

template <typename Scalar>
void Tensor<Scalar>::zero_grad() {
  grad_ = Matrix<Scalar>::Zero(data_.rows(), data_.cols());
}

template class Tensor<float>;
template class Tensor<double>;

}  // namespace coca
