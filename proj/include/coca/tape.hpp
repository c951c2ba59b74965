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

#include "coca/tensor.hpp"

#include <functional>
#include <unordered_map>

namespace coca {

template <typename Scalar>
class Tape;

// Handle to a value recorded on a tape.
template <typename Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  bool valid() const { return tape != nullptr && id >= 0; }
  const Tensor<Scalar>& value() const { return tape->value(id); }
  const Matrix<Scalar>& matrix() const { return value().matrix(); }
  const Shape& shape() const { return value().shape(); }
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  Scalar item() const { return value().item(); }
};

// Reverse-mode tape. Nodes are appended in execution order, so inputs always
// precede their consumers and a single reverse sweep visits each node once.
template <typename Scalar>
class Tape {
 public:
  // Receives the tape and the gradient flowing into the node's output.
  using Backward = std::function<void(Tape&, const Matrix<Scalar>&)>;

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Scalar> constant(Tensor<Scalar> value);
  // References a parameter; if it requires grad, backward() accumulates into
  // param.grad(). Repeated calls for one parameter return the same node.
  Var<Scalar> param(Tensor<Scalar>& parameter);
  Var<Scalar> record(const char* op, Tensor<Scalar> value, std::initializer_list<int> inputs,
                     Backward backward);

  const Tensor<Scalar>& value(int id) const;
  bool needs_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  // Adds `delta` into the gradient slot of node `id` (allocated on first use).
  template <typename Derived>
  void accumulate(int id, const Eigen::MatrixBase<Derived>& delta) {
    auto& node = nodes_[static_cast<std::size_t>(id)];
    if (!node.needs_grad) return;
    if (node.grad.size() == 0) {
      node.grad = delta;
    } else {
      node.grad += delta;
    }
  }
  const Matrix<Scalar>* grad_of(int id) const;

  void backward(Var<Scalar> loss);
  void reset();

  bool grad_enabled() const { return grad_enabled_; }
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  std::size_t size() const { return nodes_.size(); }
  bool backward_done() const { return backward_done_; }

 private:
  struct Node {
    Tensor<Scalar> owned;
    Tensor<Scalar>* external = nullptr;
    Matrix<Scalar> grad;
    Backward backward;
    bool needs_grad = false;
  };

  std::vector<Node> nodes_;
  std::unordered_map<const Tensor<Scalar>*, int> param_ids_;
  bool grad_enabled_ = true;
  bool backward_done_ = false;
};

// Negative-control hook: when set, the matmul backward rule for its right-hand
// operand is deliberately wrong so gradient checks can be shown to fail.
void set_corrupt_backward(bool on);
bool corrupt_backward();

extern template class Tape<float>;
extern template class Tape<double>;

}  // namespace coca
