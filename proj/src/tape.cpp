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
#include "coca/tape.hpp"

#include <atomic>

namespace coca {

namespace {
std::atomic<bool> g_corrupt_backward{false};
}

void set_corrupt_backward(bool on) { g_corrupt_backward = on; }
bool corrupt_backward() { return g_corrupt_backward; }

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(Tensor<Scalar> value) {
  if (!value.all_finite()) throw NumericError("non-finite constant recorded on tape");
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::param(Tensor<Scalar>& parameter) {
  if (auto it = param_ids_.find(&parameter); it != param_ids_.end()) return {this, it->second};
  Node node;
  node.external = &parameter;
  node.needs_grad = grad_enabled_ && parameter.requires_grad();
  nodes_.push_back(std::move(node));
  int id = static_cast<int>(nodes_.size() - 1);
  param_ids_.emplace(&parameter, id);
  return {this, id};
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(const char* op, Tensor<Scalar> value,
                                 std::initializer_list<int> inputs, Backward backward) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
  Node node;
  node.owned = std::move(value);
  if (grad_enabled_) {
    for (int in : inputs) {
      if (nodes_[static_cast<std::size_t>(in)].needs_grad) {
        node.needs_grad = true;
        break;
      }
    }
  }
  if (node.needs_grad) node.backward = std::move(backward);
  nodes_.push_back(std::move(node));
  return {this, static_cast<int>(nodes_.size() - 1)};
}

template <typename Scalar>
const Tensor<Scalar>& Tape<Scalar>::value(int id) const {
  const Node& node = nodes_.at(static_cast<std::size_t>(id));
  return node.external ? *node.external : node.owned;
}

template <typename Scalar>
const Matrix<Scalar>* Tape<Scalar>::grad_of(int id) const {
  const Node& node = nodes_.at(static_cast<std::size_t>(id));
  return node.grad.size() ? &node.grad : nullptr;
}

template <typename Scalar>
void Tape<Scalar>::backward(Var<Scalar> loss) {
  if (loss.tape != this) throw Error("loss does not belong to this tape");
  if (backward_done_) throw Error("backward() called twice without reset()");
  if (loss.value().size() != 1) {
    throw ShapeError("backward() needs a scalar loss, got " + shape_str(loss.shape()));
  }
  backward_done_ = true;
  auto& root = nodes_[static_cast<std::size_t>(loss.id)];
  if (!root.needs_grad) return;
  root.grad = Matrix<Scalar>::Ones(1, 1);
  for (int i = loss.id; i >= 0; --i) {
    Node& node = nodes_[static_cast<std::size_t>(i)];
    if (node.grad.size() == 0) continue;
    if (node.backward) {
      node.backward(*this, node.grad);
    } else if (node.external) {
      Tensor<Scalar>& p = *node.external;
      if (p.has_grad()) {
        p.grad() += node.grad;
      } else {
        p.grad() = node.grad;
      }
    }
  }
}

template <typename Scalar>
void Tape<Scalar>::reset() {
  nodes_.clear();
  param_ids_.clear();
  backward_done_ = false;
}

template class Tape<float>;
template class Tape<double>;

}  // namespace coca
