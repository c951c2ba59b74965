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
#include "coca/optim.hpp"

#include <cmath>

namespace coca {

double Schedule::lr_at(Index step) const {
  if (total_steps < 1) throw ConfigError("schedule needs at least one step");
  if (step < 0 || step > total_steps) {
    throw Error("lr_at: step " + std::to_string(step) + " outside [0, " + std::to_string(total_steps) + "]");
  }
  const double s = static_cast<double>(step);
  const double w = warmup_steps();
  const double total = static_cast<double>(total_steps);
  if (s < w) return peak_lr * s / w;
  if (total <= w) return peak_lr;
  return peak_lr * (total - s) / (total - w);
}

template <typename S>
AdamW<S>::AdamW(ParameterStore<S>& params, const AdamWOptions& options) : params_(&params), options_(options) {
  if (options.beta1 < 0 || options.beta1 >= 1 || options.beta2 < 0 || options.beta2 >= 1) {
    throw ConfigError("optimizer betas must be in [0, 1)");
  }
  if (options.eps <= 0 || options.weight_decay < 0) throw ConfigError("optimizer eps > 0 and weight_decay >= 0");
  for (const auto& e : params.entries()) {
    m_.push_back(Matrix<S>::Zero(e.tensor->rows(), e.tensor->cols()));
    v_.push_back(Matrix<S>::Zero(e.tensor->rows(), e.tensor->cols()));
  }
}

template <typename S>
void AdamW<S>::step(double lr) {
  auto& entries = params_->entries();
  if (entries.size() != m_.size()) throw Error("optimizer: parameter set changed after construction");
  for (const auto& e : entries) {
    const Tensor<S>& t = *e.tensor;
    if (!t.has_grad()) continue;
    if (!t.requires_grad() && t.grad().cwiseAbs().maxCoeff() != S(0)) {
      throw Error("optimizer: frozen parameter " + e.name + " received a gradient");
    }
    if (!t.grad().allFinite()) throw NumericError("optimizer: non-finite gradient in " + e.name);
  }
  ++steps_;
  const double b1 = options_.beta1, b2 = options_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(steps_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(steps_));
  const S step_size = static_cast<S>(lr / c1);
  const S decay = static_cast<S>(1.0 - lr * options_.weight_decay);
  const S inv_sqrt_c2 = static_cast<S>(1.0 / std::sqrt(c2));
  const S eps = static_cast<S>(options_.eps);
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Tensor<S>& t = *entries[i].tensor;
    if (!t.requires_grad()) continue;
    auto p = t.matrix().array();
    if (!t.has_grad()) {
      p *= decay;
      continue;
    }
    const auto g = t.grad().array();
    m_[i].array() = S(b1) * m_[i].array() + S(1 - b1) * g;
    v_[i].array() = S(b2) * v_[i].array() + S(1 - b2) * g.square();
    p *= decay;
    p -= step_size * m_[i].array() / (v_[i].array().sqrt() * inv_sqrt_c2 + eps);
  }
}

template class AdamW<float>;
template class AdamW<double>;

}  // namespace coca
