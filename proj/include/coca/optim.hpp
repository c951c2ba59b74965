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

#include "coca/nn.hpp"

namespace coca {

// Linear warmup to peak_lr at warmup_fraction * total_steps, then linear decay
// to zero at total_steps.
struct Schedule {
  double peak_lr = 3e-4;
  double warmup_fraction = 0.02;
  Index total_steps = 2000;

  double warmup_steps() const { return warmup_fraction * static_cast<double>(total_steps); }
  double lr_at(Index step) const;
};

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

// Full-moment adaptive optimizer with decoupled weight decay. Parameters whose
// requires_grad flag is off are never touched.
template <typename S>
class AdamW {
 public:
  AdamW(ParameterStore<S>& params, const AdamWOptions& options);

  // Applies one update from the accumulated grads. Throws NumericError before
  // touching any parameter if a gradient is non-finite, and Error if a frozen
  // parameter carries a nonzero gradient.
  void step(double lr);

  Index steps() const { return steps_; }
  void set_steps(Index s) { steps_ = s; }
  const AdamWOptions& options() const { return options_; }

  // Moments indexed like params.entries().
  std::vector<Matrix<S>>& first_moments() { return m_; }
  std::vector<Matrix<S>>& second_moments() { return v_; }
  const std::vector<Matrix<S>>& first_moments() const { return m_; }
  const std::vector<Matrix<S>>& second_moments() const { return v_; }

 private:
  ParameterStore<S>* params_;
  AdamWOptions options_;
  std::vector<Matrix<S>> m_, v_;
  Index steps_ = 0;
};

extern template class AdamW<float>;
extern template class AdamW<double>;

}  // namespace coca
