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

#include "coca/tape.hpp"

#include <functional>
#include <string>

namespace coca {

struct NamedParam {
  std::string name;
  Tensor<double>* tensor = nullptr;
};

struct GradCheckOptions {
  double step = 1e-4;       // central-difference half width
  double tolerance = 1e-3;  // max allowed relative error
  // Denominator floor for the relative error so entries whose true gradient
  // is ~0 are judged on absolute error instead.
  double abs_floor = 1e-6;
  Index max_entries_per_param = 0;  // 0 checks every entry
};

struct ParamCheck {
  std::string name;
  Index checked = 0;
  double max_rel_error = 0;
  double max_abs_error = 0;
  bool passed = true;
};

struct GradCheckReport {
  std::vector<ParamCheck> params;
  double max_rel_error = 0;
  bool passed = true;
};

// `loss` builds a scalar on the given tape from the current parameter values.
// It must be deterministic.
using LossBuilder = std::function<Var<double>(Tape<double>&)>;

// Compares tape gradients against central finite differences for every entry
// of every parameter.
GradCheckReport finite_diff_check(const LossBuilder& loss, const std::vector<NamedParam>& params,
                                  const GradCheckOptions& options = {});

}  // namespace coca
