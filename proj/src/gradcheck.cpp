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
#include "coca/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace coca {

namespace {

double evaluate(const LossBuilder& loss) {
  Tape<double> tape;
  tape.set_grad_enabled(false);
  return loss(tape).item();
}

}  // namespace

GradCheckReport finite_diff_check(const LossBuilder& loss, const std::vector<NamedParam>& params,
                                  const GradCheckOptions& options) {
  for (const auto& p : params) {
    p.tensor->set_requires_grad(true);
    p.tensor->zero_grad();
  }
  {
    Tape<double> tape;
    tape.backward(loss(tape));
  }

  GradCheckReport report;
  for (const auto& p : params) {
    ParamCheck check;
    check.name = p.name;
    Matrix<double> analytic = p.tensor->grad();
    auto values = p.tensor->values();
    Index n = static_cast<Index>(values.size());
    Index stride = 1;
    if (options.max_entries_per_param > 0 && n > options.max_entries_per_param) {
      stride = (n + options.max_entries_per_param - 1) / options.max_entries_per_param;
    }
    for (Index i = 0; i < n; i += stride) {
      double original = values[static_cast<std::size_t>(i)];
      values[static_cast<std::size_t>(i)] = original + options.step;
      double up = evaluate(loss);
      values[static_cast<std::size_t>(i)] = original - options.step;
      double down = evaluate(loss);
      values[static_cast<std::size_t>(i)] = original;

      double numeric = (up - down) / (2 * options.step);
      double a = analytic.data()[i];
      double abs_err = std::abs(a - numeric);
      double denom = std::max({std::abs(a), std::abs(numeric), options.abs_floor});
      check.max_abs_error = std::max(check.max_abs_error, abs_err);
      check.max_rel_error = std::max(check.max_rel_error, abs_err / denom);
      ++check.checked;
    }
    check.passed = check.max_rel_error <= options.tolerance;
    report.max_rel_error = std::max(report.max_rel_error, check.max_rel_error);
    report.passed = report.passed && check.passed;
    report.params.push_back(std::move(check));
  }
  return report;
}

}  // namespace coca
