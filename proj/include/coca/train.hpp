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

#include "coca/checkpoint.hpp"
#include "coca/data.hpp"
#include "coca/gradcheck.hpp"
#include "coca/model.hpp"
#include "coca/objectives.hpp"
#include "coca/optim.hpp"
#include "coca/text.hpp"

#include <functional>
#include <optional>

namespace coca {

struct CurvePoint {
  Index step = 0;  // 1-based update number
  double total = 0;
  double con = 0;
  double cap = 0;
  double lr = 0;
};

std::string curve_csv_header();
std::string curve_csv_line(const CurvePoint& p);
std::vector<CurvePoint> parse_curve_csv(const std::string& text);

// Parameter tensors by name.
std::vector<NamedTensor> model_tensors(const CoCaModel<float>& model);
// Exact name and shape match required.
void load_model_tensors(CoCaModel<float>& model, const std::vector<NamedTensor>& tensors);

// Order-sensitive CRC32 over the names and bytes of every tensor whose name
// starts with `prefix`.
std::uint32_t parameter_checksum(const ParameterStore<float>& store, const std::string& prefix = "");

std::vector<TokenSequence> tokenize_batch(const Vocab& vocab, const std::vector<std::string>& captions,
                                          const CoCaConfig& config);

struct TrainerHooks {
  // Poisons the batch of this 1-based step with a NaN pixel.
  std::optional<Index> inject_nan_at;
  std::function<void(const CurvePoint&)> on_step;
};

// Owns the model, optimizer and batch stream of one pretraining run.
class Trainer {
 public:
  Trainer(const CoCaConfig& config, const Vocab& vocab, const Dataset& annotated, const Dataset& alt_text,
          std::uint64_t seed);

  // Runs one update and returns its losses. Throws NumericError on a
  // non-finite loss or gradient; parameters are left at their last good values.
  CurvePoint step();
  // Runs until `until` updates have been made (config steps by default).
  std::vector<CurvePoint> run(std::optional<Index> until = std::nullopt);

  Index steps_done() const { return optimizer_.steps(); }
  CoCaModel<float>& model() { return model_; }
  const CoCaModel<float>& model() const { return model_; }
  AdamW<float>& optimizer() { return optimizer_; }
  const Schedule& schedule() const { return schedule_; }
  TrainerHooks& hooks() { return hooks_; }

  // Parameters, optimizer moments and step count.
  std::vector<NamedTensor> state() const;
  void restore(const std::vector<NamedTensor>& state);

 private:
  CoCaConfig config_;
  const Vocab* vocab_;
  CoCaModel<float> model_;
  AdamW<float> optimizer_;
  Schedule schedule_;
  BatchStream stream_;
  LossWeights weights_;
  TrainerHooks hooks_;
};

struct GroupCheck {
  std::string group;
  Index tensors = 0;
  Index entries = 0;
  double max_rel_error = 0;
  bool passed = true;
};

struct ModelGradCheck {
  std::vector<GroupCheck> groups;  // in first-appearance order
  GradCheckReport detail;
  bool passed = true;
};

// Finite-difference check of the full weighted loss in 64-bit on a seeded
// model with perturbed weights and a random batch of `batch` examples.
ModelGradCheck model_gradcheck(const CoCaConfig& config, std::uint64_t seed, const GradCheckOptions& options = {},
                               Index batch = 3);

// Validates that data and vocab fit the model config.
void check_data_compatibility(const CoCaConfig& config, const Vocab& vocab, const Dataset& data);

}  // namespace coca
