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

#include "coca/eval.hpp"

#include <functional>

namespace coca {

struct AblationVariant {
  std::string label;
  CoCaConfig config;
};

// loss_ratio, n_uni_split, pooler_variant, n_query, cls_design.
std::vector<std::string> ablation_axes();

// Variants of `base` along one axis. ConfigError for an unknown axis.
//   loss_ratio      lambda_cap:lambda_con in {1:1, 1:2, 2:1}
//   n_uni_split     unimodal share of the decoder depth in {1/4, 1/2, 3/4}
//   pooler_variant  parallel, cascade
//   n_query         generative queries in {0, 1, 32, base}
//   cls_design      {1, 8} [CLS] slots, with and without text averaging
std::vector<AblationVariant> ablation_grid(const CoCaConfig& base, const std::string& axis);

struct AblationRow {
  std::string axis;
  std::string variant;
  std::string config_hash;
  std::uint64_t seed = 0;
  Index steps = 0;
  double final_total = 0;
  double zero_shot = 0;
  double r1_image_to_text = 0;
  double r1_text_to_image = 0;
  double wall_seconds = 0;
};

// `#key=value` provenance lines, a header row, then one TSV row per variant.
struct AblationTable {
  std::vector<KeyValue> provenance;
  std::vector<AblationRow> rows;
};

std::string ablation_table_header();
std::string format_ablation_table(const AblationTable& table);
AblationTable parse_ablation_table(const std::string& text);
void save_ablation_table(const std::string& path, const AblationTable& table);
AblationTable load_ablation_table(const std::string& path);

struct AblationOptions {
  std::optional<Index> steps;  // overrides train.steps of every variant
  std::uint64_t seed = 0;
  std::function<void(const AblationRow&)> on_row;
};

// Trains every variant with the same data and seed, then evaluates it on the
// corpus test split.
AblationTable run_ablation(const CoCaConfig& base, const std::string& axis, const SyntheticCorpus& corpus,
                           const Vocab& vocab, const AblationOptions& options = {});

}  // namespace coca
