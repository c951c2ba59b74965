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
#include <string>
#include <utility>
#include <vector>

namespace coca {

enum class PoolerVariant { kParallel, kCascade };
// How the contrastive text embedding is read off the unimodal decoder: the
// [CLS] outputs alone, or averaged together with the real token outputs.
enum class ClsAggregate { kClsOnly, kClsAndText };

struct ImageConfig {
  Index resolution = 16;
  Index patch_size = 4;
  Index channels = 3;
  Index enc_layers = 2;
  Index d_model = 64;
  Index n_heads = 4;
  Index mlp_dim = 256;

  Index patches_per_side() const { return resolution / patch_size; }
  Index num_tokens() const { return patches_per_side() * patches_per_side(); }
  Index patch_dim() const { return patch_size * patch_size * channels; }
};

struct TextConfig {
  Index vocab_size = 64;
  Index max_len = 16;  // positions available, including the [CLS] slot(s)
  Index n_uni = 1;
  Index n_multi = 1;
  Index d_model = 64;
  Index n_heads = 4;
  Index mlp_dim = 256;
  Index n_cls = 1;
  ClsAggregate cls_aggregate = ClsAggregate::kClsOnly;

  // Longest token sequence ([BOS] ... [EOS]) that still leaves room for [CLS].
  Index caption_budget() const { return max_len - n_cls; }
};

struct PoolerConfig {
  Index n_query_gen = 8;  // 0: the decoder cross-attends to all encoder tokens
  Index n_query_con = 1;
  PoolerVariant variant = PoolerVariant::kCascade;
};

struct LossConfig {
  double lambda_con = 1.0;
  double lambda_cap = 2.0;
  double temperature_init = 0.07;
};

struct TrainConfig {
  Index batch_size = 32;
  Index steps = 2000;
  double peak_lr = 3e-4;
  double warmup_fraction = 0.02;
  double weight_decay = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  Index checkpoint_every = 0;  // 0 disables periodic checkpoints
  Index log_every = 50;
};

struct CoCaConfig {
  std::string preset = "coca-tiny";
  ImageConfig image;
  TextConfig text;
  PoolerConfig poolers;
  LossConfig losses;
  TrainConfig train;
  Index embed_dim = 64;  // shared contrastive embedding width

  // Throws ConfigError on the first violated invariant.
  void validate() const;
};

using KeyValue = std::pair<std::string, std::string>;

// Names accepted by preset().
std::vector<std::string> preset_names();
CoCaConfig preset(const std::string& name);

// Sets one dotted key. Unknown keys and unparsable values are ConfigErrors.
void set_config_value(CoCaConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const CoCaConfig& config, const std::string& key);
std::vector<std::string> config_keys();

// Canonical `key = value` listing of every field, one per line.
std::string config_to_text(const CoCaConfig& config);
// Parses `key = value` lines; blank lines and '#' comments are skipped.
std::vector<KeyValue> parse_key_values(const std::string& text);
std::vector<KeyValue> read_key_value_file(const std::string& path);

// Preset defaults, then file entries, then flag entries. A `preset` entry in
// the file selects the base unless the flag layer names one.
CoCaConfig resolve_config(const std::vector<KeyValue>& file_entries,
                          const std::vector<KeyValue>& flag_entries);

// FNV-1a 64 over the canonical text, as 16 hex digits.
std::string config_hash(const CoCaConfig& config);
std::uint64_t fnv1a64(const std::string& bytes);

std::string to_string(PoolerVariant v);
std::string to_string(ClsAggregate a);

}  // namespace coca
