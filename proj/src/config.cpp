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
#include "coca/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>

namespace coca {

namespace {

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

Index parse_index(const std::string& key, const std::string& value) {
  Index out = 0;
  auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), out);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError("config key " + key + ": expected an integer, got '" + value + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    double out = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return out;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected a number, got '" + value + "'");
  }
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

struct Field {
  const char* key;
  std::function<std::string(const CoCaConfig&)> get;
  std::function<void(CoCaConfig&, const std::string&)> set;
};

#define INDEX_FIELD(KEY, MEMBER)                                                       \
  Field {                                                                              \
    KEY, [](const CoCaConfig& c) { return std::to_string(c.MEMBER); },                 \
        [](CoCaConfig& c, const std::string& v) { c.MEMBER = parse_index(KEY, v); }    \
  }
#define DOUBLE_FIELD(KEY, MEMBER)                                                      \
  Field {                                                                              \
    KEY, [](const CoCaConfig& c) { return format_double(c.MEMBER); },                  \
        [](CoCaConfig& c, const std::string& v) { c.MEMBER = parse_double(KEY, v); }   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      Field{"preset", [](const CoCaConfig& c) { return c.preset; },
            [](CoCaConfig& c, const std::string& v) { c.preset = v; }},
      INDEX_FIELD("image.resolution", image.resolution),
      INDEX_FIELD("image.patch_size", image.patch_size),
      INDEX_FIELD("image.channels", image.channels),
      INDEX_FIELD("image.enc_layers", image.enc_layers),
      INDEX_FIELD("image.d_model", image.d_model),
      INDEX_FIELD("image.n_heads", image.n_heads),
      INDEX_FIELD("image.mlp_dim", image.mlp_dim),
      INDEX_FIELD("text.vocab_size", text.vocab_size),
      INDEX_FIELD("text.max_len", text.max_len),
      INDEX_FIELD("text.n_uni", text.n_uni),
      INDEX_FIELD("text.n_multi", text.n_multi),
      INDEX_FIELD("text.d_model", text.d_model),
      INDEX_FIELD("text.n_heads", text.n_heads),
      INDEX_FIELD("text.mlp_dim", text.mlp_dim),
      INDEX_FIELD("text.n_cls", text.n_cls),
      Field{"text.cls_aggregate", [](const CoCaConfig& c) { return to_string(c.text.cls_aggregate); },
            [](CoCaConfig& c, const std::string& v) {
              if (v == "cls") {
                c.text.cls_aggregate = ClsAggregate::kClsOnly;
              } else if (v == "cls+text") {
                c.text.cls_aggregate = ClsAggregate::kClsAndText;
              } else {
                throw ConfigError("text.cls_aggregate must be 'cls' or 'cls+text', got '" + v + "'");
              }
            }},
      INDEX_FIELD("poolers.n_query_gen", poolers.n_query_gen),
      INDEX_FIELD("poolers.n_query_con", poolers.n_query_con),
      Field{"poolers.variant", [](const CoCaConfig& c) { return to_string(c.poolers.variant); },
            [](CoCaConfig& c, const std::string& v) {
              if (v == "parallel") {
                c.poolers.variant = PoolerVariant::kParallel;
              } else if (v == "cascade") {
                c.poolers.variant = PoolerVariant::kCascade;
              } else {
                throw ConfigError("poolers.variant must be 'parallel' or 'cascade', got '" + v + "'");
              }
            }},
      DOUBLE_FIELD("losses.lambda_con", losses.lambda_con),
      DOUBLE_FIELD("losses.lambda_cap", losses.lambda_cap),
      DOUBLE_FIELD("losses.temperature_init", losses.temperature_init),
      INDEX_FIELD("embed_dim", embed_dim),
      INDEX_FIELD("train.batch_size", train.batch_size),
      INDEX_FIELD("train.steps", train.steps),
      DOUBLE_FIELD("train.peak_lr", train.peak_lr),
      DOUBLE_FIELD("train.warmup_fraction", train.warmup_fraction),
      DOUBLE_FIELD("train.weight_decay", train.weight_decay),
      DOUBLE_FIELD("train.beta1", train.beta1),
      DOUBLE_FIELD("train.beta2", train.beta2),
      DOUBLE_FIELD("train.adam_eps", train.adam_eps),
      INDEX_FIELD("train.checkpoint_every", train.checkpoint_every),
      INDEX_FIELD("train.log_every", train.log_every),
  };
  return table;
}

#undef INDEX_FIELD
#undef DOUBLE_FIELD

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (key == f.key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

void require(bool ok, const std::string& what) {
  if (!ok) throw ConfigError("invalid config: " + what);
}

CoCaConfig scaled_preset(const std::string& name, Index enc_layers, Index d, Index heads,
                         Index enc_mlp, Index n_uni, Index dec_mlp) {
  CoCaConfig c;
  c.preset = name;
  c.image = {288, 18, 3, enc_layers, d, heads, enc_mlp};
  c.text.vocab_size = 64000;
  c.text.max_len = 64;
  c.text.n_uni = n_uni;
  c.text.n_multi = n_uni;
  c.text.d_model = d;
  c.text.n_heads = heads;
  c.text.mlp_dim = dec_mlp;
  c.poolers = {256, 1, PoolerVariant::kCascade};
  c.embed_dim = d;
  c.train.batch_size = 65536;
  c.train.steps = 500000;
  c.train.peak_lr = 8e-4;
  return c;
}

// Smallest complete model; used for finite-difference checks.
CoCaConfig micro_preset() {
  CoCaConfig c;
  c.preset = "coca-micro";
  c.image = {8, 4, 3, 1, 8, 2, 16};
  c.text.vocab_size = 16;
  c.text.max_len = 8;
  c.text.d_model = 8;
  c.text.n_heads = 2;
  c.text.mlp_dim = 16;
  c.poolers = {2, 1, PoolerVariant::kCascade};
  c.embed_dim = 8;
  c.train.batch_size = 4;
  c.train.steps = 20;
  return c;
}

}  // namespace

std::string to_string(PoolerVariant v) { return v == PoolerVariant::kParallel ? "parallel" : "cascade"; }
std::string to_string(ClsAggregate a) { return a == ClsAggregate::kClsOnly ? "cls" : "cls+text"; }

void CoCaConfig::validate() const {
  require(image.resolution > 0 && image.patch_size > 0, "image extents must be positive");
  require(image.resolution % image.patch_size == 0, "image.resolution must be divisible by image.patch_size");
  require(image.channels >= 1, "image.channels >= 1");
  require(image.enc_layers >= 1, "image.enc_layers >= 1");
  require(image.d_model >= 1 && image.n_heads >= 1 && image.d_model % image.n_heads == 0,
          "image.d_model must be divisible by image.n_heads");
  require(image.mlp_dim >= 1, "image.mlp_dim >= 1");
  require(text.vocab_size > 4, "text.vocab_size must exceed the 4 reserved ids");
  require(text.n_uni >= 1, "text.n_uni >= 1");
  require(text.n_multi >= 1, "text.n_multi >= 1");
  require(text.d_model >= 1 && text.n_heads >= 1 && text.d_model % text.n_heads == 0,
          "text.d_model must be divisible by text.n_heads");
  require(text.mlp_dim >= 1, "text.mlp_dim >= 1");
  require(text.n_cls >= 1, "text.n_cls >= 1");
  require(text.max_len >= text.n_cls + 2, "text.max_len must hold [BOS], [EOS] and the [CLS] slots");
  require(poolers.n_query_gen >= 0, "poolers.n_query_gen >= 0");
  require(poolers.n_query_con >= 1, "poolers.n_query_con >= 1");
  require(losses.lambda_con >= 0 && losses.lambda_cap >= 0, "loss weights must be nonnegative");
  require(losses.lambda_con > 0 || losses.lambda_cap > 0, "loss weights cannot both be zero");
  require(losses.temperature_init > 0, "losses.temperature_init > 0");
  require(embed_dim >= 1, "embed_dim >= 1");
  require(train.batch_size >= 2 && train.batch_size % 2 == 0, "train.batch_size must be even");
  require(train.steps >= 1, "train.steps >= 1");
  require(train.peak_lr >= 0, "train.peak_lr >= 0");
  require(train.warmup_fraction >= 0 && train.warmup_fraction <= 1, "train.warmup_fraction in [0,1]");
  require(train.weight_decay >= 0, "train.weight_decay >= 0");
  require(train.beta1 >= 0 && train.beta1 < 1 && train.beta2 >= 0 && train.beta2 < 1,
          "optimizer betas in [0,1)");
  require(train.checkpoint_every >= 0 && train.log_every >= 0, "intervals must be nonnegative");
}

std::vector<std::string> preset_names() { return {"coca-tiny", "coca-micro", "coca-base", "coca-large", "coca"}; }

CoCaConfig preset(const std::string& name) {
  if (name == "coca-tiny") return CoCaConfig{};
  if (name == "coca-micro") return micro_preset();
  if (name == "coca-base") return scaled_preset(name, 12, 768, 12, 3072, 12, 3072);
  if (name == "coca-large") return scaled_preset(name, 24, 1024, 16, 4096, 12, 4096);
  if (name == "coca") return scaled_preset(name, 40, 1408, 16, 6144, 18, 5632);
  throw ConfigError("unknown preset '" + name + "'");
}

void set_config_value(CoCaConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
}

std::string get_config_value(const CoCaConfig& config, const std::string& key) {
  return field(key).get(config);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& f : fields()) keys.emplace_back(f.key);
  return keys;
}

std::string config_to_text(const CoCaConfig& config) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.key) + " = " + f.get(config) + "\n";
  return out;
}

std::vector<KeyValue> parse_key_values(const std::string& text) {
  std::vector<KeyValue> out;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key = value'");
    }
    std::string key = trim(t.substr(0, eq));
    std::string value = trim(t.substr(eq + 1));
    if (key.empty()) throw ConfigError("config line " + std::to_string(lineno) + ": empty key");
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

std::vector<KeyValue> read_key_value_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_key_values(ss.str());
}

CoCaConfig resolve_config(const std::vector<KeyValue>& file_entries,
                          const std::vector<KeyValue>& flag_entries) {
  std::string base = "coca-tiny";
  for (const auto& [k, v] : file_entries) {
    if (k == "preset") base = v;
  }
  for (const auto& [k, v] : flag_entries) {
    if (k == "preset") base = v;
  }
  CoCaConfig config = preset(base);
  for (const auto& [k, v] : file_entries) {
    if (k != "preset") set_config_value(config, k, v);
  }
  for (const auto& [k, v] : flag_entries) {
    if (k != "preset") set_config_value(config, k, v);
  }
  config.validate();
  return config;
}

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string config_hash(const CoCaConfig& config) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx",
                static_cast<unsigned long long>(fnv1a64(config_to_text(config))));
  return buf;
}

}  // namespace coca
