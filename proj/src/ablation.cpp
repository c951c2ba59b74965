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
#include "coca/ablation.hpp"

#include "coca/report.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <sstream>

namespace coca {

namespace {

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) return out;
    start = tab + 1;
  }
}

std::vector<AblationVariant> loss_ratio_grid(const CoCaConfig& base) {
  std::vector<AblationVariant> out;
  for (auto [cap, con] : {std::pair{1, 1}, std::pair{1, 2}, std::pair{2, 1}}) {
    AblationVariant v{std::to_string(cap) + ":" + std::to_string(con), base};
    v.config.losses.lambda_cap = cap;
    v.config.losses.lambda_con = con;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<AblationVariant> n_uni_grid(const CoCaConfig& base) {
  const Index total = base.text.n_uni + base.text.n_multi;
  if (total < 2) throw ConfigError("n_uni_split needs a decoder of at least 2 layers");
  std::vector<AblationVariant> out;
  for (double share : {0.25, 0.5, 0.75}) {
    const Index n_uni = std::clamp<Index>(static_cast<Index>(std::lround(share * static_cast<double>(total))), 1, total - 1);
    const std::string label = std::to_string(n_uni) + "/" + std::to_string(total);
    if (std::any_of(out.begin(), out.end(), [&](const AblationVariant& v) { return v.label == label; })) continue;
    AblationVariant v{label, base};
    v.config.text.n_uni = n_uni;
    v.config.text.n_multi = total - n_uni;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<AblationVariant> pooler_grid(const CoCaConfig& base) {
  std::vector<AblationVariant> out;
  for (auto variant : {PoolerVariant::kParallel, PoolerVariant::kCascade}) {
    AblationVariant v{to_string(variant), base};
    v.config.poolers.variant = variant;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<AblationVariant> n_query_grid(const CoCaConfig& base) {
  std::vector<AblationVariant> out;
  for (Index n : {Index{0}, Index{1}, Index{32}, base.poolers.n_query_gen}) {
    const std::string label = std::to_string(n);
    if (std::any_of(out.begin(), out.end(), [&](const AblationVariant& v) { return v.label == label; })) continue;
    AblationVariant v{label, base};
    v.config.poolers.n_query_gen = n;
    out.push_back(std::move(v));
  }
  return out;
}

std::vector<AblationVariant> cls_grid(const CoCaConfig& base) {
  std::vector<AblationVariant> out;
  const Index budget = base.text.caption_budget();
  for (Index n_cls : {1, 8}) {
    for (auto agg : {ClsAggregate::kClsOnly, ClsAggregate::kClsAndText}) {
      AblationVariant v{std::to_string(n_cls) + "x" + to_string(agg), base};
      v.config.text.n_cls = n_cls;
      v.config.text.cls_aggregate = agg;
      // The caption budget stays fixed; extra [CLS] slots get their own positions.
      v.config.text.max_len = budget + n_cls;
      out.push_back(std::move(v));
    }
  }
  return out;
}

}  // namespace

std::vector<std::string> ablation_axes() { return {"loss_ratio", "n_uni_split", "pooler_variant", "n_query", "cls_design"}; }

std::vector<AblationVariant> ablation_grid(const CoCaConfig& base, const std::string& axis) {
  std::vector<AblationVariant> out;
  if (axis == "loss_ratio") out = loss_ratio_grid(base);
  else if (axis == "n_uni_split") out = n_uni_grid(base);
  else if (axis == "pooler_variant") out = pooler_grid(base);
  else if (axis == "n_query") out = n_query_grid(base);
  else if (axis == "cls_design") out = cls_grid(base);
  else throw ConfigError("unknown ablation axis '" + axis + "'");
  for (const auto& v : out) v.config.validate();
  return out;
}

std::string ablation_table_header() {
  return "axis\tvariant\tconfig_hash\tseed\tsteps\tfinal_total\tzero_shot\tr1_i2t\tr1_t2i\twall_seconds";
}

std::string format_ablation_table(const AblationTable& table) {
  std::string out;
  for (const auto& [k, v] : table.provenance) out += "#" + k + "=" + v + "\n";
  out += ablation_table_header() + "\n";
  for (const auto& r : table.rows) {
    out += r.axis + "\t" + r.variant + "\t" + r.config_hash + "\t" + std::to_string(r.seed) + "\t" +
           std::to_string(r.steps) + "\t" + format_double(r.final_total) + "\t" + format_double(r.zero_shot) + "\t" +
           format_double(r.r1_image_to_text) + "\t" + format_double(r.r1_text_to_image) + "\t" +
           format_double(r.wall_seconds) + "\n";
  }
  return out;
}

AblationTable parse_ablation_table(const std::string& text) {
  AblationTable t;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!header && line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw IoError("ablation table: provenance line without '='");
      t.provenance.emplace_back(line.substr(1, eq - 1), line.substr(eq + 1));
      continue;
    }
    if (!header) {
      if (line != ablation_table_header()) throw IoError("ablation table: unexpected header '" + line + "'");
      header = true;
      continue;
    }
    auto f = split_tabs(line);
    if (f.size() != 10) throw IoError("ablation table: expected 10 fields, got " + std::to_string(f.size()));
    AblationRow r;
    r.axis = f[0];
    r.variant = f[1];
    r.config_hash = f[2];
    try {
      std::size_t used = 0;
      r.seed = std::stoull(f[3], &used);
      if (used != f[3].size()) throw IoError("bad seed");
      r.steps = std::stoll(f[4], &used);
      if (used != f[4].size()) throw IoError("bad step count");
    } catch (const std::logic_error&) {
      throw IoError("ablation table: bad integer field in '" + line + "'");
    }
    r.final_total = parse_double(f[5]);
    r.zero_shot = parse_double(f[6]);
    r.r1_image_to_text = parse_double(f[7]);
    r.r1_text_to_image = parse_double(f[8]);
    r.wall_seconds = parse_double(f[9]);
    t.rows.push_back(std::move(r));
  }
  if (!header) throw IoError("ablation table: missing header");
  return t;
}

void save_ablation_table(const std::string& path, const AblationTable& table) {
  write_file(path, format_ablation_table(table));
}

AblationTable load_ablation_table(const std::string& path) { return parse_ablation_table(read_file(path)); }

AblationTable run_ablation(const CoCaConfig& base, const std::string& axis, const SyntheticCorpus& corpus,
                           const Vocab& vocab, const AblationOptions& options) {
  auto grid = ablation_grid(base, axis);
  AblationTable table;
  table.provenance = {{"axis", axis}, {"base_config_hash", config_hash(base)}, {"seed", std::to_string(options.seed)}};
  if (axis == "loss_ratio") table.provenance.emplace_back("ratio", "lambda_cap:lambda_con");
  for (auto& v : grid) {
    if (options.steps) v.config.train.steps = *options.steps;
    v.config.validate();
    const auto start = std::chrono::steady_clock::now();
    Trainer trainer(v.config, vocab, corpus.annotated, corpus.alt_text, options.seed);
    auto curve = trainer.run();
    auto eval = evaluate_corpus(trainer.model(), vocab, corpus);
    AblationRow row;
    row.axis = axis;
    row.variant = v.label;
    row.config_hash = config_hash(v.config);
    row.seed = options.seed;
    row.steps = v.config.train.steps;
    row.final_total = curve.back().total;
    row.zero_shot = eval.zero_shot_accuracy;
    row.r1_image_to_text = eval.retrieval.image_to_text.at(1);
    row.r1_text_to_image = eval.retrieval.text_to_image.at(1);
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (options.on_row) options.on_row(row);
    table.rows.push_back(std::move(row));
  }
  return table;
}

}  // namespace coca
