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
#include "coca/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace coca {

namespace {

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

constexpr const char* kMomentM = "opt.m.";
constexpr const char* kMomentV = "opt.v.";
constexpr const char* kStep = "opt.step";

}  // namespace

std::string curve_csv_header() { return "step,total,con,cap,lr"; }

std::string curve_csv_line(const CurvePoint& p) {
  return std::to_string(p.step) + "," + fmt17(p.total) + "," + fmt17(p.con) + "," + fmt17(p.cap) + "," + fmt17(p.lr);
}

std::vector<CurvePoint> parse_curve_csv(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  if (!std::getline(in, line) || line != curve_csv_header()) throw IoError("loss curve: missing header");
  std::vector<CurvePoint> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    CurvePoint p;
    char tail = 0;
    long long step = 0;
    if (std::sscanf(line.c_str(), "%lld,%lf,%lf,%lf,%lf%c", &step, &p.total, &p.con, &p.cap, &p.lr, &tail) != 5) {
      throw IoError("loss curve: malformed line '" + line + "'");
    }
    p.step = static_cast<Index>(step);
    out.push_back(p);
  }
  return out;
}

std::vector<NamedTensor> model_tensors(const CoCaModel<float>& model) {
  std::vector<NamedTensor> out;
  for (const auto& e : model.parameters().entries()) out.push_back({e.name, *e.tensor});
  for (auto& nt : out) {
    nt.tensor.set_requires_grad(false);
    nt.tensor.clear_grad();
  }
  return out;
}

void load_model_tensors(CoCaModel<float>& model, const std::vector<NamedTensor>& tensors) {
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& nt : tensors) {
    if (nt.name.rfind("opt.", 0) == 0) continue;
    by_name[nt.name] = &nt.tensor;
  }
  auto& entries = model.parameters().entries();
  if (by_name.size() != entries.size()) {
    throw IoError("checkpoint holds " + std::to_string(by_name.size()) + " model tensors, model has " +
                  std::to_string(entries.size()));
  }
  for (auto& e : entries) {
    auto it = by_name.find(e.name);
    if (it == by_name.end()) throw IoError("checkpoint is missing " + e.name);
    if (it->second->shape() != e.tensor->shape()) {
      throw IoError("checkpoint tensor " + e.name + " has shape " + shape_str(it->second->shape()) +
                    ", model expects " + shape_str(e.tensor->shape()));
    }
    e.tensor->matrix() = it->second->matrix();
  }
}

std::uint32_t parameter_checksum(const ParameterStore<float>& store, const std::string& prefix) {
  std::string bytes;
  for (const auto& e : store.entries()) {
    if (e.name.rfind(prefix, 0) != 0) continue;
    bytes += e.name;
    bytes.append(reinterpret_cast<const char*>(e.tensor->matrix().data()),
                 static_cast<std::size_t>(e.tensor->size()) * sizeof(float));
  }
  return crc32_bytes(bytes.data(), bytes.size());
}

std::vector<TokenSequence> tokenize_batch(const Vocab& vocab, const std::vector<std::string>& captions,
                                          const CoCaConfig& config) {
  std::vector<TokenSequence> out;
  out.reserve(captions.size());
  for (const auto& c : captions) out.push_back(tokenize(vocab, c, config.text.caption_budget()));
  return out;
}

void check_data_compatibility(const CoCaConfig& config, const Vocab& vocab, const Dataset& data) {
  if (vocab.size() > config.text.vocab_size) {
    throw ConfigError("vocabulary of " + std::to_string(vocab.size()) + " tokens exceeds text.vocab_size " +
                      std::to_string(config.text.vocab_size));
  }
  if (data.height != config.image.resolution || data.width != config.image.resolution ||
      data.channels != config.image.channels) {
    throw ConfigError("dataset images are " + std::to_string(data.height) + "x" + std::to_string(data.width) + "x" +
                      std::to_string(data.channels) + " but the model expects " +
                      std::to_string(config.image.resolution) + "x" + std::to_string(config.image.resolution) + "x" +
                      std::to_string(config.image.channels));
  }
}

Trainer::Trainer(const CoCaConfig& config, const Vocab& vocab, const Dataset& annotated, const Dataset& alt_text,
                 std::uint64_t seed)
    : config_(config),
      vocab_(&vocab),
      model_(config, seed),
      optimizer_(model_.parameters(), AdamWOptions{config.train.beta1, config.train.beta2, config.train.adam_eps,
                                                   config.train.weight_decay}),
      schedule_{config.train.peak_lr, config.train.warmup_fraction, config.train.steps},
      stream_(annotated, alt_text, config.train.batch_size, seed ^ 0x6a09e667f3bcc909ULL),
      weights_{config.losses.lambda_con, config.losses.lambda_cap} {
  weights_.validate();
  check_data_compatibility(config, vocab, annotated);
  check_data_compatibility(config, vocab, alt_text);
}

CurvePoint Trainer::step() {
  const Index s = optimizer_.steps() + 1;
  if (s > schedule_.total_steps) throw Error("training already finished");
  Batch batch = stream_.next();
  if (hooks_.inject_nan_at && *hooks_.inject_nan_at == s) {
    batch.images.front().matrix()(0, 0) = std::numeric_limits<float>::quiet_NaN();
  }
  auto texts = tokenize_batch(*vocab_, batch.captions, config_);
  model_.parameters().zero_grad();
  Tape<float> tape;
  auto out = model_.forward(tape, batch.images, texts);
  auto loss = coca_loss(out, texts, weights_, model_.log_temperature(tape));
  CurvePoint p;
  p.step = s;
  p.total = loss.total.item();
  p.con = loss.con.item();
  p.cap = loss.cap.item();
  p.lr = schedule_.lr_at(s);
  if (!std::isfinite(p.total)) throw NumericError("non-finite loss at step " + std::to_string(s));
  tape.backward(loss.total);
  optimizer_.step(p.lr);
  if (hooks_.on_step) hooks_.on_step(p);
  return p;
}

std::vector<CurvePoint> Trainer::run(std::optional<Index> until) {
  const Index end = until.value_or(schedule_.total_steps);
  if (end > schedule_.total_steps) throw ConfigError("cannot run past the scheduled step count");
  std::vector<CurvePoint> curve;
  while (optimizer_.steps() < end) curve.push_back(step());
  return curve;
}

std::vector<NamedTensor> Trainer::state() const {
  auto out = model_tensors(model_);
  const auto& entries = model_.parameters().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    Shape shape = entries[i].tensor->shape();
    out.push_back({kMomentM + entries[i].name, Tensor<float>(shape, optimizer_.first_moments()[i])});
    out.push_back({kMomentV + entries[i].name, Tensor<float>(shape, optimizer_.second_moments()[i])});
  }
  Tensor<float> step(Shape{1});
  step.matrix()(0, 0) = static_cast<float>(optimizer_.steps());
  out.push_back({kStep, step});
  return out;
}

void Trainer::restore(const std::vector<NamedTensor>& state) {
  load_model_tensors(model_, state);
  std::map<std::string, const Tensor<float>*> by_name;
  for (const auto& nt : state) by_name[nt.name] = &nt.tensor;
  const auto& entries = model_.parameters().entries();
  for (std::size_t i = 0; i < entries.size(); ++i) {
    for (auto [prefix, moments] : {std::pair{kMomentM, &optimizer_.first_moments()},
                                   std::pair{kMomentV, &optimizer_.second_moments()}}) {
      auto it = by_name.find(prefix + entries[i].name);
      if (it == by_name.end()) throw IoError("checkpoint has no optimizer state for " + entries[i].name);
      if (it->second->shape() != entries[i].tensor->shape()) throw IoError("optimizer state shape mismatch");
      (*moments)[i] = it->second->matrix();
    }
  }
  auto it = by_name.find(kStep);
  if (it == by_name.end()) throw IoError("checkpoint has no step counter");
  const auto steps = static_cast<Index>(it->second->item());
  if (steps < 0 || steps > schedule_.total_steps) throw IoError("checkpoint step outside the schedule");
  optimizer_.set_steps(steps);
  stream_.seek(steps);
}

ModelGradCheck model_gradcheck(const CoCaConfig& config, std::uint64_t seed, const GradCheckOptions& options,
                               Index batch) {
  config.validate();
  if (batch < 1) throw ConfigError("gradcheck batch must be positive");
  CoCaModel<double> model(config, seed);
  Rng rng(seed, 3);
  // Zero-initialized projections would hide their downstream gradients.
  for (auto& e : model.parameters().entries()) {
    for (double& v : e.tensor->values()) v += rng.normal(0.0, 0.1);
  }
  std::vector<Tensor<double>> images;
  std::vector<TokenSequence> texts;
  const Index res = config.image.resolution;
  const Index budget = config.text.caption_budget();
  for (Index b = 0; b < batch; ++b) {
    Tensor<double> image(Shape{res, res, config.image.channels});
    for (double& v : image.values()) v = rng.uniform();
    images.push_back(std::move(image));
    const Index len = 2 + static_cast<Index>(rng.bounded(static_cast<std::uint32_t>(budget - 1)));
    TokenSequence t;
    t.ids.push_back(kBosId);
    for (Index i = 1; i + 1 < len; ++i) {
      t.ids.push_back(kNumReserved +
                      static_cast<int>(rng.bounded(static_cast<std::uint32_t>(config.text.vocab_size - kNumReserved))));
    }
    t.ids.push_back(kEosId);
    t.length = len;
    t.ids.resize(static_cast<std::size_t>(config.text.max_len), kPadId);
    texts.push_back(std::move(t));
  }
  const LossWeights weights{config.losses.lambda_con, config.losses.lambda_cap};
  std::vector<NamedParam> params;
  for (auto& e : model.parameters().entries()) params.push_back({e.name, e.tensor.get()});
  auto loss = [&](Tape<double>& tape) {
    auto out = model.forward(tape, images, texts);
    return coca_loss(out, texts, weights, model.log_temperature(tape)).total;
  };
  ModelGradCheck r;
  r.detail = finite_diff_check(loss, params, options);
  for (const auto& p : r.detail.params) {
    const auto group = parameter_group(p.name);
    auto it = std::find_if(r.groups.begin(), r.groups.end(), [&](const GroupCheck& g) { return g.group == group; });
    if (it == r.groups.end()) {
      r.groups.push_back({group});
      it = r.groups.end() - 1;
    }
    it->tensors += 1;
    it->entries += p.checked;
    it->max_rel_error = std::max(it->max_rel_error, p.max_rel_error);
    it->passed = it->passed && p.passed;
  }
  r.passed = r.detail.passed;
  return r;
}

}  // namespace coca
