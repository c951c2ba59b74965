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
// coca: command-line front end for data generation, training, evaluation,
// gradient checks and ablations.

#include "coca/ablation.hpp"
#include "coca/eval.hpp"
#include "coca/report.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

namespace {

using namespace coca;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitNumeric = 3;
constexpr int kExitIo = 4;

std::vector<KeyValue> parse_sets(const std::vector<std::string>& sets) {
  std::vector<KeyValue> out;
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    out.emplace_back(s.substr(0, eq), s.substr(eq + 1));
  }
  return out;
}

CoCaConfig resolve(const std::string& config_path, const std::vector<std::string>& sets,
                   const std::string& default_preset = "coca-tiny") {
  std::vector<KeyValue> file;
  if (!config_path.empty()) file = read_key_value_file(config_path);
  const auto flags = parse_sets(sets);
  auto has_preset = [](const std::vector<KeyValue>& kv) {
    return std::any_of(kv.begin(), kv.end(), [](const KeyValue& e) { return e.first == "preset"; });
  };
  if (!has_preset(file) && !has_preset(flags)) file.insert(file.begin(), {"preset", default_preset});
  return resolve_config(file, flags);
}

void print_config(const CoCaConfig& config) {
  std::cout << "# resolved config " << config_hash(config) << "\n" << config_to_text(config) << std::flush;
}

// ---------------------------------------------------------------------------
// gen-data

void set_spec_value(SyntheticSpec& spec, const std::string& key, const std::string& value) {
  auto as_index = [&](Index lo) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(value, &used);
    } catch (const std::logic_error&) {
      used = 0;
    }
    if (used != value.size() || v < lo) throw ConfigError("bad value for " + key + ": '" + value + "'");
    return static_cast<Index>(v);
  };
  if (key == "n_classes") spec.n_classes = as_index(1);
  else if (key == "per_class") spec.per_class = as_index(1);
  else if (key == "resolution") spec.height = spec.width = as_index(1);
  else if (key == "height") spec.height = as_index(1);
  else if (key == "width") spec.width = as_index(1);
  else if (key == "test_per_combo") spec.test_per_combo = as_index(1);
  else if (key == "noise") {
    double v = 0;
    try {
      v = parse_double(value);
    } catch (const IoError&) {
      throw ConfigError("bad value for noise: '" + value + "'");
    }
    if (!(v >= 0)) throw ConfigError("noise must be nonnegative");
    spec.noise = v;
  } else {
    throw ConfigError("unknown data spec key '" + key + "'");
  }
}

std::string spec_to_text(const SyntheticSpec& s) {
  return "n_classes = " + std::to_string(s.n_classes) + "\nper_class = " + std::to_string(s.per_class) +
         "\nheight = " + std::to_string(s.height) + "\nwidth = " + std::to_string(s.width) +
         "\nnoise = " + format_double(s.noise) + "\ntest_per_combo = " + std::to_string(s.test_per_combo) + "\n";
}

int cmd_gen_data(const std::string& spec_path, const std::vector<std::string>& sets, const std::string& out,
                 std::uint64_t seed) {
  SyntheticSpec spec;
  if (!spec_path.empty()) {
    for (const auto& [k, v] : read_key_value_file(spec_path)) set_spec_value(spec, k, v);
  }
  for (const auto& [k, v] : parse_sets(sets)) set_spec_value(spec, k, v);
  std::cout << "# resolved data spec (seed " << seed << ")\n" << spec_to_text(spec) << std::flush;
  auto corpus = generate_synthetic(spec, seed);
  write_corpus(out, corpus);
  write_file(out + "/spec.txt", spec_to_text(spec) + "seed = " + std::to_string(seed) + "\n");
  std::cout << "wrote " << corpus.annotated.size() << " annotated, " << corpus.alt_text.size() << " alt-text, "
            << corpus.test.size() << " test examples to " << out << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config, data, out, resume, curves;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;
  Index until = 0;
  Index inject_nan_at = 0;
};

int cmd_train(const TrainArgs& a) {
  const auto config = resolve(a.config, a.sets);
  print_config(config);
  const auto corpus = read_corpus(a.data);
  const auto vocab = Vocab::load(a.data + "/vocab.txt");
  Trainer trainer(config, vocab, corpus.annotated, corpus.alt_text, a.seed);
  if (!a.resume.empty()) {
    trainer.restore(load_checkpoint(a.resume));
    std::cout << "resumed from " << a.resume << " at step " << trainer.steps_done() << "\n";
  }
  if (a.inject_nan_at > 0) trainer.hooks().inject_nan_at = a.inject_nan_at;
  write_file(a.out + ".cfg", config_to_text(config) + "# seed " + std::to_string(a.seed) + "\n");

  const std::string curves = a.curves.empty() ? a.out + ".curves.csv" : a.curves;
  std::ofstream csv(curves, std::ios::binary);
  if (!csv) throw IoError("cannot write " + curves);
  csv << curve_csv_header() << "\n";
  const Index end = a.until > 0 ? a.until : config.train.steps;
  if (end > config.train.steps) throw ConfigError("--until exceeds train.steps");

  try {
    while (trainer.steps_done() < end) {
      const auto p = trainer.step();
      csv << curve_csv_line(p) << "\n";
      if (config.train.log_every > 0 && (p.step % config.train.log_every == 0 || p.step == end)) {
        std::printf("step %lld total %.6f con %.6f cap %.6f lr %.3g\n", static_cast<long long>(p.step), p.total,
                    p.con, p.cap, p.lr);
        std::fflush(stdout);
      }
      if (config.train.checkpoint_every > 0 && p.step % config.train.checkpoint_every == 0) {
        save_checkpoint(a.out, trainer.state());
      }
    }
  } catch (const NumericError& e) {
    csv.flush();
    save_checkpoint(a.out, trainer.state());
    std::cerr << "numeric failure: " << e.what() << "\nlast good checkpoint (step " << trainer.steps_done()
              << ") written to " << a.out << "\n";
    return kExitNumeric;
  }
  csv.flush();
  if (!csv) throw IoError("failed writing " + curves);
  save_checkpoint(a.out, trainer.state());
  std::cout << "checkpoint " << a.out << " at step " << trainer.steps_done() << "\ncurves " << curves << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string ckpt, data, task, report, split = "test";
  std::uint64_t seed = 0;
  Index k = 0;
  Index pairs = 0;
  Index limit = 0;
  Index frames = 16;
  Index head_steps = 300;
  double head_lr = 3e-3;
  bool finetune = false;
};

CoCaConfig checkpoint_config(const std::string& ckpt) {
  const std::string path = ckpt + ".cfg";
  if (!std::filesystem::exists(path)) throw IoError("missing config file " + path + " next to the checkpoint");
  return resolve_config(read_key_value_file(path), {});
}

const Dataset& split_of(const SyntheticCorpus& corpus, const std::string& split) {
  if (split == "test") return corpus.test;
  if (split == "annotated") return corpus.annotated;
  if (split == "alt_text") return corpus.alt_text;
  throw ConfigError("unknown split '" + split + "'");
}

Dataset head_of(const Dataset& d, Index limit) {
  if (limit <= 0 || limit >= d.size()) return d;
  Dataset out = d;
  const auto n = static_cast<std::size_t>(limit);
  out.images.resize(n);
  out.captions.resize(n);
  if (!out.labels.empty()) out.labels.resize(n);
  if (!out.ids.empty()) out.ids.resize(n);
  return out;
}

void run_task(const EvalArgs& a, CoCaModel<float>& model, const Vocab& vocab, const SyntheticCorpus& corpus,
              EvalReport& report) {
  const auto& cfg = model.config();
  const std::optional<Index> k = a.k > 0 ? std::optional<Index>(a.k) : std::nullopt;
  if (a.task == "zeroshot") {
    const Dataset data = head_of(split_of(corpus, a.split), a.limit);
    auto r = zero_shot_classify(model, vocab, data.images, class_indices(data, corpus.class_names),
                                corpus.class_names);
    report.add_metric("zero_shot_accuracy", r.accuracy);
    report.add_metric("examples", static_cast<double>(data.size()));
    report.add_metric("classes", static_cast<double>(corpus.class_names.size()));
  } else if (a.task == "retrieval") {
    auto idx = retrieval_pair_indices(corpus);
    if (a.pairs > 0 && a.pairs < static_cast<Index>(idx.size())) idx.resize(static_cast<std::size_t>(a.pairs));
    std::vector<Tensor<float>> images;
    std::vector<std::string> texts;
    for (Index i : idx) {
      images.push_back(corpus.test.images[static_cast<std::size_t>(i)]);
      texts.push_back(corpus.test.captions[static_cast<std::size_t>(i)]);
    }
    auto r = retrieve(model, vocab, images, texts, k);
    report.add_metric("pairs", static_cast<double>(images.size()));
    for (auto [kk, v] : r.image_to_text) report.add_metric("image_to_text_R@" + std::to_string(kk), v);
    for (auto [kk, v] : r.text_to_image) report.add_metric("text_to_image_R@" + std::to_string(kk), v);
  } else if (a.task == "caption") {
    const Dataset data = head_of(split_of(corpus, a.split), a.limit);
    auto out = caption_greedy(model, data.images);
    Index exact = 0;
    for (std::size_t i = 0; i < out.size(); ++i) {
      const auto ref = tokenize(vocab, data.captions[i], cfg.text.caption_budget());
      const std::vector<int> want(ref.ids.begin() + 1, ref.ids.begin() + ref.length);
      exact += out[i] == want;
      if (i < 8) std::cout << "caption " << i << ": " << detokenize(vocab, out[i]) << "\n";
    }
    report.add_metric("exact_match", out.empty() ? 0.0 : static_cast<double>(exact) / static_cast<double>(out.size()));
    report.add_metric("examples", static_cast<double>(out.size()));
  } else if (a.task == "frozen") {
    HeadTrainOptions options;
    options.steps = a.head_steps;
    options.lr = a.head_lr;
    options.seed = a.seed;
    const Dataset train = head_of(corpus.annotated, a.limit);
    auto r = frozen_feature_eval(model, train.images, class_indices(train, corpus.class_names), corpus.test.images,
                                 corpus.test_classes, static_cast<Index>(corpus.class_names.size()), options);
    report.add_metric("train_accuracy", r.train_accuracy);
    report.add_metric("test_accuracy", r.test_accuracy);
    report.add_metric("encoder_unchanged", r.encoder_checksum_before == r.encoder_checksum_after ? 1.0 : 0.0);
    report.add_metric("updated_head_tensors", static_cast<double>(r.updated_head_tensors.size()));
  } else if (a.task == "video") {
    // Each class's held-out images form one clip.
    auto cls = class_embeddings(model, vocab, corpus.class_names, prompt_templates());
    Index correct = 0, clips = 0;
    for (std::size_t c = 0; c < corpus.class_names.size(); ++c) {
      std::vector<Tensor<float>> frames;
      for (std::size_t i = 0; i < corpus.test_classes.size(); ++i) {
        if (corpus.test_classes[i] == static_cast<int>(c)) frames.push_back(corpus.test.images[i]);
      }
      if (frames.empty()) continue;
      Matrix<float> v = video_embed(model, frames, a.frames).transpose();
      correct += zero_shot_predict(v, cls).front() == static_cast<int>(c);
      ++clips;
    }
    report.add_metric("video_zero_shot_accuracy", clips ? static_cast<double>(correct) / static_cast<double>(clips) : 0);
    report.add_metric("clips", static_cast<double>(clips));
    report.add_metric("frames_per_clip", static_cast<double>(a.frames));
  } else if (a.task == "multimodal") {
    Rng rng(a.seed, 5);
    const Dataset train_data = head_of(corpus.annotated, a.limit);
    auto train = caption_match_pairs(train_data, corpus.class_names, rng);
    auto test = caption_match_pairs(corpus.test, corpus.class_names, rng);
    std::vector<Tensor<float>> images = train_data.images;
    images.insert(images.end(), corpus.test.images.begin(), corpus.test.images.end());
    for (auto& p : test) p.image += train_data.size();
    MultimodalHead head(cfg, 2, a.seed);
    HeadTrainOptions options;
    options.steps = a.head_steps;
    options.lr = a.head_lr;
    options.seed = a.seed;
    auto r = multimodal_classify(model, head, vocab, images, train, test, options, a.finetune);
    report.add_metric("train_accuracy", r.train_accuracy);
    report.add_metric("test_accuracy", r.test_accuracy);
    report.add_metric("test_pairs", static_cast<double>(test.size()));
  } else {
    throw ConfigError("unknown task '" + a.task + "'");
  }
}

int cmd_eval(const EvalArgs& a) {
  const auto config = checkpoint_config(a.ckpt);
  print_config(config);
  const auto corpus = read_corpus(a.data);
  const auto vocab = Vocab::load(a.data + "/vocab.txt");
  check_data_compatibility(config, vocab, corpus.test);
  CoCaModel<float> model(config, 0);
  load_model_tensors(model, load_checkpoint(a.ckpt));

  EvalReport report;
  report.add_provenance("task", a.task);
  report.add_provenance("checkpoint", a.ckpt);
  report.add_provenance("data", a.data);
  report.add_provenance("config_hash", config_hash(config));
  report.add_provenance("preset", config.preset);
  report.add_provenance("seed", std::to_string(a.seed));
  run_task(a, model, vocab, corpus, report);

  const std::string path = a.report.empty() ? a.ckpt + "." + a.task + ".report" : a.report;
  save_report(path, report);
  std::cout << format_report(report) << "report " << path << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------------------
// gradcheck

int cmd_gradcheck(const std::string& config_path, const std::vector<std::string>& sets, double tol,
                  std::uint64_t seed, bool corrupt, Index max_entries) {
  const auto config = resolve(config_path, sets, "coca-micro");
  print_config(config);
  GradCheckOptions options;
  options.tolerance = tol;
  options.max_entries_per_param = max_entries;
  set_corrupt_backward(corrupt);
  const auto start = std::chrono::steady_clock::now();
  const auto r = model_gradcheck(config, seed, options);
  set_corrupt_backward(false);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::printf("group\ttensors\tentries\tmax_rel_error\tresult\n");
  for (const auto& g : r.groups) {
    std::printf("%s\t%lld\t%lld\t%.3e\t%s\n", g.group.c_str(), static_cast<long long>(g.tensors),
                static_cast<long long>(g.entries), g.max_rel_error, g.passed ? "PASS" : "FAIL");
  }
  std::printf("overall\t%.3e\t%s\ttol %.1e\t%.1fs\n", r.detail.max_rel_error, r.passed ? "PASS" : "FAIL", tol,
              seconds);
  return r.passed ? kExitOk : kExitNumeric;
}

// ---------------------------------------------------------------------------
// ablate

int cmd_ablate(const std::string& config_path, const std::vector<std::string>& sets, const std::string& data,
               const std::string& axis, const std::string& out, Index steps, std::uint64_t seed) {
  const auto config = resolve(config_path, sets);
  print_config(config);
  const auto corpus = read_corpus(data);
  const auto vocab = Vocab::load(data + "/vocab.txt");
  AblationOptions options;
  if (steps > 0) options.steps = steps;
  options.seed = seed;
  options.on_row = [](const AblationRow& r) {
    std::printf("%s %s: total %.4f zero-shot %.4f R@1 %.4f/%.4f (%.1fs)\n", r.axis.c_str(), r.variant.c_str(),
                r.final_total, r.zero_shot, r.r1_image_to_text, r.r1_text_to_image, r.wall_seconds);
    std::fflush(stdout);
  };
  const auto table = run_ablation(config, axis, corpus, vocab, options);
  save_ablation_table(out, table);
  std::cout << format_ablation_table(table) << "table " << out << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"CoCa at desk scale"};
  app.require_subcommand(1);

  std::string spec_path, out, config_path, data, axis;
  std::vector<std::string> sets;
  std::uint64_t seed = 0;

  auto* gen = app.add_subcommand("gen-data", "Generate the synthetic corpus");
  gen->add_option("--spec", spec_path, "key = value data spec file");
  gen->add_option("--set", sets, "Override one spec key (key=value)");
  gen->add_option("--out", out, "Output directory")->required();
  gen->add_option("--seed", seed, "Generator seed");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Pretrain a model");
  train->add_option("--config", ta.config, "key = value config file");
  train->add_option("--set", ta.sets, "Override one config key (key=value)");
  train->add_option("--data", ta.data, "Corpus directory")->required();
  train->add_option("--out", ta.out, "Checkpoint path")->required();
  train->add_option("--seed", ta.seed, "Run seed");
  train->add_option("--resume", ta.resume, "Checkpoint to resume from");
  train->add_option("--until", ta.until, "Stop after this many total updates");
  train->add_option("--curves", ta.curves, "Loss curve CSV (default <out>.curves.csv)");
  train->add_option("--inject-nan-at", ta.inject_nan_at, "Poison the batch of this 1-based step");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint");
  eval->add_option("--ckpt", ea.ckpt, "Checkpoint path (config read from <ckpt>.cfg)")->required();
  eval->add_option("--data", ea.data, "Corpus directory")->required();
  eval->add_option("--task", ea.task, "Protocol")
      ->required()
      ->check(CLI::IsMember({"zeroshot", "retrieval", "caption", "frozen", "video", "multimodal"}));
  eval->add_option("--report", ea.report, "Report path (default <ckpt>.<task>.report)");
  eval->add_option("--seed", ea.seed, "Seed for trained heads");
  eval->add_option("--k", ea.k, "Extra recall cutoff for retrieval");
  eval->add_option("--pairs", ea.pairs, "Use only the first N retrieval pairs");
  eval->add_option("--split", ea.split, "Split for zeroshot and caption")
      ->check(CLI::IsMember({"test", "annotated", "alt_text"}));
  eval->add_option("--limit", ea.limit, "Use only the first N examples of the split");
  eval->add_option("--frames", ea.frames, "Frames per clip for video");
  eval->add_option("--head-steps", ea.head_steps, "Training steps for frozen and multimodal heads");
  eval->add_option("--head-lr", ea.head_lr, "Learning rate for trained heads");
  eval->add_flag("--finetune", ea.finetune, "Also update the backbone in the multimodal task");

  double tol = 1e-3;
  bool corrupt = false;
  Index max_entries = 0;
  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check (coca-micro by default)");
  grad->add_option("--config", config_path, "key = value config file");
  grad->add_option("--set", sets, "Override one config key (key=value)");
  grad->add_option("--tol", tol, "Max relative error");
  grad->add_option("--seed", seed, "Model and batch seed");
  grad->add_option("--max-entries", max_entries, "Entries checked per tensor (0 = all)");
  grad->add_flag("--corrupt-backward", corrupt, "Break one backward rule (negative control)");

  Index steps = 0;
  auto* ablate = app.add_subcommand("ablate", "Train and evaluate one ablation axis");
  ablate->add_option("--config", config_path, "key = value base config file");
  ablate->add_option("--set", sets, "Override one config key (key=value)");
  ablate->add_option("--data", data, "Corpus directory")->required();
  ablate->add_option("--axis", axis, "loss_ratio, n_uni_split, pooler_variant, n_query or cls_design")->required();
  ablate->add_option("--out", out, "Table path")->required();
  ablate->add_option("--steps", steps, "Training steps per variant (default train.steps)");
  ablate->add_option("--seed", seed, "Run seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*gen) return cmd_gen_data(spec_path, sets, out, seed);
    if (*train) return cmd_train(ta);
    if (*eval) return cmd_eval(ea);
    if (*grad) return cmd_gradcheck(config_path, sets, tol, seed, corrupt, max_entries);
    if (*ablate) return cmd_ablate(config_path, sets, data, axis, out, steps, seed);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    std::cerr << "numeric error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitIo;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  return kExitUsage;
}
