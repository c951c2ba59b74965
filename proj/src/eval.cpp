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
#include "coca/eval.hpp"

#include <algorithm>
#include <numeric>

namespace coca {

namespace {

Index argmax_row(const Matrix<float>& m, Index r, Index from = 0) {
  Index best = from;
  for (Index c = from + 1; c < m.cols(); ++c) {
    if (m(r, c) > m(r, best)) best = c;
  }
  return best;
}

template <typename F>
void for_chunks(Index n, Index chunk, F&& f) {
  if (chunk < 1) throw Error("chunk size must be positive");
  for (Index start = 0; start < n; start += chunk) f(start, std::min(chunk, n - start));
}

std::vector<Index> epoch_order(Index n, Rng& rng) {
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  rng.shuffle(std::span<Index>(order));
  return order;
}

// Cycles through shuffled epochs of [0, n).
class IndexSampler {
 public:
  IndexSampler(Index n, std::uint64_t seed) : n_(n), rng_(seed) {
    if (n < 1) throw Error("cannot sample from an empty set");
  }
  std::vector<Index> next(Index count) {
    std::vector<Index> out;
    for (Index i = 0; i < count; ++i) {
      if (pos_ == order_.size()) {
        order_ = epoch_order(n_, rng_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  Index n_;
  Rng rng_;
  std::vector<Index> order_;
  std::size_t pos_ = 0;
};

double accuracy_of(const Matrix<float>& logits, const std::vector<int>& labels) {
  Index correct = 0;
  for (Index r = 0; r < logits.rows(); ++r) correct += argmax_row(logits, r) == labels[static_cast<std::size_t>(r)];
  return logits.rows() ? static_cast<double>(correct) / static_cast<double>(logits.rows()) : 0.0;
}

std::map<std::string, Matrix<float>> snapshot(const ParameterStore<float>& store) {
  std::map<std::string, Matrix<float>> out;
  for (const auto& e : store.entries()) out[e.name] = e.tensor->matrix();
  return out;
}

// Marks the whole model frozen for the lifetime of the guard.
class FreezeGuard {
 public:
  explicit FreezeGuard(ParameterStore<float>& store, bool active) : store_(store), active_(active) {
    if (active_) store_.set_frozen("", true);
  }
  ~FreezeGuard() {
    if (active_) store_.set_frozen("", false);
  }
  FreezeGuard(const FreezeGuard&) = delete;
  FreezeGuard& operator=(const FreezeGuard&) = delete;

 private:
  ParameterStore<float>& store_;
  bool active_;
};

}  // namespace

std::vector<int> zero_shot_predict(const Matrix<float>& image_emb, const Matrix<float>& class_emb) {
  if (class_emb.rows() < 1) throw Error("zero-shot: no classes");
  if (image_emb.cols() != class_emb.cols()) throw ShapeError("zero-shot: embedding widths differ");
  Matrix<float> sim = image_emb * class_emb.transpose();
  std::vector<int> out;
  for (Index r = 0; r < sim.rows(); ++r) out.push_back(static_cast<int>(argmax_row(sim, r)));
  return out;
}

Vector<float> mean_embedding(const Matrix<float>& rows) {
  if (rows.rows() < 1) throw Error("mean_embedding: no rows");
  Vector<float> m = rows.colwise().mean().transpose();
  const float n = m.norm();
  if (!(n > 0)) throw NumericError("mean_embedding: zero mean vector");
  return m / n;
}

std::vector<Index> paired_ranks(const Matrix<float>& queries, const Matrix<float>& candidates) {
  if (queries.rows() != candidates.rows() || queries.cols() != candidates.cols()) {
    throw ShapeError("retrieval: paired embedding matrices must match");
  }
  Matrix<float> sim = queries * candidates.transpose();
  std::vector<Index> ranks;
  for (Index i = 0; i < sim.rows(); ++i) {
    Index rank = 0;
    for (Index j = 0; j < sim.cols(); ++j) {
      if (j == i) continue;
      if (sim(i, j) > sim(i, i) || (sim(i, j) == sim(i, i) && j < i)) ++rank;
    }
    ranks.push_back(rank);
  }
  return ranks;
}

RetrievalResult retrieval_recall(const Matrix<float>& image_emb, const Matrix<float>& text_emb,
                                 const std::vector<Index>& ks) {
  const Index n = image_emb.rows();
  if (n < 1) throw Error("retrieval: empty set");
  for (Index k : ks) {
    if (k < 1 || k > n) throw ConfigError("retrieval: K=" + std::to_string(k) + " outside [1, " + std::to_string(n) + "]");
  }
  auto i2t = paired_ranks(image_emb, text_emb);
  auto t2i = paired_ranks(text_emb, image_emb);
  RetrievalResult r;
  for (Index k : ks) {
    auto recall = [&](const std::vector<Index>& ranks) {
      return static_cast<double>(std::count_if(ranks.begin(), ranks.end(), [&](Index x) { return x < k; })) /
             static_cast<double>(n);
    };
    r.image_to_text[k] = recall(i2t);
    r.text_to_image[k] = recall(t2i);
  }
  return r;
}

std::vector<Index> default_recall_ks(Index n, std::optional<Index> extra) {
  std::vector<Index> ks;
  for (Index k : {1, 5, 10}) {
    if (k <= n) ks.push_back(k);
  }
  if (extra) {
    if (*extra < 1 || *extra > n) {
      throw ConfigError("retrieval: K=" + std::to_string(*extra) + " exceeds the " + std::to_string(n) + " pairs");
    }
    if (std::find(ks.begin(), ks.end(), *extra) == ks.end()) ks.push_back(*extra);
  }
  std::sort(ks.begin(), ks.end());
  return ks;
}

std::vector<Index> video_frame_indices(Index n_available, Index n_frames) {
  if (n_available < 1) throw Error("video: no frames");
  if (n_frames < 1) throw ConfigError("video: n_frames must be positive");
  std::vector<Index> out;
  for (Index i = 0; i < n_frames; ++i) out.push_back(i * n_available / n_frames);
  return out;
}

Matrix<float> image_embeddings(const CoCaModel<float>& model, std::span<const Tensor<float>> images, Index chunk) {
  Matrix<float> out(static_cast<Index>(images.size()), model.config().embed_dim);
  for_chunks(static_cast<Index>(images.size()), chunk, [&](Index start, Index count) {
    Tape<float> tape;
    tape.set_grad_enabled(false);
    auto enc = model.encode_images(tape, images.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(count)));
    out.middleRows(start, count) = enc.contrastive_embed.matrix();
  });
  return out;
}

Matrix<float> text_embeddings(const CoCaModel<float>& model, const Vocab& vocab, const std::vector<std::string>& texts,
                              Index chunk) {
  auto seqs = tokenize_batch(vocab, texts, model.config());
  Matrix<float> out(static_cast<Index>(texts.size()), model.config().embed_dim);
  for_chunks(static_cast<Index>(texts.size()), chunk, [&](Index start, Index count) {
    Tape<float> tape;
    tape.set_grad_enabled(false);
    auto enc = model.encode_text_unimodal(
        tape, std::span<const TokenSequence>(seqs).subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(count)));
    out.middleRows(start, count) = enc.cls_embed.matrix();
  });
  return out;
}

Matrix<float> class_embeddings(const CoCaModel<float>& model, const Vocab& vocab,
                               const std::vector<std::string>& class_names, const std::vector<std::string>& prompts) {
  if (prompts.empty()) throw ConfigError("zero-shot: no prompts");
  Matrix<float> out(static_cast<Index>(class_names.size()), model.config().embed_dim);
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    std::vector<std::string> texts;
    for (const auto& p : prompts) texts.push_back(apply_template(p, class_names[c]));
    out.row(static_cast<Index>(c)) = mean_embedding(text_embeddings(model, vocab, texts)).transpose();
  }
  return out;
}

ZeroShotResult zero_shot_classify(const CoCaModel<float>& model, const Vocab& vocab,
                                  std::span<const Tensor<float>> images, const std::vector<int>& labels,
                                  const std::vector<std::string>& class_names,
                                  const std::vector<std::string>& prompts) {
  if (labels.size() != images.size()) throw ShapeError("zero-shot: label count differs from image count");
  ZeroShotResult r;
  r.predictions = zero_shot_predict(image_embeddings(model, images), class_embeddings(model, vocab, class_names, prompts));
  Index correct = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) correct += r.predictions[i] == labels[i];
  r.accuracy = images.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(images.size());
  return r;
}

RetrievalResult retrieve(const CoCaModel<float>& model, const Vocab& vocab, std::span<const Tensor<float>> images,
                         const std::vector<std::string>& texts, std::optional<Index> k) {
  if (images.size() != texts.size()) throw ShapeError("retrieval: image and text lists differ in length");
  const auto n = static_cast<Index>(images.size());
  return retrieval_recall(image_embeddings(model, images), text_embeddings(model, vocab, texts),
                          default_recall_ks(n, k));
}

std::vector<int> class_indices(const Dataset& data, const std::vector<std::string>& class_names) {
  if (data.labels.size() != data.images.size()) throw Error("class labels missing from dataset");
  std::vector<int> out;
  for (const auto& l : data.labels) {
    if (l.empty()) throw Error("example without a class label");
    auto it = std::find(class_names.begin(), class_names.end(), l.front());
    if (it == class_names.end()) throw Error("unknown class label '" + l.front() + "'");
    out.push_back(static_cast<int>(it - class_names.begin()));
  }
  return out;
}

std::vector<Index> retrieval_pair_indices(const SyntheticCorpus& corpus) {
  if (corpus.test_classes.size() != corpus.test.images.size() || corpus.test_colors.size() != corpus.test.images.size()) {
    throw Error("retrieval pairs need class and color labels on the test split");
  }
  std::vector<Index> out;
  std::vector<std::pair<int, int>> seen;
  for (std::size_t i = 0; i < corpus.test_classes.size(); ++i) {
    std::pair<int, int> key{corpus.test_classes[i], corpus.test_colors[i]};
    if (std::find(seen.begin(), seen.end(), key) != seen.end()) continue;
    seen.push_back(key);
    out.push_back(static_cast<Index>(i));
  }
  return out;
}

CorpusEvalResult evaluate_corpus(const CoCaModel<float>& model, const Vocab& vocab, const SyntheticCorpus& corpus,
                                 std::optional<Index> k) {
  CorpusEvalResult r;
  r.zero_shot_accuracy =
      zero_shot_classify(model, vocab, corpus.test.images, corpus.test_classes, corpus.class_names).accuracy;
  std::vector<Tensor<float>> images;
  std::vector<std::string> texts;
  for (Index i : retrieval_pair_indices(corpus)) {
    images.push_back(corpus.test.images[static_cast<std::size_t>(i)]);
    texts.push_back(corpus.test.captions[static_cast<std::size_t>(i)]);
  }
  r.retrieval_pairs = static_cast<Index>(images.size());
  r.retrieval = retrieve(model, vocab, images, texts, k);
  return r;
}

std::vector<std::vector<int>> caption_greedy(const CoCaModel<float>& model, std::span<const Tensor<float>> images,
                                             std::optional<Index> max_len) {
  const Index limit = max_len.value_or(model.config().text.caption_budget());
  if (limit < 2 || limit > model.config().text.max_len) throw ConfigError("caption: max_len out of range");
  const auto batch = images.size();
  std::vector<std::vector<int>> out(batch);
  if (batch == 0) return out;
  Tape<float> tape;
  tape.set_grad_enabled(false);
  auto enc = model.encode_images(tape, images);
  std::vector<std::vector<int>> prefixes(batch, std::vector<int>{kBosId});
  std::vector<bool> done(batch, false);
  for (Index p = 1; p < limit; ++p) {
    if (std::all_of(done.begin(), done.end(), [](bool d) { return d; })) break;
    auto logits = model.prefix_logits(tape, enc, prefixes);
    const Matrix<float>& m = logits.matrix();
    for (std::size_t b = 0; b < batch; ++b) {
      // [PAD] and [BOS] are never emitted.
      const int tok = static_cast<int>(argmax_row(m, static_cast<Index>(b) * p + p - 1, kEosId));
      if (!done[b]) {
        out[b].push_back(tok);
        done[b] = tok == kEosId;
      }
      prefixes[b].push_back(tok);
    }
  }
  return out;
}

Vector<float> video_embed(const CoCaModel<float>& model, std::span<const Tensor<float>> frames, Index n_frames) {
  auto idx = video_frame_indices(static_cast<Index>(frames.size()), n_frames);
  std::vector<Tensor<float>> picked;
  for (Index i : idx) picked.push_back(frames[static_cast<std::size_t>(i)]);
  return mean_embedding(image_embeddings(model, picked));
}

FrozenEvalResult frozen_feature_eval(CoCaModel<float>& model, std::span<const Tensor<float>> train_images,
                                     const std::vector<int>& train_labels, std::span<const Tensor<float>> test_images,
                                     const std::vector<int>& test_labels, Index n_classes,
                                     const HeadTrainOptions& options) {
  if (train_images.size() != train_labels.size() || test_images.size() != test_labels.size()) {
    throw ShapeError("frozen eval: label count differs from image count");
  }
  if (train_images.empty()) throw Error("frozen eval: no training images");
  const auto& cfg = model.config();
  FrozenEvalResult r;
  r.encoder_checksum_before = parameter_checksum(model.parameters(), "encoder");
  r.model_checksum_before = parameter_checksum(model.parameters());

  const Index L = cfg.image.num_tokens(), d = cfg.image.d_model;
  auto encode_all = [&](std::span<const Tensor<float>> images) {
    Matrix<float> tokens(static_cast<Index>(images.size()) * L, d);
    FreezeGuard guard(model.parameters(), true);
    for_chunks(static_cast<Index>(images.size()), 64, [&](Index start, Index count) {
      Tape<float> tape;
      tape.set_grad_enabled(false);
      auto enc = model.encode_images(tape, images.subspan(static_cast<std::size_t>(start), static_cast<std::size_t>(count)));
      tokens.middleRows(start * L, count * L) = enc.tokens.matrix();
    });
    return tokens;
  };
  const Matrix<float> train_tokens = encode_all(train_images);
  const Matrix<float> test_tokens = encode_all(test_images);

  ParameterStore<float> head;
  Rng rng(options.seed);
  AttentionalPooler<float> pooler(head, "head.pooler", 1, d, cfg.image.n_heads, rng);
  Linear<float> classifier(head, "head.classifier", d, n_classes, rng);
  const auto initial = snapshot(head);
  AdamW<float> opt(head, AdamWOptions{0.9, 0.999, 1e-8, options.weight_decay});

  auto forward = [&](Tape<float>& tape, const Matrix<float>& tokens, Index count) {
    return classifier(tape, pooler.forward(tape, tape.constant(Tensor<float>::from_matrix(tokens)), count));
  };
  auto gather = [&](const Matrix<float>& all, const std::vector<Index>& idx) {
    Matrix<float> out(static_cast<Index>(idx.size()) * L, d);
    for (std::size_t i = 0; i < idx.size(); ++i) out.middleRows(static_cast<Index>(i) * L, L) = all.middleRows(idx[i] * L, L);
    return out;
  };

  IndexSampler sampler(static_cast<Index>(train_images.size()), options.seed + 1);
  const Index batch = std::min<Index>(options.batch_size, static_cast<Index>(train_images.size()));
  for (Index s = 0; s < options.steps; ++s) {
    auto idx = sampler.next(batch);
    std::vector<int> labels;
    for (Index i : idx) labels.push_back(train_labels[static_cast<std::size_t>(i)]);
    head.zero_grad();
    Tape<float> tape;
    auto logits = forward(tape, gather(train_tokens, idx), batch);
    auto loss = classification_loss(logits, label_distribution<float>(labels, n_classes, 0.0));
    tape.backward(loss);
    opt.step(options.lr);
  }

  auto evaluate = [&](const Matrix<float>& tokens, const std::vector<int>& labels) {
    if (labels.empty()) return 0.0;
    Tape<float> tape;
    tape.set_grad_enabled(false);
    return accuracy_of(forward(tape, tokens, static_cast<Index>(labels.size())).matrix(), labels);
  };
  r.train_accuracy = evaluate(train_tokens, train_labels);
  r.test_accuracy = evaluate(test_tokens, test_labels);

  for (const auto& [name, before] : initial) {
    if (head.at(name).matrix() != before) r.updated_head_tensors.push_back(name);
  }
  r.encoder_checksum_after = parameter_checksum(model.parameters(), "encoder");
  r.model_checksum_after = parameter_checksum(model.parameters());
  if (r.encoder_checksum_after != r.encoder_checksum_before || r.model_checksum_after != r.model_checksum_before) {
    throw Error("frozen eval: a frozen model parameter changed");
  }
  return r;
}

MultimodalHead::MultimodalHead(const CoCaConfig& config, Index n_classes, std::uint64_t seed) : n_classes_(n_classes) {
  if (n_classes < 2) throw ConfigError("multimodal head needs at least 2 classes");
  Rng rng(seed);
  pooler_ = AttentionalPooler<float>(store_, "head.pooler", 1, config.text.d_model, config.text.n_heads, rng);
  classifier_ = Linear<float>(store_, "head.classifier", config.text.d_model, n_classes, rng);
}

Var<float> MultimodalHead::logits(Tape<float>& tape, const CoCaModel<float>& model,
                                  std::span<const Tensor<float>> images, std::span<const TokenSequence> texts) const {
  auto image = model.encode_images(tape, images);
  auto text = model.encode_text_unimodal(tape, texts);
  auto hidden = model.multimodal_hidden(tape, text, image);
  std::vector<Index> lengths;
  for (const auto& t : texts) lengths.push_back(t.length);
  return classifier_(tape, pooler_.forward(tape, hidden, static_cast<Index>(texts.size()), lengths));
}

std::vector<PairExample> caption_match_pairs(const Dataset& data, const std::vector<std::string>& class_names,
                                             Rng& rng) {
  const auto cls = class_indices(data, class_names);
  std::vector<PairExample> out;
  const Index n = data.size();
  for (Index i = 0; i < n; ++i) {
    out.push_back({i, data.captions[static_cast<std::size_t>(i)], 1});
    Index j = i;
    for (int tries = 0; tries < 1000 && cls[static_cast<std::size_t>(j)] == cls[static_cast<std::size_t>(i)]; ++tries) {
      j = static_cast<Index>(rng.bounded(static_cast<std::uint32_t>(n)));
    }
    if (cls[static_cast<std::size_t>(j)] == cls[static_cast<std::size_t>(i)]) throw Error("caption pairs need two classes");
    out.push_back({i, data.captions[static_cast<std::size_t>(j)], 0});
  }
  return out;
}

MultimodalEvalResult multimodal_classify(CoCaModel<float>& model, MultimodalHead& head, const Vocab& vocab,
                                         std::span<const Tensor<float>> images, const std::vector<PairExample>& train,
                                         const std::vector<PairExample>& test, const HeadTrainOptions& options,
                                         bool finetune_backbone) {
  if (train.empty()) throw Error("multimodal eval: no training pairs");
  FreezeGuard guard(model.parameters(), !finetune_backbone);
  AdamW<float> head_opt(head.parameters(), AdamWOptions{0.9, 0.999, 1e-8, options.weight_decay});
  std::optional<AdamW<float>> backbone_opt;
  if (finetune_backbone) backbone_opt.emplace(model.parameters(), AdamWOptions{0.9, 0.999, 1e-8, options.weight_decay});

  auto run = [&](Tape<float>& tape, const std::vector<PairExample>& pairs, const std::vector<Index>& idx) {
    std::vector<Tensor<float>> ims;
    std::vector<std::string> caps;
    for (Index i : idx) {
      const auto& p = pairs[static_cast<std::size_t>(i)];
      ims.push_back(images[static_cast<std::size_t>(p.image)]);
      caps.push_back(p.caption);
    }
    auto seqs = tokenize_batch(vocab, caps, model.config());
    return head.logits(tape, model, ims, seqs);
  };

  IndexSampler sampler(static_cast<Index>(train.size()), options.seed + 7);
  const Index batch = std::min<Index>(options.batch_size, static_cast<Index>(train.size()));
  for (Index s = 0; s < options.steps; ++s) {
    auto idx = sampler.next(batch);
    std::vector<int> labels;
    for (Index i : idx) labels.push_back(train[static_cast<std::size_t>(i)].label);
    head.parameters().zero_grad();
    if (finetune_backbone) model.parameters().zero_grad();
    Tape<float> tape;
    auto loss = classification_loss(run(tape, train, idx), label_distribution<float>(labels, head.n_classes(), 0.0));
    tape.backward(loss);
    head_opt.step(options.lr);
    if (backbone_opt) backbone_opt->step(options.lr * 0.1);
  }

  auto evaluate = [&](const std::vector<PairExample>& pairs) {
    if (pairs.empty()) return 0.0;
    Index correct = 0;
    for_chunks(static_cast<Index>(pairs.size()), 64, [&](Index start, Index count) {
      std::vector<Index> idx(static_cast<std::size_t>(count));
      std::iota(idx.begin(), idx.end(), start);
      Tape<float> tape;
      tape.set_grad_enabled(false);
      Matrix<float> m = run(tape, pairs, idx).matrix();
      for (Index r = 0; r < count; ++r) correct += argmax_row(m, r) == pairs[static_cast<std::size_t>(start + r)].label;
    });
    return static_cast<double>(correct) / static_cast<double>(pairs.size());
  };
  MultimodalEvalResult r;
  r.train_accuracy = evaluate(train);
  r.test_accuracy = evaluate(test);
  return r;
}

}  // namespace coca
