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

#include "test_helpers.hpp"

#include <algorithm>
#include <numeric>

using namespace coca;

namespace {

Matrix<float> random_unit_matrix(Index n, Index d, Rng& rng) {
  Matrix<float> m(n, d);
  for (Index i = 0; i < n; ++i) {
    for (Index j = 0; j < d; ++j) m(i, j) = static_cast<float>(rng.normal());
  }
  m.rowwise().normalize();
  return m;
}

// Enumerates every (image, class) pair and keeps the first strict maximum.
std::vector<int> zero_shot_oracle(const Matrix<float>& img, const Matrix<float>& cls) {
  std::vector<int> out;
  for (Index i = 0; i < img.rows(); ++i) {
    int best = 0;
    float best_score = img.row(i).dot(cls.row(0));
    for (Index c = 1; c < cls.rows(); ++c) {
      const float s = img.row(i).dot(cls.row(c));
      if (s > best_score) {
        best_score = s;
        best = static_cast<int>(c);
      }
    }
    out.push_back(best);
  }
  return out;
}

// Full descending sort of the candidates; the rank is the paired item's position.
std::vector<Index> sort_rank_oracle(const Matrix<float>& q, const Matrix<float>& c) {
  std::vector<Index> ranks;
  for (Index i = 0; i < q.rows(); ++i) {
    std::vector<Index> order(static_cast<std::size_t>(c.rows()));
    std::iota(order.begin(), order.end(), Index{0});
    std::stable_sort(order.begin(), order.end(), [&](Index a, Index b) {
      return q.row(i).dot(c.row(a)) > q.row(i).dot(c.row(b));
    });
    ranks.push_back(std::find(order.begin(), order.end(), i) - order.begin());
  }
  return ranks;
}

std::vector<Tensor<float>> random_images(const CoCaConfig& cfg, Index n, Rng& rng) {
  std::vector<Tensor<float>> out;
  for (Index i = 0; i < n; ++i) {
    Tensor<float> t(Shape{cfg.image.resolution, cfg.image.resolution, cfg.image.channels});
    for (float& v : t.values()) v = static_cast<float>(rng.uniform());
    out.push_back(t);
  }
  return out;
}

Vocab micro_vocab() { return Vocab::build({"red bar", "blue dot", "a photo of the"}); }

}  // namespace

TEST_CASE("zero-shot prediction matches the pairwise oracle") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + static_cast<Index>(rng.bounded(32));
    const Index c = 1 + static_cast<Index>(rng.bounded(10));
    auto img = random_unit_matrix(n, 6, rng);
    auto cls = random_unit_matrix(c, 6, rng);
    auto pred = zero_shot_predict(img, cls);
    CHECK(pred == zero_shot_oracle(img, cls));
    Matrix<float> scaled = cls * 3.5f;
    CHECK(zero_shot_predict(img, scaled) == pred);
  }
}

TEST_CASE("zero-shot edge cases") {
  Rng rng(4);
  auto img = random_unit_matrix(5, 4, rng);
  auto one = random_unit_matrix(1, 4, rng);
  CHECK(zero_shot_predict(img, one) == std::vector<int>(5, 0));

  Matrix<float> tied(2, 4);
  tied.row(0) = one.row(0);
  tied.row(1) = one.row(0);
  CHECK(zero_shot_predict(one, tied) == std::vector<int>{0});

  CHECK_THROWS_AS(zero_shot_predict(img, Matrix<float>(0, 4)), Error);
  CHECK_THROWS_AS(zero_shot_predict(img, random_unit_matrix(2, 3, rng)), ShapeError);
}

TEST_CASE("retrieval ranks match the full-sort oracle") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    auto img = random_unit_matrix(16, 5, rng);
    auto txt = random_unit_matrix(16, 5, rng);
    CHECK(paired_ranks(img, txt) == sort_rank_oracle(img, txt));
    CHECK(paired_ranks(txt, img) == sort_rank_oracle(txt, img));

    auto r = retrieval_recall(img, txt, {1, 2, 5, 10, 16});
    auto oracle = sort_rank_oracle(img, txt);
    for (auto [k, recall] : r.image_to_text) {
      const auto hits = std::count_if(oracle.begin(), oracle.end(), [&](Index x) { return x < k; });
      CHECK(recall == static_cast<double>(hits) / 16.0);
    }
    double prev = 0;
    for (auto [k, recall] : r.text_to_image) {
      CHECK(recall >= prev);
      prev = recall;
    }
    CHECK(r.image_to_text.at(16) == 1.0);
    CHECK(r.text_to_image.at(16) == 1.0);
  }
}

TEST_CASE("retrieval edge cases") {
  Rng rng(6);
  auto a = random_unit_matrix(1, 4, rng);
  auto b = random_unit_matrix(1, 4, rng);
  auto r = retrieval_recall(a, b, {1});
  CHECK(r.image_to_text.at(1) == 1.0);
  CHECK(r.text_to_image.at(1) == 1.0);

  // Equal scores rank the lower index first.
  Matrix<float> same(3, 4);
  same.rowwise() = a.row(0);
  CHECK(paired_ranks(same, same) == std::vector<Index>{0, 1, 2});

  CHECK_THROWS_AS(retrieval_recall(a, b, {2}), ConfigError);
  CHECK_THROWS_AS(paired_ranks(a, random_unit_matrix(2, 4, rng)), ShapeError);
  CHECK(default_recall_ks(3) == std::vector<Index>{1});
  CHECK(default_recall_ks(12) == std::vector<Index>{1, 5, 10});
  CHECK(default_recall_ks(12, 7) == std::vector<Index>{1, 5, 7, 10});
  CHECK(default_recall_ks(12, 5) == std::vector<Index>{1, 5, 10});
  CHECK_THROWS_AS(default_recall_ks(4, 5), ConfigError);
}

TEST_CASE("video frame sampling") {
  CHECK(video_frame_indices(32, 4) == std::vector<Index>{0, 8, 16, 24});
  CHECK(video_frame_indices(2, 4) == std::vector<Index>{0, 0, 1, 1});
  CHECK(video_frame_indices(1, 3) == std::vector<Index>{0, 0, 0});
  CHECK(video_frame_indices(16, 16).back() == 15);
  CHECK_THROWS_AS(video_frame_indices(0, 16), Error);
  CHECK_THROWS_AS(video_frame_indices(3, 0), ConfigError);
}

TEST_CASE("mean embedding") {
  Rng rng(7);
  auto m = random_unit_matrix(6, 5, rng);
  auto v = mean_embedding(m);
  CHECK(std::abs(v.norm() - 1.0f) < 1e-6f);
  Vector<float> manual = Vector<float>::Zero(5);
  for (Index i = 0; i < 6; ++i) manual += m.row(i).transpose();
  manual.normalize();
  CHECK((v - manual).cwiseAbs().maxCoeff() < 1e-6f);
  CHECK_THROWS_AS(mean_embedding(Matrix<float>(0, 5)), Error);
}

TEST_CASE("model embeddings are chunk invariant and unit norm") {
  const auto cfg = preset("coca-micro");
  CoCaModel<float> model(cfg, 1);
  Rng rng(8);
  auto images = random_images(cfg, 5, rng);
  auto whole = image_embeddings(model, images);
  auto chunked = image_embeddings(model, images, 2);
  CHECK((whole - chunked).cwiseAbs().maxCoeff() < 1e-5f);
  for (Index i = 0; i < whole.rows(); ++i) CHECK(std::abs(whole.row(i).norm() - 1.0f) < 1e-5f);

  auto vocab = micro_vocab();
  auto t1 = text_embeddings(model, vocab, {"red bar", "blue dot", "red dot"});
  auto t2 = text_embeddings(model, vocab, {"red bar", "blue dot", "red dot"}, 1);
  CHECK((t1 - t2).cwiseAbs().maxCoeff() < 1e-5f);
  CHECK_THROWS_AS(image_embeddings(model, images, 0), Error);
}

TEST_CASE("zero_shot_classify matches the oracle over model embeddings") {
  const auto cfg = preset("coca-micro");
  CoCaModel<float> model(cfg, 2);
  auto vocab = micro_vocab();
  Rng rng(9);
  auto images = random_images(cfg, 12, rng);
  std::vector<std::string> classes = {"bar", "dot", "red"};
  std::vector<std::string> prompts = {"a photo of the {}", "{}"};
  std::vector<int> labels(12, 1);
  auto r = zero_shot_classify(model, vocab, images, labels, classes, prompts);

  Matrix<float> cls(3, cfg.embed_dim);
  for (Index c = 0; c < 3; ++c) {
    Vector<float> acc = Vector<float>::Zero(cfg.embed_dim);
    for (const auto& p : prompts) {
      acc += text_embeddings(model, vocab, {apply_template(p, classes[static_cast<std::size_t>(c)])}).row(0).transpose();
    }
    cls.row(c) = acc.normalized().transpose();
  }
  Matrix<float> img(12, cfg.embed_dim);
  for (Index i = 0; i < 12; ++i) img.row(i) = image_embeddings(model, std::span(images).subspan(static_cast<std::size_t>(i), 1));
  CHECK(r.predictions == zero_shot_oracle(img, cls));
  const auto correct = std::count(r.predictions.begin(), r.predictions.end(), 1);
  CHECK(r.accuracy == static_cast<double>(correct) / 12.0);

  auto single = zero_shot_classify(model, vocab, images, std::vector<int>(12, 0), {"bar"}, prompts);
  CHECK(single.accuracy == 1.0);
  CHECK_THROWS_AS(zero_shot_classify(model, vocab, images, {0}, classes, prompts), ShapeError);
  CHECK_THROWS_AS(zero_shot_classify(model, vocab, images, labels, classes, {}), ConfigError);
}

TEST_CASE("retrieve runs end to end and checks K") {
  const auto cfg = preset("coca-micro");
  CoCaModel<float> model(cfg, 3);
  auto vocab = micro_vocab();
  Rng rng(10);
  auto images = random_images(cfg, 4, rng);
  std::vector<std::string> texts = {"red bar", "blue dot", "red dot", "blue bar"};
  auto r = retrieve(model, vocab, images, texts, 4);
  CHECK(r.image_to_text.size() == 2);
  CHECK(r.image_to_text.at(4) == 1.0);
  auto oracle = retrieval_recall(image_embeddings(model, images), text_embeddings(model, vocab, texts), {1, 4});
  CHECK(r.image_to_text == oracle.image_to_text);
  CHECK(r.text_to_image == oracle.text_to_image);
  CHECK_THROWS_AS(retrieve(model, vocab, images, texts, 5), ConfigError);
  CHECK_THROWS_AS(retrieve(model, vocab, images, {"red bar"}), ShapeError);
}

TEST_CASE("video_embed matches the explicit frame average") {
  const auto cfg = preset("coca-micro");
  CoCaModel<float> model(cfg, 4);
  Rng rng(11);
  auto frames = random_images(cfg, 5, rng);
  auto v = video_embed(model, frames, 16);
  CHECK(std::abs(v.norm() - 1.0f) < 1e-6f);

  Vector<float> acc = Vector<float>::Zero(cfg.embed_dim);
  for (Index i = 0; i < 16; ++i) {
    const auto f = static_cast<std::size_t>(i * 5 / 16);
    acc += image_embeddings(model, std::span(frames).subspan(f, 1)).row(0).transpose();
  }
  CHECK((v - acc.normalized()).cwiseAbs().maxCoeff() < 1e-5f);

  std::vector<Tensor<float>> same(7, frames[2]);
  const Vector<float> single = image_embeddings(model, std::span(frames).subspan(2, 1)).row(0).transpose();
  CHECK((video_embed(model, same) - single).cwiseAbs().maxCoeff() < 1e-5f);
  CHECK_THROWS_AS(video_embed(model, std::vector<Tensor<float>>{}), Error);
}

TEST_CASE("greedy captions never hold PAD or BOS and end at the first EOS") {
  const auto cfg = preset("coca-micro");
  CoCaModel<float> model(cfg, 5);
  Rng rng(12);
  auto images = random_images(cfg, 6, rng);
  auto out = caption_greedy(model, images);
  REQUIRE(out.size() == 6);
  for (const auto& c : out) {
    CHECK(static_cast<Index>(c.size()) <= cfg.text.caption_budget() - 1);
    for (std::size_t i = 0; i < c.size(); ++i) {
      CHECK(c[i] != kPadId);
      CHECK(c[i] != kBosId);
      if (c[i] == kEosId) CHECK(i + 1 == c.size());
    }
  }
  CHECK(caption_greedy(model, images) == out);

  // A dominant [EOS] bias ends every caption immediately.
  model.parameters().at("multimodal.lm_head.bias").matrix()(0, kEosId) = 1e3f;
  for (const auto& c : caption_greedy(model, images)) CHECK(c == std::vector<int>{kEosId});

  // Without [EOS] the caption runs to the length cap.
  model.parameters().at("multimodal.lm_head.bias").matrix()(0, kEosId) = -1e3f;
  for (const auto& c : caption_greedy(model, images, 5)) CHECK(c.size() == 4);
  CHECK_THROWS_AS(caption_greedy(model, images, 1), ConfigError);
  CHECK_THROWS_AS(caption_greedy(model, images, cfg.text.max_len + 1), ConfigError);
}

TEST_CASE("frozen feature eval leaves the model untouched") {
  const auto cfg = preset("coca-micro");
  CoCaModel<float> model(cfg, 6);
  Rng rng(13);
  auto train = random_images(cfg, 12, rng);
  auto test = random_images(cfg, 4, rng);
  std::vector<int> train_labels, test_labels;
  for (int i = 0; i < 12; ++i) train_labels.push_back(i % 3);
  for (int i = 0; i < 4; ++i) test_labels.push_back(i % 3);
  HeadTrainOptions options;
  options.steps = 20;
  options.batch_size = 6;
  auto r = frozen_feature_eval(model, train, train_labels, test, test_labels, 3, options);
  CHECK(r.encoder_checksum_before == r.encoder_checksum_after);
  CHECK(r.model_checksum_before == r.model_checksum_after);
  CHECK(r.model_checksum_after == parameter_checksum(model.parameters()));
  REQUIRE(!r.updated_head_tensors.empty());
  for (const auto& name : r.updated_head_tensors) CHECK(name.rfind("head.", 0) == 0);
  CHECK(std::find(r.updated_head_tensors.begin(), r.updated_head_tensors.end(), "head.pooler.queries") !=
        r.updated_head_tensors.end());
  for (const auto& e : model.parameters().entries()) CHECK(e.tensor->requires_grad());
  CHECK_THROWS_AS(frozen_feature_eval(model, train, test_labels, test, test_labels, 3, options), ShapeError);
}

TEST_CASE("multimodal head logits depend on both inputs") {
  const auto cfg = preset("coca-micro");
  CoCaModel<float> model(cfg, 7);
  auto vocab = micro_vocab();
  MultimodalHead head(cfg, 3, 1);
  Rng rng(14);
  auto images = random_images(cfg, 2, rng);
  auto texts = tokenize_batch(vocab, {"red bar", "blue dot"}, cfg);
  Tape<float> tape;
  tape.set_grad_enabled(false);
  auto logits = head.logits(tape, model, images, texts);
  CHECK(logits.shape() == Shape{2, 3});

  std::vector<TokenSequence> swapped = {texts[1], texts[0]};
  auto other = head.logits(tape, model, images, swapped);
  CHECK((other.matrix() - logits.matrix()).cwiseAbs().maxCoeff() > 1e-6f);
  CHECK_THROWS_AS(MultimodalHead(cfg, 1, 1), ConfigError);
}

TEST_CASE("caption match pairs") {
  SyntheticSpec spec;
  spec.per_class = 3;
  spec.height = spec.width = 8;
  auto corpus = generate_synthetic(spec, 2);
  Rng rng(15);
  auto pairs = caption_match_pairs(corpus.annotated, corpus.class_names, rng);
  REQUIRE(pairs.size() == 2 * static_cast<std::size_t>(corpus.annotated.size()));
  for (std::size_t i = 0; i < pairs.size(); i += 2) {
    const auto& pos = pairs[i];
    const auto& neg = pairs[i + 1];
    CHECK(pos.label == 1);
    CHECK(neg.label == 0);
    CHECK(pos.image == neg.image);
    CHECK(pos.caption == corpus.annotated.captions[static_cast<std::size_t>(pos.image)]);
    const auto& cls = corpus.annotated.labels[static_cast<std::size_t>(pos.image)][0];
    auto words = split_words(normalize_text(neg.caption));
    CHECK(std::find(words.begin(), words.end(), cls) == words.end());
  }
}

TEST_CASE("multimodal classify trains only the head when frozen") {
  const auto cfg = preset("coca-micro");
  CoCaModel<float> model(cfg, 8);
  auto vocab = micro_vocab();
  MultimodalHead head(cfg, 2, 2);
  Rng rng(16);
  auto images = random_images(cfg, 4, rng);
  std::vector<PairExample> pairs = {{0, "red bar", 1}, {0, "blue dot", 0}, {1, "blue dot", 1}, {1, "red bar", 0}};
  const auto before = parameter_checksum(model.parameters());
  const auto head_before = parameter_checksum(head.parameters());
  HeadTrainOptions options;
  options.steps = 5;
  options.batch_size = 4;
  auto r = multimodal_classify(model, head, vocab, images, pairs, pairs, options);
  CHECK(parameter_checksum(model.parameters()) == before);
  CHECK(parameter_checksum(head.parameters()) != head_before);
  CHECK(r.train_accuracy == r.test_accuracy);

  multimodal_classify(model, head, vocab, images, pairs, pairs, options, true);
  CHECK(parameter_checksum(model.parameters()) != before);
}
