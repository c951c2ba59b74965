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

#include "coca/train.hpp"

#include <map>

namespace coca {

// ---------------------------------------------------------------------------
// Embedding-level protocols. These take unit-row embedding matrices and are
// independent of the model.

// Argmax over classes of image_emb * class_embᵀ; ties go to the lower index.
std::vector<int> zero_shot_predict(const Matrix<float>& image_emb, const Matrix<float>& class_emb);

// Row-wise mean of unit rows, re-normalized.
Vector<float> mean_embedding(const Matrix<float>& rows);

struct RetrievalResult {
  std::map<Index, double> image_to_text;  // K -> recall
  std::map<Index, double> text_to_image;
};

// Rank of the paired item among all candidates by descending similarity;
// ties broken by candidate index. 0 is the best rank.
std::vector<Index> paired_ranks(const Matrix<float>& queries, const Matrix<float>& candidates);
// Recall@K for every K in `ks`; K must not exceed N.
RetrievalResult retrieval_recall(const Matrix<float>& image_emb, const Matrix<float>& text_emb,
                                 const std::vector<Index>& ks);
// {1, 5, 10} restricted to K <= n, plus `extra` if given.
std::vector<Index> default_recall_ks(Index n, std::optional<Index> extra = std::nullopt);

// Frame indices floor(i * F / n) for i < n.
std::vector<Index> video_frame_indices(Index n_available, Index n_frames);

// ---------------------------------------------------------------------------
// Model-level protocols (inference in 32-bit, gradients off).

Matrix<float> image_embeddings(const CoCaModel<float>& model, std::span<const Tensor<float>> images,
                               Index chunk = 64);
Matrix<float> text_embeddings(const CoCaModel<float>& model, const Vocab& vocab,
                              const std::vector<std::string>& texts, Index chunk = 64);
// Per class: mean of the normalized prompt embeddings, re-normalized.
Matrix<float> class_embeddings(const CoCaModel<float>& model, const Vocab& vocab,
                               const std::vector<std::string>& class_names,
                               const std::vector<std::string>& prompts);

struct ZeroShotResult {
  std::vector<int> predictions;
  double accuracy = 0;
};

ZeroShotResult zero_shot_classify(const CoCaModel<float>& model, const Vocab& vocab,
                                  std::span<const Tensor<float>> images, const std::vector<int>& labels,
                                  const std::vector<std::string>& class_names,
                                  const std::vector<std::string>& prompts = prompt_templates());

RetrievalResult retrieve(const CoCaModel<float>& model, const Vocab& vocab, std::span<const Tensor<float>> images,
                         const std::vector<std::string>& texts, std::optional<Index> k = std::nullopt);

// Greedy decoding from [BOS]. Each result holds the generated ids after
// [BOS], ending with [EOS] when one was produced within max_len positions.
std::vector<std::vector<int>> caption_greedy(const CoCaModel<float>& model, std::span<const Tensor<float>> images,
                                             std::optional<Index> max_len = std::nullopt);

Vector<float> video_embed(const CoCaModel<float>& model, std::span<const Tensor<float>> frames,
                          Index n_frames = 16);

// ---------------------------------------------------------------------------
// Synthetic-corpus protocols.

// Index of each example's first label in `class_names`.
std::vector<int> class_indices(const Dataset& data, const std::vector<std::string>& class_names);

// First held-out example of every distinct (class, color) pair.
std::vector<Index> retrieval_pair_indices(const SyntheticCorpus& corpus);

struct CorpusEvalResult {
  double zero_shot_accuracy = 0;
  RetrievalResult retrieval;
  Index retrieval_pairs = 0;
};

// Zero-shot classification over the whole test split and retrieval over one
// image-caption pair per (class, color).
CorpusEvalResult evaluate_corpus(const CoCaModel<float>& model, const Vocab& vocab, const SyntheticCorpus& corpus,
                                 std::optional<Index> k = std::nullopt);

// ---------------------------------------------------------------------------
// Heads trained on top of a pretrained model.

struct HeadTrainOptions {
  Index steps = 300;
  Index batch_size = 32;
  double lr = 3e-3;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
};

struct FrozenEvalResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
  std::uint32_t encoder_checksum_before = 0;
  std::uint32_t encoder_checksum_after = 0;
  std::uint32_t model_checksum_before = 0;
  std::uint32_t model_checksum_after = 0;
  std::vector<std::string> updated_head_tensors;
};

// Trains a fresh single-query pooler and a linear classifier on frozen
// encoder tokens. Throws Error if any model tensor changes.
FrozenEvalResult frozen_feature_eval(CoCaModel<float>& model, std::span<const Tensor<float>> train_images,
                                     const std::vector<int>& train_labels, std::span<const Tensor<float>> test_images,
                                     const std::vector<int>& test_labels, Index n_classes,
                                     const HeadTrainOptions& options = {});

// Single-query pooler over the multimodal decoder output (padding masked),
// then a linear classifier.
class MultimodalHead {
 public:
  MultimodalHead(const CoCaConfig& config, Index n_classes, std::uint64_t seed);

  Var<float> logits(Tape<float>& tape, const CoCaModel<float>& model, std::span<const Tensor<float>> images,
                    std::span<const TokenSequence> texts) const;

  ParameterStore<float>& parameters() { return store_; }
  Index n_classes() const { return n_classes_; }

 private:
  ParameterStore<float> store_;
  AttentionalPooler<float> pooler_;
  Linear<float> classifier_;
  Index n_classes_;
};

struct PairExample {
  Index image = 0;       // index into the image list
  std::string caption;
  int label = 0;
};

// "Does this caption describe this image": each image paired with its own
// caption (label 1) and with a caption of another class (label 0).
std::vector<PairExample> caption_match_pairs(const Dataset& data, const std::vector<std::string>& class_names,
                                             Rng& rng);

struct MultimodalEvalResult {
  double train_accuracy = 0;
  double test_accuracy = 0;
};

MultimodalEvalResult multimodal_classify(CoCaModel<float>& model, MultimodalHead& head, const Vocab& vocab,
                                         std::span<const Tensor<float>> images,
                                         const std::vector<PairExample>& train,
                                         const std::vector<PairExample>& test, const HeadTrainOptions& options,
                                         bool finetune_backbone = false);

}  // namespace coca
