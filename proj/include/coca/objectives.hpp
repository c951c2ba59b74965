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

#include "coca/model.hpp"

namespace coca {

struct LossWeights {
  double lambda_con = 1.0;
  double lambda_cap = 2.0;

  // Throws ConfigError when negative or both zero.
  void validate() const;
};

// Symmetric batch InfoNCE over unit-norm rows: mean over the batch of the
// image-to-text plus text-to-image cross-entropies of dot(x_i, y_j) / sigma,
// sigma = exp(log_sigma).
template <typename S>
Var<S> contrastive_loss(Var<S> image_embeds, Var<S> text_embeds, Var<S> log_sigma);

// Teacher-forced caption NLL. Row b*T + t of `logits` scores token t+1 of
// texts[b]; targets run through [EOS], and padding/[CLS] rows are ignored.
// Summed per example, then averaged over the batch.
template <typename S>
Var<S> captioning_loss(Var<S> logits, std::span<const TokenSequence> texts, Index seq_len);

// Shifted targets for captioning_loss, -1 where ignored.
std::vector<int> caption_targets(std::span<const TokenSequence> texts, Index seq_len);

template <typename S>
struct CocaLoss {
  Var<S> total;
  Var<S> con;
  Var<S> cap;
};

template <typename S>
CocaLoss<S> coca_loss(const BatchOutputs<S>& outputs, std::span<const TokenSequence> texts,
                      const LossWeights& weights, Var<S> log_sigma);

// -sum_y p(y) log softmax(logits)_y per row, averaged over rows. Each row of
// `distribution` must sum to one.
template <typename S>
Var<S> classification_loss(Var<S> logits, const Tensor<S>& distribution);

// One-hot (smoothing = 0) or label-smoothed target distributions.
template <typename S>
Tensor<S> label_distribution(std::span<const int> labels, Index n_classes, double smoothing = 0.0);

}  // namespace coca
