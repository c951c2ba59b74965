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
#include "coca/objectives.hpp"

#include <cmath>

namespace coca {

void LossWeights::validate() const {
  if (lambda_con < 0 || lambda_cap < 0) throw ConfigError("loss weights must be nonnegative");
  if (lambda_con == 0 && lambda_cap == 0) throw ConfigError("loss weights cannot both be zero");
}

namespace {

template <typename S>
void require_unit_rows(const Matrix<S>& m, const char* what) {
  const double tol = std::is_same_v<S, float> ? 1e-4 : 1e-8;
  for (Index r = 0; r < m.rows(); ++r) {
    if (std::abs(static_cast<double>(m.row(r).norm()) - 1.0) > tol) {
      throw Error(std::string("contrastive_loss: ") + what + " row " + std::to_string(r) +
                  " is not unit-norm");
    }
  }
}

}  // namespace

template <typename S>
Var<S> contrastive_loss(Var<S> image_embeds, Var<S> text_embeds, Var<S> log_sigma) {
  const Index n = image_embeds.rows();
  if (n < 1 || text_embeds.rows() != n || text_embeds.cols() != image_embeds.cols()) {
    throw ShapeError("contrastive_loss: embedding matrices must both be [N, d], got " +
                     shape_str(image_embeds.shape()) + " and " + shape_str(text_embeds.shape()));
  }
  require_unit_rows(image_embeds.matrix(), "image");
  require_unit_rows(text_embeds.matrix(), "text");
  Var<S> inv_sigma = exp(scale(log_sigma, S(-1)));
  Var<S> logits = mul(matmul(image_embeds, transpose(text_embeds)), inv_sigma);
  std::vector<int> diag(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) diag[static_cast<std::size_t>(i)] = static_cast<int>(i);
  Var<S> i2t = cross_entropy(logits, std::span<const int>(diag), Reduction::kSum);
  Var<S> t2i = cross_entropy(transpose(logits), std::span<const int>(diag), Reduction::kSum);
  return scale(add(i2t, t2i), S(1) / S(n));
}

std::vector<int> caption_targets(std::span<const TokenSequence> texts, Index seq_len) {
  std::vector<int> targets(texts.size() * static_cast<std::size_t>(seq_len), -1);
  for (std::size_t b = 0; b < texts.size(); ++b) {
    const auto& seq = texts[b];
    if (seq.length > seq_len) throw ShapeError("caption longer than the decoded sequence");
    for (Index t = 0; t + 1 < seq.length; ++t) {
      targets[b * static_cast<std::size_t>(seq_len) + static_cast<std::size_t>(t)] =
          seq.ids[static_cast<std::size_t>(t + 1)];
    }
  }
  return targets;
}

template <typename S>
Var<S> captioning_loss(Var<S> logits, std::span<const TokenSequence> texts, Index seq_len) {
  if (texts.empty()) throw ShapeError("captioning_loss: empty batch");
  auto targets = caption_targets(texts, seq_len);
  Var<S> total = cross_entropy(logits, std::span<const int>(targets), Reduction::kSum);
  return scale(total, S(1) / S(texts.size()));
}

template <typename S>
CocaLoss<S> coca_loss(const BatchOutputs<S>& outputs, std::span<const TokenSequence> texts,
                      const LossWeights& weights, Var<S> log_sigma) {
  weights.validate();
  CocaLoss<S> loss;
  loss.con = contrastive_loss(outputs.image.contrastive_embed, outputs.text.cls_embed, log_sigma);
  loss.cap = captioning_loss(outputs.caption_logits, texts, outputs.text.seq_len);
  loss.total = add(scale(loss.con, static_cast<S>(weights.lambda_con)),
                   scale(loss.cap, static_cast<S>(weights.lambda_cap)));
  return loss;
}

template <typename S>
Var<S> classification_loss(Var<S> logits, const Tensor<S>& distribution) {
  if (distribution.rows() != logits.rows() || distribution.cols() != logits.cols()) {
    throw ShapeError("classification_loss: distribution " + shape_str(distribution.shape()) +
                     " does not match logits " + shape_str(logits.shape()));
  }
  const double tol = std::is_same_v<S, float> ? 1e-5 : 1e-10;
  const auto& p = distribution.matrix();
  for (Index r = 0; r < p.rows(); ++r) {
    if ((p.row(r).array() < S(0)).any() || std::abs(static_cast<double>(p.row(r).sum()) - 1.0) > tol) {
      throw Error("classification_loss: label distribution row " + std::to_string(r) +
                  " is not normalized");
    }
  }
  Tape<S>& tape = *logits.tape;
  Var<S> weighted = mul(log_softmax(logits), tape.constant(distribution));
  return scale(sum(weighted), S(-1) / S(p.rows()));
}

template <typename S>
Tensor<S> label_distribution(std::span<const int> labels, Index n_classes, double smoothing) {
  if (smoothing < 0 || smoothing >= 1) throw Error("label smoothing must be in [0, 1)");
  Tensor<S> out(Shape{static_cast<Index>(labels.size()), n_classes});
  auto& m = out.matrix();
  m.setConstant(static_cast<S>(smoothing / static_cast<double>(n_classes)));
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= n_classes) throw Error("label out of range");
    m(static_cast<Index>(i), labels[i]) += static_cast<S>(1.0 - smoothing);
  }
  return out;
}

#define COCA_INSTANTIATE_OBJECTIVES(S)                                                         \
  template Var<S> contrastive_loss(Var<S>, Var<S>, Var<S>);                                    \
  template Var<S> captioning_loss(Var<S>, std::span<const TokenSequence>, Index);              \
  template CocaLoss<S> coca_loss(const BatchOutputs<S>&, std::span<const TokenSequence>,        \
                                 const LossWeights&, Var<S>);                                  \
  template Var<S> classification_loss(Var<S>, const Tensor<S>&);                               \
  template Tensor<S> label_distribution(std::span<const int>, Index, double);

COCA_INSTANTIATE_OBJECTIVES(float)
COCA_INSTANTIATE_OBJECTIVES(double)

#undef COCA_INSTANTIATE_OBJECTIVES

}  // namespace coca
