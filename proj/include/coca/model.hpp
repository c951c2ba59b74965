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

#include "coca/config.hpp"
#include "coca/nn.hpp"
#include "coca/tokens.hpp"

#include <map>
#include <span>

namespace coca {

template <typename S>
struct ImageEncoding {
  Var<S> tokens;             // encoder output [B*L, d_img]
  Var<S> gen_tokens;         // cross-attention source [B*Lk, d_text], layer-normed once
  Var<S> contrastive_embed;  // [B, embed_dim], unit rows
  Index batch = 0;
  Index gen_length = 0;      // Lk
};

template <typename S>
struct TextEncoding {
  Var<S> sequence;   // unimodal decoder output [B*T, d_text]
  Var<S> cls_embed;  // [B, embed_dim], unit rows
  Index batch = 0;
  Index seq_len = 0;
};

template <typename S>
struct BatchOutputs {
  ImageEncoding<S> image;
  TextEncoding<S> text;
  Var<S> caption_logits;  // [B*T, vocab]; row t scores token t+1
};

// Single-example view of a forward pass.
template <typename S>
struct ForwardOutputs {
  Tensor<S> image_embed;            // [embed_dim]
  Tensor<S> text_embed;             // [embed_dim]
  Tensor<S> caption_logits;         // [T, vocab]
  Tensor<S> pooled_caption_tokens;  // [n_query_gen, d]
};

struct ParameterCensus {
  std::map<std::string, Index> groups;  // encoder, unimodal, multimodal, poolers, embeddings, temperature
  Index total = 0;
};

// Patch tokens of one [H, W, C] image: [(H/p)*(W/p), p*p*C], patches in
// row-major order, each flattened (row, col, channel).
template <typename S>
Matrix<S> patchify(const Tensor<S>& image, Index patch_size);

template <typename S>
class CoCaModel {
 public:
  CoCaModel(const CoCaConfig& config, std::uint64_t seed);
  CoCaModel(const CoCaModel&) = delete;
  CoCaModel& operator=(const CoCaModel&) = delete;
  CoCaModel(CoCaModel&&) = default;

  const CoCaConfig& config() const { return config_; }
  ParameterStore<S>& parameters() { return store_; }
  const ParameterStore<S>& parameters() const { return store_; }

  // images: [H, W, C] each, H = W = image.resolution.
  ImageEncoding<S> encode_images(Tape<S>& tape, std::span<const Tensor<S>> images) const;
  // Appends the [CLS] slot(s) right after each sequence's last real token.
  TextEncoding<S> encode_text_unimodal(Tape<S>& tape, std::span<const TokenSequence> texts) const;
  // Multimodal stack over a unimodal sequence, then the LM head.
  Var<S> decode_multimodal(Tape<S>& tape, const TextEncoding<S>& text,
                           const ImageEncoding<S>& image) const;
  // Multimodal stack output after the final layer norm, before the LM head.
  Var<S> multimodal_hidden(Tape<S>& tape, const TextEncoding<S>& text,
                           const ImageEncoding<S>& image) const;
  // One unimodal pass feeds both the [CLS] embedding and the multimodal stack.
  BatchOutputs<S> forward(Tape<S>& tape, std::span<const Tensor<S>> images,
                          std::span<const TokenSequence> texts) const;

  // Logits [B*P, vocab] for B prefixes of equal length P (no [CLS]).
  Var<S> prefix_logits(Tape<S>& tape, const ImageEncoding<S>& image,
                       std::span<const std::vector<int>> prefixes) const;

  Var<S> log_temperature(Tape<S>& tape) const { return tape.param(*log_temperature_); }
  Tensor<S>& log_temperature_tensor() const { return *log_temperature_; }

  // Sequences run through the unimodal stack since construction.
  std::size_t unimodal_executions() const { return unimodal_executions_; }
  Index cls_token_id(Index i) const { return config_.text.vocab_size + i; }

  const std::vector<TransformerLayer<S>>& unimodal_layers() const { return unimodal_; }
  const std::vector<TransformerLayer<S>>& multimodal_layers() const { return multimodal_; }

 private:
  Var<S> run_unimodal(Tape<S>& tape, std::span<const int> ids, Index batch, Index seq_len) const;
  Var<S> run_multimodal(Tape<S>& tape, Var<S> x, const ImageEncoding<S>& image, Index batch) const;

  CoCaConfig config_;
  ParameterStore<S> store_;

  Linear<S> patch_embed_;
  Tensor<S>* image_pos_ = nullptr;
  std::vector<TransformerLayer<S>> encoder_;
  LayerNorm<S> encoder_ln_;

  std::optional<AttentionalPooler<S>> gen_pooler_;
  AttentionalPooler<S> con_pooler_;
  LayerNorm<S> cross_source_ln_;
  std::optional<Linear<S>> cross_source_proj_;
  Linear<S> image_proj_;

  Tensor<S>* token_table_ = nullptr;
  Tensor<S>* cls_table_ = nullptr;
  Tensor<S>* text_pos_ = nullptr;
  std::vector<TransformerLayer<S>> unimodal_;
  LayerNorm<S> text_ln_;
  Linear<S> text_proj_;
  std::vector<TransformerLayer<S>> multimodal_;
  LayerNorm<S> decoder_ln_;
  Linear<S> lm_head_;

  Tensor<S>* log_temperature_ = nullptr;

  mutable std::size_t unimodal_executions_ = 0;
};

// Parameter group of a parameter name (its first dotted component).
std::string parameter_group(const std::string& name);

template <typename S>
ParameterCensus count_parameters(const CoCaModel<S>& model);

template <typename S>
ForwardOutputs<S> forward(const CoCaModel<S>& model, const Tensor<S>& image, const TokenSequence& tokens);

extern template class CoCaModel<float>;
extern template class CoCaModel<double>;

}  // namespace coca
