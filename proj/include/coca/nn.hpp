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

#include "coca/ops.hpp"
#include "coca/rng.hpp"

#include <memory>
#include <optional>
#include <string>

namespace coca {

// ---------------------------------------------------------------------------
// Parameters

enum class Init { kZeros, kOnes, kNormal };

// Owns every trainable tensor of a model under a hierarchical name. Tensor
// addresses are stable for the lifetime of the store, so modules keep raw
// pointers into it.
template <typename S>
class ParameterStore {
 public:
  struct Entry {
    std::string name;
    std::unique_ptr<Tensor<S>> tensor;
  };

  // Normal init draws N(0, init_std^2).
  Tensor<S>& create(const std::string& name, Shape shape, Init init, Rng& rng, double init_std = 0.02);

  Tensor<S>* find(const std::string& name);
  const Tensor<S>* find(const std::string& name) const;
  Tensor<S>& at(const std::string& name);

  std::vector<Entry>& entries() { return entries_; }
  const std::vector<Entry>& entries() const { return entries_; }
  Index total_size() const;

  void zero_grad();
  // Frozen tensors do not require grad; the tape treats them as constants.
  void set_frozen(const std::string& prefix, bool frozen);

 private:
  std::vector<Entry> entries_;
};

extern template class ParameterStore<float>;
extern template class ParameterStore<double>;

// ---------------------------------------------------------------------------
// Attention

struct AttentionMask {
  enum class Kind { kNone, kCausal, kPadding, kCausalPadding };

  Kind kind = Kind::kNone;
  // Per batch item: keys at positions >= valid_lengths[b] are masked.
  std::vector<Index> valid_lengths;

  static AttentionMask none() { return {}; }
  static AttentionMask causal() { return {Kind::kCausal, {}}; }
  static AttentionMask padding(std::vector<Index> lengths) {
    return {Kind::kPadding, std::move(lengths)};
  }
  static AttentionMask causal_padding(std::vector<Index> lengths) {
    return {Kind::kCausalPadding, std::move(lengths)};
  }

  bool is_causal() const { return kind == Kind::kCausal || kind == Kind::kCausalPadding; }
  bool has_padding() const { return kind == Kind::kPadding || kind == Kind::kCausalPadding; }
};

// Value written into masked logits before the softmax.
inline constexpr double kMaskedLogit = -1e9;

// Scaled dot-product attention over `batch` equal-length segments of already
// projected q [batch*Lq, d], k and v [batch*Lk, d], split into `n_heads`.
template <typename S>
Var<S> multi_head_attention(Var<S> q, Var<S> k, Var<S> v, Index n_heads, const AttentionMask& mask,
                            Index batch = 1);

// Attention probabilities (batch-major, then head) for inspection in tests.
template <typename S>
std::vector<Matrix<S>> attention_probabilities(const Matrix<S>& q, const Matrix<S>& k, Index n_heads,
                                               const AttentionMask& mask, Index batch = 1);

// ---------------------------------------------------------------------------
// Layers

template <typename S>
struct Linear {
  Tensor<S>* weight = nullptr;  // [in, out]
  Tensor<S>* bias = nullptr;    // [out], optional

  Linear() = default;
  Linear(ParameterStore<S>& store, const std::string& name, Index in, Index out, Rng& rng,
         bool with_bias = true);
  Var<S> operator()(Tape<S>& tape, Var<S> x) const;
};

template <typename S>
struct LayerNorm {
  Tensor<S>* gain = nullptr;
  Tensor<S>* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParameterStore<S>& store, const std::string& name, Index dim, Rng& rng);
  Var<S> operator()(Tape<S>& tape, Var<S> x) const;
};

template <typename S>
class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<S>& store, const std::string& name, Index d_model, Index n_heads,
                     Rng& rng);

  // queries [batch*Lq, d]; keys_values [batch*Lk, d]. Output has the query shape.
  Var<S> forward(Tape<S>& tape, Var<S> queries, Var<S> keys_values, const AttentionMask& mask,
                 Index batch = 1) const;

  Index d_model() const { return d_model_; }
  Index n_heads() const { return n_heads_; }
  const Linear<S>& q_proj() const { return q_; }
  const Linear<S>& k_proj() const { return k_; }
  const Linear<S>& v_proj() const { return v_; }
  const Linear<S>& out_proj() const { return o_; }

 private:
  Index d_model_ = 0;
  Index n_heads_ = 0;
  Linear<S> q_, k_, v_, o_;
};

template <typename S>
class Mlp {
 public:
  Mlp() = default;
  Mlp(ParameterStore<S>& store, const std::string& name, Index d_model, Index hidden, Rng& rng);
  Var<S> forward(Tape<S>& tape, Var<S> x) const;
  const Linear<S>& out_proj() const { return fc2_; }

 private:
  Linear<S> fc1_, fc2_;
};

struct LayerShape {
  Index d_model = 0;
  Index n_heads = 0;
  Index mlp_dim = 0;
};

// Source sequence for cross-attention: [batch*Lk, d].
template <typename S>
struct CrossSource {
  Var<S> tokens;
  AttentionMask mask;
};

// Pre-layer-norm residual block: self-attention, optional cross-attention,
// then a GELU MLP. Whether the block has cross-attention is fixed at
// construction.
template <typename S>
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(ParameterStore<S>& store, const std::string& name, const LayerShape& shape,
                   bool with_cross_attention, Rng& rng);

  Var<S> forward(Tape<S>& tape, Var<S> x, const AttentionMask& mask, Index batch,
                 const std::optional<CrossSource<S>>& cross = std::nullopt) const;

  bool has_cross_attention() const { return cross_attn_.has_value(); }
  const MultiHeadAttention<S>& self_attention() const { return self_attn_; }
  const Mlp<S>& mlp() const { return mlp_; }

 private:
  LayerNorm<S> ln_self_, ln_cross_, ln_mlp_;
  MultiHeadAttention<S> self_attn_;
  std::optional<MultiHeadAttention<S>> cross_attn_;
  Mlp<S> mlp_;
};

// One multi-head attention layer whose queries are learned embeddings and
// whose keys/values are the (layer-normed) input tokens. No positional
// information enters, so the output is invariant to token order.
template <typename S>
class AttentionalPooler {
 public:
  AttentionalPooler() = default;
  AttentionalPooler(ParameterStore<S>& store, const std::string& name, Index n_query, Index d_model,
                    Index n_heads, Rng& rng);

  // tokens [batch*L, d] -> [batch*n_query, d]. `valid_lengths` masks padding.
  Var<S> forward(Tape<S>& tape, Var<S> tokens, Index batch,
                 const std::vector<Index>& valid_lengths = {}) const;

  Index n_query() const { return n_query_; }
  Tensor<S>& queries() const { return *queries_; }
  const MultiHeadAttention<S>& attention() const { return attn_; }
  const LayerNorm<S>& kv_norm() const { return ln_kv_; }

 private:
  Index n_query_ = 0;
  Tensor<S>* queries_ = nullptr;
  LayerNorm<S> ln_kv_;
  MultiHeadAttention<S> attn_;
};

// Single-example convenience wrappers.
template <typename S>
Var<S> attend(Tape<S>& tape, const MultiHeadAttention<S>& mha, Var<S> queries, Var<S> keys_values,
              const AttentionMask& mask);
template <typename S>
Var<S> pool(Tape<S>& tape, const AttentionalPooler<S>& pooler, Var<S> tokens);

}  // namespace coca
