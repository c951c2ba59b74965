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
#include "coca/nn.hpp"

#include <cmath>

namespace coca {

// ---------------------------------------------------------------------------
// ParameterStore

template <typename S>
Tensor<S>& ParameterStore<S>::create(const std::string& name, Shape shape, Init init, Rng& rng,
                                     double init_std) {
  if (find(name)) throw ConfigError("duplicate parameter name " + name);
  auto tensor = std::make_unique<Tensor<S>>(std::move(shape));
  switch (init) {
    case Init::kZeros:
      break;
    case Init::kOnes:
      tensor->matrix().setOnes();
      break;
    case Init::kNormal:
      for (S& v : tensor->values()) v = static_cast<S>(rng.normal(0.0, init_std));
      break;
  }
  tensor->set_requires_grad(true);
  entries_.push_back({name, std::move(tensor)});
  return *entries_.back().tensor;
}

template <typename S>
Tensor<S>* ParameterStore<S>::find(const std::string& name) {
  for (auto& e : entries_) {
    if (e.name == name) return e.tensor.get();
  }
  return nullptr;
}

template <typename S>
const Tensor<S>* ParameterStore<S>::find(const std::string& name) const {
  for (const auto& e : entries_) {
    if (e.name == name) return e.tensor.get();
  }
  return nullptr;
}

template <typename S>
Tensor<S>& ParameterStore<S>::at(const std::string& name) {
  Tensor<S>* t = find(name);
  if (!t) throw Error("no parameter named " + name);
  return *t;
}

template <typename S>
Index ParameterStore<S>::total_size() const {
  Index n = 0;
  for (const auto& e : entries_) n += e.tensor->size();
  return n;
}

template <typename S>
void ParameterStore<S>::zero_grad() {
  for (auto& e : entries_) {
    if (e.tensor->requires_grad()) {
      e.tensor->zero_grad();
    } else {
      e.tensor->clear_grad();
    }
  }
}

template <typename S>
void ParameterStore<S>::set_frozen(const std::string& prefix, bool frozen) {
  for (auto& e : entries_) {
    if (e.name.rfind(prefix, 0) == 0) {
      e.tensor->set_requires_grad(!frozen);
      if (frozen) e.tensor->clear_grad();
    }
  }
}

template class ParameterStore<float>;
template class ParameterStore<double>;

// ---------------------------------------------------------------------------
// Attention kernel

namespace {

template <typename S>
struct AttentionDims {
  Index batch, lq, lk, d, heads, dh;
};

template <typename S>
AttentionDims<S> attention_dims(const Matrix<S>& q, const Matrix<S>& k, const Matrix<S>* v,
                                Index n_heads, const AttentionMask& mask, Index batch) {
  if (batch < 1) throw ShapeError("attention: batch must be >= 1");
  if (n_heads < 1 || q.cols() % n_heads != 0) {
    throw ShapeError("attention: d_model " + std::to_string(q.cols()) + " not divisible by " +
                     std::to_string(n_heads) + " heads");
  }
  if (k.cols() != q.cols() || (v && (v->cols() != q.cols() || v->rows() != k.rows()))) {
    throw ShapeError("attention: q/k/v widths or key/value lengths disagree");
  }
  if (q.rows() % batch != 0 || k.rows() % batch != 0 || k.rows() == 0) {
    throw ShapeError("attention: rows not divisible into " + std::to_string(batch) + " segments");
  }
  AttentionDims<S> dims{batch, q.rows() / batch, k.rows() / batch, q.cols(), n_heads,
                        q.cols() / n_heads};
  if (mask.is_causal() && dims.lq != dims.lk) {
    throw ShapeError("attention: causal mask needs equal query and key lengths");
  }
  if (mask.has_padding()) {
    if (static_cast<Index>(mask.valid_lengths.size()) != batch) {
      throw ShapeError("attention: padding mask needs one length per batch item");
    }
    for (Index len : mask.valid_lengths) {
      if (len < 1 || len > dims.lk) throw ShapeError("attention: valid length out of range");
    }
  }
  return dims;
}

template <typename S>
void apply_mask(Matrix<S>& logits, const AttentionMask& mask, Index b) {
  const S masked = static_cast<S>(kMaskedLogit);
  if (mask.is_causal()) {
    for (Index i = 0; i < logits.rows(); ++i) {
      for (Index j = i + 1; j < logits.cols(); ++j) logits(i, j) = masked;
    }
  }
  if (mask.has_padding()) {
    Index len = mask.valid_lengths[static_cast<std::size_t>(b)];
    if (len < logits.cols()) logits.rightCols(logits.cols() - len).setConstant(masked);
  }
}

template <typename S>
void softmax_inplace(Matrix<S>& m) {
  for (Index r = 0; r < m.rows(); ++r) {
    S mx = m.row(r).maxCoeff();
    // Scalar exp so masked logits underflow to exactly zero.
    m.row(r) = (m.row(r).array() - mx).unaryExpr([](S v) { return std::exp(v); }).matrix();
    m.row(r) /= m.row(r).sum();
  }
}

}  // namespace

template <typename S>
std::vector<Matrix<S>> attention_probabilities(const Matrix<S>& q, const Matrix<S>& k, Index n_heads,
                                               const AttentionMask& mask, Index batch) {
  auto dims = attention_dims<S>(q, k, nullptr, n_heads, mask, batch);
  const S scale = S(1) / std::sqrt(S(dims.dh));
  std::vector<Matrix<S>> probs;
  probs.reserve(static_cast<std::size_t>(batch * n_heads));
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < n_heads; ++h) {
      Matrix<S> p = (q.block(b * dims.lq, h * dims.dh, dims.lq, dims.dh) *
                     k.block(b * dims.lk, h * dims.dh, dims.lk, dims.dh).transpose()) *
                    scale;
      apply_mask(p, mask, b);
      softmax_inplace(p);
      probs.push_back(std::move(p));
    }
  }
  return probs;
}

template <typename S>
Var<S> multi_head_attention(Var<S> q, Var<S> k, Var<S> v, Index n_heads, const AttentionMask& mask,
                            Index batch) {
  const auto& qm = q.matrix();
  const auto& km = k.matrix();
  const auto& vm = v.matrix();
  auto dims = attention_dims<S>(qm, km, &vm, n_heads, mask, batch);
  auto probs = std::make_shared<std::vector<Matrix<S>>>(
      attention_probabilities<S>(qm, km, n_heads, mask, batch));

  Matrix<S> out(qm.rows(), dims.d);
  for (Index b = 0; b < batch; ++b) {
    for (Index h = 0; h < n_heads; ++h) {
      const Matrix<S>& p = (*probs)[static_cast<std::size_t>(b * n_heads + h)];
      out.block(b * dims.lq, h * dims.dh, dims.lq, dims.dh).noalias() =
          p * vm.block(b * dims.lk, h * dims.dh, dims.lk, dims.dh);
    }
  }

  int iq = q.id, ik = k.id, iv = v.id;
  return q.tape->record(
      "multi_head_attention", Tensor<S>(Shape{qm.rows(), dims.d}, std::move(out)), {iq, ik, iv},
      [iq, ik, iv, dims, probs](Tape<S>& t, const Matrix<S>& g) {
        const auto& qm = t.value(iq).matrix();
        const auto& km = t.value(ik).matrix();
        const auto& vm = t.value(iv).matrix();
        const S scale = S(1) / std::sqrt(S(dims.dh));
        Matrix<S> dq = Matrix<S>::Zero(qm.rows(), qm.cols());
        Matrix<S> dk = Matrix<S>::Zero(km.rows(), km.cols());
        Matrix<S> dv = Matrix<S>::Zero(vm.rows(), vm.cols());
        for (Index b = 0; b < dims.batch; ++b) {
          for (Index h = 0; h < dims.heads; ++h) {
            const Matrix<S>& p = (*probs)[static_cast<std::size_t>(b * dims.heads + h)];
            auto go = g.block(b * dims.lq, h * dims.dh, dims.lq, dims.dh);
            auto qb = qm.block(b * dims.lq, h * dims.dh, dims.lq, dims.dh);
            auto kb = km.block(b * dims.lk, h * dims.dh, dims.lk, dims.dh);
            auto vb = vm.block(b * dims.lk, h * dims.dh, dims.lk, dims.dh);
            dv.block(b * dims.lk, h * dims.dh, dims.lk, dims.dh).noalias() = p.transpose() * go;
            Matrix<S> dp = go * vb.transpose();
            Vector<S> rowdot = dp.cwiseProduct(p).rowwise().sum();
            Matrix<S> ds = p.cwiseProduct(dp - rowdot.replicate(1, dp.cols())) * scale;
            dq.block(b * dims.lq, h * dims.dh, dims.lq, dims.dh).noalias() = ds * kb;
            dk.block(b * dims.lk, h * dims.dh, dims.lk, dims.dh).noalias() = ds.transpose() * qb;
          }
        }
        t.accumulate(iq, dq);
        t.accumulate(ik, dk);
        t.accumulate(iv, dv);
      });
}

// ---------------------------------------------------------------------------
// Layers

template <typename S>
Linear<S>::Linear(ParameterStore<S>& store, const std::string& name, Index in, Index out, Rng& rng,
                  bool with_bias) {
  weight = &store.create(name + ".weight", Shape{in, out}, Init::kNormal, rng);
  if (with_bias) bias = &store.create(name + ".bias", Shape{out}, Init::kZeros, rng);
}

template <typename S>
Var<S> Linear<S>::operator()(Tape<S>& tape, Var<S> x) const {
  Var<S> y = matmul(x, tape.param(*weight));
  return bias ? add(y, tape.param(*bias)) : y;
}

template <typename S>
LayerNorm<S>::LayerNorm(ParameterStore<S>& store, const std::string& name, Index dim, Rng& rng) {
  gain = &store.create(name + ".gain", Shape{dim}, Init::kOnes, rng);
  bias = &store.create(name + ".bias", Shape{dim}, Init::kZeros, rng);
}

template <typename S>
Var<S> LayerNorm<S>::operator()(Tape<S>& tape, Var<S> x) const {
  return layer_norm(x, tape.param(*gain), tape.param(*bias));
}

template <typename S>
MultiHeadAttention<S>::MultiHeadAttention(ParameterStore<S>& store, const std::string& name,
                                          Index d_model, Index n_heads, Rng& rng)
    : d_model_(d_model), n_heads_(n_heads) {
  if (n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigError(name + ": d_model " + std::to_string(d_model) + " not divisible by " +
                      std::to_string(n_heads) + " heads");
  }
  q_ = Linear<S>(store, name + ".q", d_model, d_model, rng);
  k_ = Linear<S>(store, name + ".k", d_model, d_model, rng);
  v_ = Linear<S>(store, name + ".v", d_model, d_model, rng);
  o_ = Linear<S>(store, name + ".out", d_model, d_model, rng);
}

template <typename S>
Var<S> MultiHeadAttention<S>::forward(Tape<S>& tape, Var<S> queries, Var<S> keys_values,
                                      const AttentionMask& mask, Index batch) const {
  Var<S> q = q_(tape, queries);
  Var<S> k = k_(tape, keys_values);
  Var<S> v = v_(tape, keys_values);
  return o_(tape, multi_head_attention(q, k, v, n_heads_, mask, batch));
}

template <typename S>
Mlp<S>::Mlp(ParameterStore<S>& store, const std::string& name, Index d_model, Index hidden, Rng& rng)
    : fc1_(store, name + ".fc1", d_model, hidden, rng), fc2_(store, name + ".fc2", hidden, d_model, rng) {}

template <typename S>
Var<S> Mlp<S>::forward(Tape<S>& tape, Var<S> x) const {
  return fc2_(tape, gelu(fc1_(tape, x)));
}

template <typename S>
TransformerLayer<S>::TransformerLayer(ParameterStore<S>& store, const std::string& name,
                                      const LayerShape& shape, bool with_cross_attention, Rng& rng)
    : ln_self_(store, name + ".ln_self", shape.d_model, rng),
      self_attn_(store, name + ".self_attn", shape.d_model, shape.n_heads, rng) {
  if (with_cross_attention) {
    ln_cross_ = LayerNorm<S>(store, name + ".ln_cross", shape.d_model, rng);
    cross_attn_.emplace(store, name + ".cross_attn", shape.d_model, shape.n_heads, rng);
  }
  ln_mlp_ = LayerNorm<S>(store, name + ".ln_mlp", shape.d_model, rng);
  mlp_ = Mlp<S>(store, name + ".mlp", shape.d_model, shape.mlp_dim, rng);
}

template <typename S>
Var<S> TransformerLayer<S>::forward(Tape<S>& tape, Var<S> x, const AttentionMask& mask, Index batch,
                                    const std::optional<CrossSource<S>>& cross) const {
  if (cross && !cross_attn_) {
    throw Error("cross-attention source given to a layer without cross-attention");
  }
  if (!cross && cross_attn_) throw Error("multimodal layer requires a cross-attention source");
  Var<S> h = ln_self_(tape, x);
  x = add(x, self_attn_.forward(tape, h, h, mask, batch));
  if (cross) {
    Var<S> hc = ln_cross_(tape, x);
    x = add(x, cross_attn_->forward(tape, hc, cross->tokens, cross->mask, batch));
  }
  return add(x, mlp_.forward(tape, ln_mlp_(tape, x)));
}

template <typename S>
AttentionalPooler<S>::AttentionalPooler(ParameterStore<S>& store, const std::string& name,
                                        Index n_query, Index d_model, Index n_heads, Rng& rng)
    : n_query_(n_query),
      queries_(&store.create(name + ".queries", Shape{n_query, d_model}, Init::kNormal, rng)),
      ln_kv_(store, name + ".ln_kv", d_model, rng),
      attn_(store, name + ".attn", d_model, n_heads, rng) {
  if (n_query < 1) throw ConfigError(name + ": pooler needs at least one query");
}

template <typename S>
Var<S> AttentionalPooler<S>::forward(Tape<S>& tape, Var<S> tokens, Index batch,
                                     const std::vector<Index>& valid_lengths) const {
  if (tokens.rows() < batch || tokens.rows() == 0) throw ShapeError("pool: empty input");
  Var<S> q = tape.param(*queries_);
  if (batch > 1) q = tile_rows(q, batch);
  Var<S> kv = ln_kv_(tape, tokens);
  AttentionMask mask =
      valid_lengths.empty() ? AttentionMask::none() : AttentionMask::padding(valid_lengths);
  return attn_.forward(tape, q, kv, mask, batch);
}

template <typename S>
Var<S> attend(Tape<S>& tape, const MultiHeadAttention<S>& mha, Var<S> queries, Var<S> keys_values,
              const AttentionMask& mask) {
  return mha.forward(tape, queries, keys_values, mask, 1);
}

template <typename S>
Var<S> pool(Tape<S>& tape, const AttentionalPooler<S>& pooler, Var<S> tokens) {
  return pooler.forward(tape, tokens, 1);
}

#define COCA_INSTANTIATE_NN(S)                                                                    \
  template Var<S> multi_head_attention(Var<S>, Var<S>, Var<S>, Index, const AttentionMask&, Index); \
  template std::vector<Matrix<S>> attention_probabilities(const Matrix<S>&, const Matrix<S>&,     \
                                                          Index, const AttentionMask&, Index);    \
  template struct Linear<S>;                                                                      \
  template struct LayerNorm<S>;                                                                   \
  template class MultiHeadAttention<S>;                                                           \
  template class Mlp<S>;                                                                          \
  template class TransformerLayer<S>;                                                             \
  template class AttentionalPooler<S>;                                                            \
  template Var<S> attend(Tape<S>&, const MultiHeadAttention<S>&, Var<S>, Var<S>,                  \
                         const AttentionMask&);                                                   \
  template Var<S> pool(Tape<S>&, const AttentionalPooler<S>&, Var<S>);

COCA_INSTANTIATE_NN(float)
COCA_INSTANTIATE_NN(double)

#undef COCA_INSTANTIATE_NN

}  // namespace coca
