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
#include "coca/model.hpp"

#include <cmath>

namespace coca {

template <typename S>
Matrix<S> patchify(const Tensor<S>& image, Index patch_size) {
  if (image.rank() != 3) throw ShapeError("image must be [H, W, C], got " + shape_str(image.shape()));
  const Index h = image.dim(0), w = image.dim(1), c = image.dim(2);
  if (patch_size < 1 || h % patch_size != 0 || w % patch_size != 0) {
    throw ShapeError("image " + shape_str(image.shape()) + " not divisible into patches of " +
                     std::to_string(patch_size));
  }
  const Index ph = h / patch_size, pw = w / patch_size;
  Matrix<S> out(ph * pw, patch_size * patch_size * c);
  const auto& px = image.matrix();  // [H*W, C]
  for (Index py = 0; py < ph; ++py) {
    for (Index pxi = 0; pxi < pw; ++pxi) {
      Index token = py * pw + pxi;
      Index col = 0;
      for (Index dy = 0; dy < patch_size; ++dy) {
        for (Index dx = 0; dx < patch_size; ++dx) {
          Index pixel = (py * patch_size + dy) * w + (pxi * patch_size + dx);
          for (Index ch = 0; ch < c; ++ch) out(token, col++) = px(pixel, ch);
        }
      }
    }
  }
  return out;
}

template <typename S>
CoCaModel<S>::CoCaModel(const CoCaConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  Rng rng(seed);
  const auto& img = config_.image;
  const auto& txt = config_.text;
  const LayerShape enc_shape{img.d_model, img.n_heads, img.mlp_dim};
  const LayerShape dec_shape{txt.d_model, txt.n_heads, txt.mlp_dim};

  patch_embed_ = Linear<S>(store_, "encoder.patch_embed", img.patch_dim(), img.d_model, rng);
  image_pos_ = &store_.create("encoder.pos", Shape{img.num_tokens(), img.d_model}, Init::kNormal, rng);
  for (Index i = 0; i < img.enc_layers; ++i) {
    encoder_.emplace_back(store_, "encoder.layers." + std::to_string(i), enc_shape, false, rng);
  }
  encoder_ln_ = LayerNorm<S>(store_, "encoder.ln_final", img.d_model, rng);

  if (config_.poolers.n_query_gen > 0) {
    gen_pooler_.emplace(store_, "poolers.generative", config_.poolers.n_query_gen, img.d_model,
                        img.n_heads, rng);
  }
  con_pooler_ = AttentionalPooler<S>(store_, "poolers.contrastive", config_.poolers.n_query_con,
                                     img.d_model, img.n_heads, rng);
  cross_source_ln_ = LayerNorm<S>(store_, "poolers.cross_source_ln", img.d_model, rng);
  if (img.d_model != txt.d_model) {
    cross_source_proj_.emplace(store_, "poolers.cross_source_proj", img.d_model, txt.d_model, rng);
  }
  image_proj_ = Linear<S>(store_, "poolers.image_proj", img.d_model, config_.embed_dim, rng, false);

  token_table_ = &store_.create("embeddings.tokens", Shape{txt.vocab_size, txt.d_model}, Init::kNormal, rng);
  cls_table_ = &store_.create("embeddings.cls", Shape{txt.n_cls, txt.d_model}, Init::kNormal, rng);
  text_pos_ = &store_.create("embeddings.pos", Shape{txt.max_len, txt.d_model}, Init::kNormal, rng);

  for (Index i = 0; i < txt.n_uni; ++i) {
    unimodal_.emplace_back(store_, "unimodal.layers." + std::to_string(i), dec_shape, false, rng);
  }
  text_ln_ = LayerNorm<S>(store_, "unimodal.text_ln", txt.d_model, rng);
  text_proj_ = Linear<S>(store_, "unimodal.text_proj", txt.d_model, config_.embed_dim, rng, false);

  for (Index i = 0; i < txt.n_multi; ++i) {
    multimodal_.emplace_back(store_, "multimodal.layers." + std::to_string(i), dec_shape, true, rng);
  }
  decoder_ln_ = LayerNorm<S>(store_, "multimodal.ln_final", txt.d_model, rng);
  lm_head_ = Linear<S>(store_, "multimodal.lm_head", txt.d_model, txt.vocab_size, rng);

  log_temperature_ = &store_.create("temperature.log_sigma", Shape{1}, Init::kZeros, rng);
  log_temperature_->matrix()(0, 0) = static_cast<S>(std::log(config_.losses.temperature_init));
}

template <typename S>
ImageEncoding<S> CoCaModel<S>::encode_images(Tape<S>& tape, std::span<const Tensor<S>> images) const {
  const auto& img = config_.image;
  const Index batch = static_cast<Index>(images.size());
  if (batch == 0) throw ShapeError("encode_images: empty batch");
  const Index L = img.num_tokens();
  Matrix<S> patches(batch * L, img.patch_dim());
  for (Index b = 0; b < batch; ++b) {
    const auto& im = images[static_cast<std::size_t>(b)];
    if (im.rank() != 3 || im.dim(0) != img.resolution || im.dim(1) != img.resolution ||
        im.dim(2) != img.channels) {
      throw ShapeError("encode_images: expected [" + std::to_string(img.resolution) + "," +
                       std::to_string(img.resolution) + "," + std::to_string(img.channels) +
                       "] image, got " + shape_str(im.shape()));
    }
    patches.middleRows(b * L, L) = patchify(im, img.patch_size);
  }

  Var<S> x = patch_embed_(tape, tape.constant(Tensor<S>::from_matrix(patches)));
  x = add(x, tape.param(*image_pos_));
  for (const auto& layer : encoder_) x = layer.forward(tape, x, AttentionMask::none(), batch);
  x = encoder_ln_(tape, x);

  ImageEncoding<S> out;
  out.batch = batch;
  out.tokens = x;

  Var<S> gen_raw = x;
  out.gen_length = L;
  if (gen_pooler_) {
    gen_raw = gen_pooler_->forward(tape, x, batch);
    out.gen_length = gen_pooler_->n_query();
  }
  const bool cascade = config_.poolers.variant == PoolerVariant::kCascade && gen_pooler_;
  Var<S> con = con_pooler_.forward(tape, cascade ? gen_raw : x, batch);
  const Index n_con = con_pooler_.n_query();
  if (n_con > 1) {
    Matrix<S> avg = Matrix<S>::Zero(batch, batch * n_con);
    for (Index b = 0; b < batch; ++b) avg.block(b, b * n_con, 1, n_con).setConstant(S(1) / S(n_con));
    con = matmul(tape.constant(Tensor<S>::from_matrix(avg)), con);
  }
  out.contrastive_embed = l2_normalize_rows(image_proj_(tape, con));

  Var<S> source = cross_source_ln_(tape, gen_raw);
  if (cross_source_proj_) source = (*cross_source_proj_)(tape, source);
  out.gen_tokens = source;
  return out;
}

template <typename S>
Var<S> CoCaModel<S>::run_unimodal(Tape<S>& tape, std::span<const int> ids, Index batch,
                                  Index seq_len) const {
  if (seq_len > config_.text.max_len) {
    throw ShapeError("text of " + std::to_string(seq_len) + " positions exceeds max_len " +
                     std::to_string(config_.text.max_len));
  }
  Var<S> table = concat_rows(tape.param(*token_table_), tape.param(*cls_table_));
  Var<S> x = embedding_lookup(table, ids);
  Var<S> pos = tape.param(*text_pos_);
  if (seq_len < config_.text.max_len) {
    std::vector<Index> rows(static_cast<std::size_t>(seq_len));
    for (Index t = 0; t < seq_len; ++t) rows[static_cast<std::size_t>(t)] = t;
    pos = gather_rows(pos, rows);
  }
  x = add(x, pos);
  for (const auto& layer : unimodal_) x = layer.forward(tape, x, AttentionMask::causal(), batch);
  unimodal_executions_ += static_cast<std::size_t>(batch);
  return x;
}

template <typename S>
TextEncoding<S> CoCaModel<S>::encode_text_unimodal(Tape<S>& tape,
                                                   std::span<const TokenSequence> texts) const {
  const auto& txt = config_.text;
  const Index batch = static_cast<Index>(texts.size());
  if (batch == 0) throw ShapeError("encode_text_unimodal: empty batch");
  const Index T = txt.max_len;
  std::vector<int> ids(static_cast<std::size_t>(batch * T), kPadId);
  std::vector<Index> lengths;
  for (Index b = 0; b < batch; ++b) {
    const auto& seq = texts[static_cast<std::size_t>(b)];
    if (seq.length < 1 || seq.length > seq.padded_length()) {
      throw ShapeError("token sequence length out of range");
    }
    if (seq.length + txt.n_cls > T) {
      throw ShapeError("token sequence of length " + std::to_string(seq.length) + " plus " +
                       std::to_string(txt.n_cls) + " [CLS] overflows max_len " + std::to_string(T));
    }
    for (Index t = 0; t < seq.length; ++t) {
      int id = seq.ids[static_cast<std::size_t>(t)];
      if (id < 0 || id >= txt.vocab_size) {
        throw Error("token id " + std::to_string(id) + " outside vocabulary of " +
                    std::to_string(txt.vocab_size));
      }
      ids[static_cast<std::size_t>(b * T + t)] = id;
    }
    for (Index c = 0; c < txt.n_cls; ++c) {
      ids[static_cast<std::size_t>(b * T + seq.length + c)] = static_cast<int>(cls_token_id(c));
    }
    lengths.push_back(seq.length);
  }

  TextEncoding<S> out;
  out.batch = batch;
  out.seq_len = T;
  out.sequence = run_unimodal(tape, ids, batch, T);

  Var<S> pooled;
  if (txt.n_cls == 1 && txt.cls_aggregate == ClsAggregate::kClsOnly) {
    std::vector<Index> rows;
    for (Index b = 0; b < batch; ++b) rows.push_back(b * T + lengths[static_cast<std::size_t>(b)]);
    pooled = gather_rows(out.sequence, rows);
  } else {
    Matrix<S> avg = Matrix<S>::Zero(batch, batch * T);
    for (Index b = 0; b < batch; ++b) {
      Index len = lengths[static_cast<std::size_t>(b)];
      Index first = txt.cls_aggregate == ClsAggregate::kClsOnly ? len : 0;
      Index count = len + txt.n_cls - first;
      avg.block(b, b * T + first, 1, count).setConstant(S(1) / S(count));
    }
    pooled = matmul(tape.constant(Tensor<S>::from_matrix(avg)), out.sequence);
  }
  out.cls_embed = l2_normalize_rows(text_proj_(tape, text_ln_(tape, pooled)));
  return out;
}

template <typename S>
Var<S> CoCaModel<S>::run_multimodal(Tape<S>& tape, Var<S> x, const ImageEncoding<S>& image,
                                    Index batch) const {
  if (image.batch != batch) throw ShapeError("image and text batch sizes differ");
  CrossSource<S> cross{image.gen_tokens, AttentionMask::none()};
  for (const auto& layer : multimodal_) {
    x = layer.forward(tape, x, AttentionMask::causal(), batch, cross);
  }
  return decoder_ln_(tape, x);
}

template <typename S>
Var<S> CoCaModel<S>::multimodal_hidden(Tape<S>& tape, const TextEncoding<S>& text,
                                       const ImageEncoding<S>& image) const {
  return run_multimodal(tape, text.sequence, image, text.batch);
}

template <typename S>
Var<S> CoCaModel<S>::decode_multimodal(Tape<S>& tape, const TextEncoding<S>& text,
                                       const ImageEncoding<S>& image) const {
  return lm_head_(tape, multimodal_hidden(tape, text, image));
}

template <typename S>
BatchOutputs<S> CoCaModel<S>::forward(Tape<S>& tape, std::span<const Tensor<S>> images,
                                      std::span<const TokenSequence> texts) const {
  if (images.size() != texts.size()) throw ShapeError("forward: image/text count mismatch");
  BatchOutputs<S> out;
  out.image = encode_images(tape, images);
  out.text = encode_text_unimodal(tape, texts);
  out.caption_logits = decode_multimodal(tape, out.text, out.image);
  return out;
}

template <typename S>
Var<S> CoCaModel<S>::prefix_logits(Tape<S>& tape, const ImageEncoding<S>& image,
                                   std::span<const std::vector<int>> prefixes) const {
  const Index batch = static_cast<Index>(prefixes.size());
  if (batch == 0) throw ShapeError("prefix_logits: empty batch");
  const Index P = static_cast<Index>(prefixes.front().size());
  std::vector<int> ids;
  ids.reserve(static_cast<std::size_t>(batch * P));
  for (const auto& p : prefixes) {
    if (static_cast<Index>(p.size()) != P) throw ShapeError("prefix_logits: ragged prefixes");
    for (int id : p) {
      if (id < 0 || id >= config_.text.vocab_size) throw Error("prefix token outside vocabulary");
    }
    ids.insert(ids.end(), p.begin(), p.end());
  }
  Var<S> x = run_unimodal(tape, ids, batch, P);
  return lm_head_(tape, run_multimodal(tape, x, image, batch));
}

std::string parameter_group(const std::string& name) { return name.substr(0, name.find('.')); }

template <typename S>
ParameterCensus count_parameters(const CoCaModel<S>& model) {
  ParameterCensus census;
  for (const auto& name : {"encoder", "unimodal", "multimodal", "poolers", "embeddings", "temperature"}) {
    census.groups[name] = 0;
  }
  for (const auto& e : model.parameters().entries()) {
    census.groups[parameter_group(e.name)] += e.tensor->size();
    census.total += e.tensor->size();
  }
  return census;
}

template <typename S>
ForwardOutputs<S> forward(const CoCaModel<S>& model, const Tensor<S>& image, const TokenSequence& tokens) {
  Tape<S> tape;
  tape.set_grad_enabled(false);
  auto out = model.forward(tape, std::span<const Tensor<S>>(&image, 1),
                           std::span<const TokenSequence>(&tokens, 1));
  ForwardOutputs<S> r;
  r.image_embed = out.image.contrastive_embed.value().reshaped(Shape{model.config().embed_dim});
  r.text_embed = out.text.cls_embed.value().reshaped(Shape{model.config().embed_dim});
  r.caption_logits = out.caption_logits.value();
  r.pooled_caption_tokens = out.image.gen_tokens.value();
  return r;
}

template Matrix<float> patchify(const Tensor<float>&, Index);
template Matrix<double> patchify(const Tensor<double>&, Index);
template class CoCaModel<float>;
template class CoCaModel<double>;
template ParameterCensus count_parameters(const CoCaModel<float>&);
template ParameterCensus count_parameters(const CoCaModel<double>&);
template ForwardOutputs<float> forward(const CoCaModel<float>&, const Tensor<float>&, const TokenSequence&);
template ForwardOutputs<double> forward(const CoCaModel<double>&, const Tensor<double>&, const TokenSequence&);

}  // namespace coca
