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

#include "test_helpers.hpp"

#include <algorithm>
#include <numeric>

using namespace coca;
using coca::testing::random_tensor;

namespace {

Matrix<double> layer_norm_oracle(const Matrix<double>& x) {
  Matrix<double> out(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    double mu = 0, var = 0;
    for (Index c = 0; c < x.cols(); ++c) mu += x(r, c);
    mu /= double(x.cols());
    for (Index c = 0; c < x.cols(); ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= double(x.cols());
    for (Index c = 0; c < x.cols(); ++c) out(r, c) = (x(r, c) - mu) / std::sqrt(var + 1e-5);
  }
  return out;
}

// Loop-based scaled dot-product attention for one sequence.
Matrix<double> attention_oracle(const Matrix<double>& q, const Matrix<double>& k, const Matrix<double>& v,
                                Index heads, bool causal) {
  const Index dh = q.cols() / heads;
  Matrix<double> out = Matrix<double>::Zero(q.rows(), q.cols());
  for (Index h = 0; h < heads; ++h) {
    for (Index i = 0; i < q.rows(); ++i) {
      std::vector<double> logits(static_cast<std::size_t>(k.rows()));
      double best = -1e300;
      for (Index j = 0; j < k.rows(); ++j) {
        double dot = 0;
        for (Index c = 0; c < dh; ++c) dot += q(i, h * dh + c) * k(j, h * dh + c);
        logits[std::size_t(j)] = (causal && j > i) ? -1e300 : dot / std::sqrt(double(dh));
        best = std::max(best, logits[std::size_t(j)]);
      }
      double z = 0;
      for (auto& l : logits) z += (l = std::exp(l - best));
      for (Index j = 0; j < k.rows(); ++j) {
        for (Index c = 0; c < dh; ++c) out(i, h * dh + c) += logits[std::size_t(j)] / z * v(j, h * dh + c);
      }
    }
  }
  return out;
}

Matrix<double> apply(const Linear<double>& lin, const Matrix<double>& x) {
  Matrix<double> y = x * lin.weight->matrix();
  if (lin.bias) y.rowwise() += lin.bias->matrix().row(0);
  return y;
}

void set_identity(const Linear<double>& lin) {
  lin.weight->matrix().setIdentity();
  if (lin.bias) lin.bias->matrix().setZero();
}

}  // namespace

TEST_CASE("attention with a single key returns the projected value for any query") {
  Rng rng(1);
  ParameterStore<double> store;
  MultiHeadAttention<double> mha(store, "mha", 8, 2, rng);
  for (auto& e : store.entries()) {
    for (double& v : e.tensor->values()) v = rng.normal(0, 0.3);
  }
  Tape<double> tape;
  Tensor<double> kv = random_tensor({1, 8}, rng);
  Matrix<double> expected = apply(mha.out_proj(), apply(mha.v_proj(), kv.matrix()));
  for (int trial = 0; trial < 3; ++trial) {
    Tensor<double> q = random_tensor({3, 8}, rng, 5.0);
    auto out = attend(tape, mha, tape.constant(q), tape.constant(kv), AttentionMask::none());
    for (Index r = 0; r < 3; ++r) {
      CHECK((out.matrix().row(r) - expected.row(0)).cwiseAbs().maxCoeff() < 1e-12);
    }
  }
}

TEST_CASE("two-token attention matches hand arithmetic") {
  Rng rng(2);
  ParameterStore<double> store;
  MultiHeadAttention<double> mha(store, "mha", 2, 1, rng);
  // Wq = I, Wk = 2I, Wv = [[1,1],[0,1]], Wo = I, zero biases.
  set_identity(mha.q_proj());
  set_identity(mha.k_proj());
  mha.k_proj().weight->matrix() *= 2.0;
  set_identity(mha.v_proj());
  mha.v_proj().weight->matrix()(0, 1) = 1.0;
  set_identity(mha.out_proj());

  Tensor<double> x(Shape{2, 2});
  x.matrix() << 1.0, 0.0, 0.0, 1.0;
  Tape<double> tape;
  auto out = attend(tape, mha, tape.constant(x), tape.constant(x), AttentionMask::none());
  // q0 = (1,0), keys (2,0) and (0,2): logits 2/sqrt2 and 0. Values (1,1), (0,1).
  const double p = 1.0 / (1.0 + std::exp(-std::sqrt(2.0)));
  CHECK(std::abs(out.matrix()(0, 0) - p) < 1e-10);
  CHECK(std::abs(out.matrix()(0, 1) - 1.0) < 1e-10);
  // q1 = (0,1): logits 0 and sqrt2.
  CHECK(std::abs(out.matrix()(1, 0) - (1.0 - p)) < 1e-10);
  CHECK(std::abs(out.matrix()(1, 1) - 1.0) < 1e-10);

  auto causal = attend(tape, mha, tape.constant(x), tape.constant(x), AttentionMask::causal());
  CHECK(std::abs(causal.matrix()(0, 0) - 1.0) < 1e-10);
  CHECK(std::abs(causal.matrix()(0, 1) - 1.0) < 1e-10);
}

TEST_CASE("fused multi-head attention matches a loop oracle") {
  Rng rng(3);
  for (Index heads : {1, 2, 4}) {
    const Index batch = 3, lq = 5, lk = 5, d = 8;
    Tensor<double> q = random_tensor({batch * lq, d}, rng), k = random_tensor({batch * lk, d}, rng),
                   v = random_tensor({batch * lk, d}, rng);
    for (bool causal : {false, true}) {
      Tape<double> tape;
      auto out = multi_head_attention(tape.constant(q), tape.constant(k), tape.constant(v), heads,
                                      causal ? AttentionMask::causal() : AttentionMask::none(), batch);
      for (Index b = 0; b < batch; ++b) {
        Matrix<double> expected = attention_oracle(q.matrix().middleRows(b * lq, lq),
                                                   k.matrix().middleRows(b * lk, lk),
                                                   v.matrix().middleRows(b * lk, lk), heads, causal);
        CHECK((out.matrix().middleRows(b * lq, lq) - expected).cwiseAbs().maxCoeff() < 1e-12);
      }
    }
  }
}

TEST_CASE("attention shape errors") {
  Tape<double> tape;
  Rng rng(4);
  auto q = tape.constant(random_tensor({4, 8}, rng));
  auto k = tape.constant(random_tensor({3, 8}, rng));
  auto v6 = tape.constant(random_tensor({3, 6}, rng));
  CHECK_THROWS_AS(multi_head_attention(q, k, v6, 2, AttentionMask::none()), ShapeError);
  CHECK_THROWS(multi_head_attention(q, k, k, 3, AttentionMask::none()));
  CHECK_THROWS(multi_head_attention(q, k, k, 2, AttentionMask::none(), 2));
  ParameterStore<double> store;
  CHECK_THROWS_AS(MultiHeadAttention<double>(store, "bad", 10, 3, rng), ConfigError);
}

TEST_CASE("attention rows sum to one over unmasked keys") {
  Rng rng(5);
  const Index batch = 3, len = 6, d = 8;
  Tensor<double> q = random_tensor({batch * len, d}, rng, 3.0);
  Tensor<double> k = random_tensor({batch * len, d}, rng, 3.0);
  std::vector<Index> lengths{6, 2, 4};
  for (auto mask : {AttentionMask::none(), AttentionMask::causal(), AttentionMask::padding(lengths),
                    AttentionMask::causal_padding(lengths)}) {
    auto probs = attention_probabilities<double>(q.matrix(), k.matrix(), 2, mask, batch);
    REQUIRE(probs.size() == std::size_t(batch * 2));
    for (Index b = 0; b < batch; ++b) {
      for (Index h = 0; h < 2; ++h) {
        const auto& p = probs[std::size_t(b * 2 + h)];
        for (Index i = 0; i < len; ++i) {
          double total = 0;
          for (Index j = 0; j < len; ++j) {
            bool masked = (mask.is_causal() && j > i) || (mask.has_padding() && j >= lengths[std::size_t(b)]);
            if (masked) {
              CHECK(p(i, j) == 0.0);
            } else {
              total += p(i, j);
            }
          }
          CHECK(std::abs(total - 1.0) < 1e-12);
        }
      }
    }
  }
}

TEST_CASE("causal layer stack: future perturbation leaves the past bitwise unchanged") {
  Rng rng(6);
  ParameterStore<double> store;
  LayerShape shape{8, 2, 16};
  TransformerLayer<double> l1(store, "l1", shape, false, rng), l2(store, "l2", shape, false, rng);
  const Index len = 7;
  Tensor<double> x = random_tensor({len, 8}, rng);
  auto run = [&](const Tensor<double>& input) {
    Tape<double> tape;
    auto h = l1.forward(tape, tape.constant(input), AttentionMask::causal(), 1);
    h = l2.forward(tape, h, AttentionMask::causal(), 1);
    return Matrix<double>(h.matrix());
  };
  Matrix<double> base = run(x);
  for (Index t = 0; t + 1 < len; ++t) {
    Tensor<double> y = x;
    for (Index c = 0; c < 8; ++c) y.matrix()(t + 1, c) += rng.normal(0, 2.0);
    Matrix<double> perturbed = run(y);
    CHECK(perturbed.topRows(t + 1) == base.topRows(t + 1));
    CHECK(perturbed.row(t + 1) != base.row(t + 1));
  }
}

TEST_CASE("pooler examples") {
  Rng rng(7);
  const Index d = 8, len = 5;
  ParameterStore<double> store;
  AttentionalPooler<double> pooler(store, "pool", 3, d, 2, rng);
  Tensor<double> tokens = random_tensor({len, d}, rng);

  SUBCASE("zero queries with identity projections give the token mean") {
    pooler.queries().matrix().setZero();
    set_identity(pooler.attention().v_proj());
    set_identity(pooler.attention().out_proj());
    Tape<double> tape;
    auto out = pool(tape, pooler, tape.constant(tokens));
    REQUIRE(out.rows() == 3);
    Matrix<double> mean = layer_norm_oracle(tokens.matrix()).colwise().mean();
    for (Index r = 0; r < 3; ++r) CHECK((out.matrix().row(r) - mean).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("identical tokens pool to the projected token") {
    AttentionalPooler<double> single(store, "single", 1, d, 2, rng);
    Tensor<double> same(Shape{len, d});
    Tensor<double> one = random_tensor({1, d}, rng);
    for (Index r = 0; r < len; ++r) same.matrix().row(r) = one.matrix().row(0);
    Tape<double> tape;
    auto out = pool(tape, single, tape.constant(same));
    REQUIRE(out.rows() == 1);
    Matrix<double> expected =
        apply(single.attention().out_proj(), apply(single.attention().v_proj(), layer_norm_oracle(one.matrix())));
    CHECK((out.matrix() - expected).cwiseAbs().maxCoeff() < 1e-10);
  }

  SUBCASE("output count is n_query for any input length") {
    for (Index l : {1, 2, 9}) {
      Tape<double> tape;
      CHECK(pool(tape, pooler, tape.constant(random_tensor({l, d}, rng))).rows() == 3);
    }
  }
}

TEST_CASE("pooler is invariant to token permutation") {
  Rng rng(8);
  const Index d = 16;
  ParameterStore<double> store;
  AttentionalPooler<double> pooler(store, "pool", 4, d, 4, rng);
  for (auto& e : store.entries()) {
    for (double& v : e.tensor->values()) v += rng.normal(0, 0.2);
  }
  for (int trial = 0; trial < 10; ++trial) {
    Index len = 2 + rng.bounded(12);
    Tensor<double> tokens = random_tensor({len, d}, rng);
    std::vector<Index> perm(static_cast<std::size_t>(len));
    std::iota(perm.begin(), perm.end(), 0);
    rng.shuffle(std::span<Index>(perm));
    Tensor<double> shuffled(tokens.shape());
    for (Index r = 0; r < len; ++r) shuffled.matrix().row(r) = tokens.matrix().row(perm[std::size_t(r)]);
    Tape<double> tape;
    auto a = pool(tape, pooler, tape.constant(tokens));
    auto b = pool(tape, pooler, tape.constant(shuffled));
    CHECK((a.matrix() - b.matrix()).cwiseAbs().maxCoeff() < 1e-6);
  }
}

TEST_CASE("transformer layer with zero output projections is the identity") {
  Rng rng(9);
  ParameterStore<double> store;
  LayerShape shape{8, 2, 16};
  TransformerLayer<double> uni(store, "uni", shape, false, rng);
  TransformerLayer<double> multi(store, "multi", shape, true, rng);
  for (auto& e : store.entries()) {
    const auto& n = e.name;
    bool out_proj = n.find(".out.") != std::string::npos || n.find(".mlp.fc2.") != std::string::npos;
    if (out_proj) e.tensor->matrix().setZero();
  }
  Tensor<double> x = random_tensor({2 * 5, 8}, rng);
  Tensor<double> src = random_tensor({2 * 3, 8}, rng);
  Tape<double> tape;
  auto y = uni.forward(tape, tape.constant(x), AttentionMask::causal(), 2);
  CHECK(y.matrix() == x.matrix());
  CrossSource<double> cross{tape.constant(src), AttentionMask::none()};
  auto z = multi.forward(tape, tape.constant(x), AttentionMask::causal(), 2, cross);
  CHECK(z.matrix() == x.matrix());
}

TEST_CASE("unimodal layers own no cross-attention parameters") {
  Rng rng(10);
  ParameterStore<double> store;
  LayerShape shape{8, 2, 16};
  TransformerLayer<double> uni(store, "uni", shape, false, rng);
  Index uni_count = 0;
  for (auto& e : store.entries()) {
    CHECK(e.name.find("cross") == std::string::npos);
    uni_count += e.tensor->size();
  }
  CHECK_FALSE(uni.has_cross_attention());
  // Two layer norms, four d x d projections with bias, and the MLP.
  CHECK(uni_count == 2 * 16 + 4 * (64 + 8) + (8 * 16 + 16) + (16 * 8 + 8));

  ParameterStore<double> store2;
  TransformerLayer<double> multi(store2, "multi", shape, true, rng);
  Index cross = 0;
  for (auto& e : store2.entries()) {
    if (e.name.find("cross") != std::string::npos) cross += e.tensor->size();
  }
  CHECK(cross == 16 + 4 * (64 + 8));
}

TEST_CASE("cross source must be given iff the layer is multimodal") {
  Rng rng(11);
  ParameterStore<double> store;
  LayerShape shape{8, 2, 16};
  TransformerLayer<double> uni(store, "uni", shape, false, rng);
  TransformerLayer<double> multi(store, "multi", shape, true, rng);
  Tape<double> tape;
  auto x = tape.constant(random_tensor({4, 8}, rng));
  CrossSource<double> cross{tape.constant(random_tensor({3, 8}, rng)), AttentionMask::none()};
  CHECK_THROWS(uni.forward(tape, x, AttentionMask::causal(), 1, cross));
  CHECK_THROWS(multi.forward(tape, x, AttentionMask::causal(), 1));
}

TEST_CASE("gradient check through full transformer layers and the pooler") {
  Rng rng(12);
  ParameterStore<double> store;
  LayerShape shape{8, 2, 12};
  TransformerLayer<double> multi(store, "multi", shape, true, rng);
  AttentionalPooler<double> pooler(store, "pool", 2, 8, 2, rng);
  for (auto& e : store.entries()) {
    for (double& v : e.tensor->values()) v += rng.normal(0, 0.3);
  }
  const Index batch = 2;
  Tensor<double> x = random_tensor({batch * 3, 8}, rng);
  Tensor<double> src = random_tensor({batch * 4, 8}, rng);
  std::vector<NamedParam> params;
  for (auto& e : store.entries()) params.push_back({e.name, e.tensor.get()});
  params.push_back({"x", &x});
  params.push_back({"src", &src});
  auto loss = [&](Tape<double>& tape) {
    auto pooled = pooler.forward(tape, tape.param(src), batch, {4, 3});
    CrossSource<double> cross{pooled, AttentionMask::none()};
    auto y = multi.forward(tape, tape.param(x), AttentionMask::causal_padding({3, 2}), batch, cross);
    return coca::testing::weighted_sum(tape, y);
  };
  auto report = finite_diff_check(loss, params);
  for (const auto& p : report.params) {
    CAPTURE(p.name);
    CAPTURE(p.max_rel_error);
    CHECK(p.passed);
  }
  CHECK(report.max_rel_error <= 1e-3);
}
