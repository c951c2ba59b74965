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
#include "coca/train.hpp"

#include "test_helpers.hpp"

#include <cstdio>
#include <filesystem>

using namespace coca;

namespace {

struct Setup {
  SyntheticCorpus corpus;
  Vocab vocab;
  CoCaConfig config;
};

Setup small_setup(Index steps = 40) {
  Setup s;
  SyntheticSpec spec;
  spec.n_classes = 4;
  spec.per_class = 6;
  spec.height = spec.width = 8;
  s.corpus = generate_synthetic(spec, 11);
  s.vocab = Vocab::build(corpus_texts(s.corpus));
  s.config = preset("coca-micro");
  s.config.text.vocab_size = 64;
  s.config.text.max_len = 12;
  s.config.train.batch_size = 8;
  s.config.train.steps = steps;
  s.config.train.peak_lr = 3e-3;
  return s;
}

double quadratic(const Tensor<double>& p) { return 0.5 * p.matrix().squaredNorm(); }

}  // namespace

TEST_CASE("schedule examples") {
  const auto cfg = preset("coca");
  Schedule s{cfg.train.peak_lr, cfg.train.warmup_fraction, cfg.train.steps};
  CHECK(std::abs(s.lr_at(cfg.train.steps / 50) - 8e-4) < 1e-15);
  CHECK(s.lr_at(cfg.train.steps) == 0.0);
  CHECK(s.lr_at(0) == 0.0);
  CHECK(std::abs(s.lr_at(cfg.train.steps / 100) - 4e-4) < 1e-15);
  CHECK_THROWS_AS(s.lr_at(-1), Error);
  CHECK_THROWS_AS(s.lr_at(cfg.train.steps + 1), Error);
}

TEST_CASE("schedule is continuous and peaks at peak_lr") {
  Schedule s{3e-4, 0.02, 2000};
  double best = 0;
  for (Index t = 1; t <= 2000; ++t) {
    CHECK(std::abs(s.lr_at(t) - s.lr_at(t - 1)) <= 3e-4 / 40 + 1e-15);
    best = std::max(best, s.lr_at(t));
  }
  CHECK(best == 3e-4);
  Schedule flat{1e-3, 0.0, 10};
  CHECK(flat.lr_at(0) == 1e-3);
  CHECK(std::abs(flat.lr_at(5) - 5e-4) < 1e-15);
}

TEST_CASE("AdamW first step is lr times the gradient sign") {
  ParameterStore<double> store;
  Rng rng(1);
  auto& p = store.create("p", {4}, Init::kZeros, rng);
  p.matrix() << 1.0, -2.0, 3.0, 0.5;
  const Matrix<double> start = p.matrix();
  p.grad() = Matrix<double>(1, 4);
  p.grad() << 0.3, -5.0, 1e-2, -1e3;
  AdamW<double> opt(store, {0.9, 0.999, 1e-8, 0.0});
  opt.step(0.1);
  Matrix<double> expected(1, 4);
  expected << -0.1, 0.1, -0.1, 0.1;
  CHECK(((p.matrix() - start) - expected).cwiseAbs().maxCoeff() < 1e-6);
  CHECK(opt.steps() == 1);
}

TEST_CASE("AdamW with zero gradient and no decay is the identity") {
  ParameterStore<double> store;
  Rng rng(2);
  auto& p = store.create("p", {3, 2}, Init::kNormal, rng, 1.0);
  const Matrix<double> start = p.matrix();
  AdamW<double> opt(store, {0.9, 0.999, 1e-8, 0.0});
  for (int i = 0; i < 5; ++i) {
    p.zero_grad();
    opt.step(0.1);
  }
  CHECK(p.matrix() == start);
}

TEST_CASE("AdamW weight decay is decoupled") {
  ParameterStore<double> store;
  Rng rng(3);
  auto& p = store.create("p", {2}, Init::kOnes, rng);
  p.zero_grad();
  AdamW<double> opt(store, {0.9, 0.999, 1e-8, 0.5});
  opt.step(0.1);
  CHECK(std::abs(p.matrix()(0, 0) - 0.95) < 1e-15);
}

TEST_CASE("AdamW decreases a quadratic bowl monotonically") {
  ParameterStore<double> store;
  Rng rng(4);
  auto& p = store.create("p", {5}, Init::kNormal, rng, 1.0);
  AdamW<double> opt(store, {0.9, 0.999, 1e-8, 0.0});
  double prev = quadratic(p);
  for (int i = 0; i < 10; ++i) {
    p.grad() = p.matrix();
    opt.step(0.05);
    const double now = quadratic(p);
    CHECK(now < prev);
    prev = now;
  }
}

TEST_CASE("AdamW rejects frozen gradients and non-finite gradients before updating") {
  ParameterStore<double> store;
  Rng rng(5);
  auto& a = store.create("a", {2}, Init::kOnes, rng);
  auto& b = store.create("frozen.b", {2}, Init::kOnes, rng);
  AdamW<double> opt(store, {});
  store.set_frozen("frozen", true);
  a.grad().setConstant(1.0);
  b.grad().setConstant(1.0);
  CHECK_THROWS_AS(opt.step(0.1), Error);
  CHECK(a.matrix() == Matrix<double>::Ones(1, 2));

  b.grad().setZero();
  a.grad()(0, 0) = std::nan("");
  CHECK_THROWS_AS(opt.step(0.1), NumericError);
  CHECK(a.matrix() == Matrix<double>::Ones(1, 2));
  CHECK(opt.steps() == 0);

  a.grad().setConstant(1.0);
  opt.step(0.1);
  CHECK(b.matrix() == Matrix<double>::Ones(1, 2));
  CHECK(a.matrix()(0, 0) < 1.0);
}

TEST_CASE("checkpoint round trip is bitwise") {
  Rng rng(6);
  std::vector<NamedTensor> tensors = {{"a", testing::random_tensor_f({3, 4}, rng)},
                                      {"b.c", testing::random_tensor_f({7}, rng)},
                                      {"d", testing::random_tensor_f({2, 3, 2}, rng)}};
  tensors[1].tensor.matrix()(0, 0) = -0.0f;
  const std::string bytes = encode_checkpoint(tensors);
  auto back = decode_checkpoint(bytes);
  REQUIRE(back.size() == tensors.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    CHECK(back[i].name == tensors[i].name);
    CHECK(back[i].tensor.shape() == tensors[i].tensor.shape());
    CHECK(std::memcmp(back[i].tensor.matrix().data(), tensors[i].tensor.matrix().data(),
                      static_cast<std::size_t>(tensors[i].tensor.size()) * sizeof(float)) == 0);
  }
  CHECK(encode_checkpoint(back) == bytes);

  const auto path = (std::filesystem::temp_directory_path() / "coca_test_ckpt.bin").string();
  save_checkpoint(path, tensors);
  CHECK(read_file(path) == bytes);
  save_checkpoint(path, load_checkpoint(path));
  CHECK(read_file(path) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint corruption is rejected") {
  Rng rng(7);
  const std::string bytes = encode_checkpoint({{"w", testing::random_tensor_f({4, 4}, rng)}});
  std::string flipped = bytes;
  flipped[30] ^= 0x01;
  CHECK_THROWS_AS(decode_checkpoint(flipped), IoError);
  std::string bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_checkpoint(bad_magic), IoError);
  std::string bad_version = bytes;
  bad_version[4] = 9;
  CHECK_THROWS_AS(decode_checkpoint(bad_version), IoError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 9)), IoError);
  CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, 10)), IoError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/ckpt.bin"), IoError);
}

TEST_CASE("model tensors load by exact name and shape") {
  auto s = small_setup();
  CoCaModel<float> a(s.config, 1), b(s.config, 2);
  load_model_tensors(b, model_tensors(a));
  CHECK(parameter_checksum(a.parameters()) == parameter_checksum(b.parameters()));
  auto tensors = model_tensors(a);
  tensors.pop_back();
  CHECK_THROWS_AS(load_model_tensors(b, tensors), IoError);
  auto other = s.config;
  other.text.d_model = 16;
  CoCaModel<float> c(other, 1);
  CHECK_THROWS_AS(load_model_tensors(c, model_tensors(a)), IoError);
}

TEST_CASE("loss curve CSV round trip") {
  std::vector<CurvePoint> pts = {{1, 3.25, 1.0 / 3.0, 2.0, 1e-4}, {2, 0.1, 0.2, 0.3, 0.0}};
  std::string text = curve_csv_header() + "\n";
  for (const auto& p : pts) text += curve_csv_line(p) + "\n";
  auto back = parse_curve_csv(text);
  REQUIRE(back.size() == 2);
  CHECK(back[0].con == pts[0].con);
  CHECK(back[1].lr == 0.0);
  CHECK_THROWS_AS(parse_curve_csv("step,total\n"), IoError);
  CHECK_THROWS_AS(parse_curve_csv(curve_csv_header() + "\n1,2,3\n"), IoError);
}

TEST_CASE("trainer rejects incompatible data") {
  auto s = small_setup();
  auto cfg = s.config;
  cfg.text.vocab_size = 8;
  CHECK_THROWS_AS(Trainer(cfg, s.vocab, s.corpus.annotated, s.corpus.alt_text, 1), ConfigError);
  cfg = s.config;
  cfg.image.resolution = 16;
  CHECK_THROWS_AS(Trainer(cfg, s.vocab, s.corpus.annotated, s.corpus.alt_text, 1), ConfigError);
}

TEST_CASE("training reduces the loss and is deterministic") {
  auto s = small_setup(150);
  Trainer a(s.config, s.vocab, s.corpus.annotated, s.corpus.alt_text, 5);
  auto curve = a.run();
  REQUIRE(curve.size() == 150);
  double head = 0, tail = 0;
  for (int i = 0; i < 10; ++i) {
    head += curve[static_cast<std::size_t>(i)].total;
    tail += curve[curve.size() - 1 - static_cast<std::size_t>(i)].total;
  }
  CHECK(tail < head);
  CHECK(curve.back().lr == 0.0);
  CHECK_THROWS_AS(a.step(), Error);

  Trainer b(s.config, s.vocab, s.corpus.annotated, s.corpus.alt_text, 5);
  auto again = b.run(40);
  for (std::size_t i = 0; i < again.size(); ++i) {
    CHECK(again[i].total == curve[i].total);
    CHECK(again[i].con == curve[i].con);
    CHECK(again[i].cap == curve[i].cap);
  }
}

TEST_CASE("captioning-only weights train") {
  auto s = small_setup(10);
  s.config.losses.lambda_con = 0;
  Trainer t(s.config, s.vocab, s.corpus.annotated, s.corpus.alt_text, 3);
  auto curve = t.run();
  CHECK(curve.size() == 10);
  for (const auto& p : curve) CHECK(p.total == doctest::Approx(2 * p.cap).epsilon(1e-6));
}

TEST_CASE("resumed training matches an uninterrupted run") {
  auto s = small_setup(30);
  Trainer full(s.config, s.vocab, s.corpus.annotated, s.corpus.alt_text, 9);
  auto reference = full.run();

  Trainer first(s.config, s.vocab, s.corpus.annotated, s.corpus.alt_text, 9);
  first.run(13);
  const std::string bytes = encode_checkpoint(first.state());

  Trainer resumed(s.config, s.vocab, s.corpus.annotated, s.corpus.alt_text, 9);
  resumed.restore(decode_checkpoint(bytes));
  CHECK(resumed.steps_done() == 13);
  auto rest = resumed.run();
  REQUIRE(rest.size() == 17);
  for (std::size_t i = 0; i < rest.size(); ++i) {
    const auto& want = reference[i + 13];
    CHECK(rest[i].step == want.step);
    CHECK(curve_csv_line(rest[i]) == curve_csv_line(want));
  }
  CHECK(encode_checkpoint(resumed.state()) == encode_checkpoint(full.state()));
}

TEST_CASE("a NaN batch aborts with the last good parameters intact") {
  auto s = small_setup(10);
  Trainer t(s.config, s.vocab, s.corpus.annotated, s.corpus.alt_text, 4);
  t.hooks().inject_nan_at = 4;
  t.run(3);
  const std::string good = encode_checkpoint(t.state());
  CHECK_THROWS_AS(t.step(), NumericError);
  CHECK(t.steps_done() == 3);
  CHECK(encode_checkpoint(t.state()) == good);
}

TEST_CASE("state restore validates its input") {
  auto s = small_setup(10);
  Trainer t(s.config, s.vocab, s.corpus.annotated, s.corpus.alt_text, 4);
  auto state = t.state();
  auto no_step = state;
  no_step.pop_back();
  CHECK_THROWS_AS(t.restore(no_step), IoError);
  auto too_far = state;
  too_far.back().tensor.matrix()(0, 0) = 11;
  CHECK_THROWS_AS(t.restore(too_far), IoError);
}
