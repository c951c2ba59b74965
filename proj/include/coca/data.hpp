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

#include "coca/rng.hpp"
#include "coca/tensor.hpp"

#include <string>
#include <vector>

namespace coca {

enum class Source { kAnnotated, kAltText };

// Images [H, W, C] in [0, 1] with index-aligned captions, optional label sets
// and example ids that are unique across a corpus.
struct Dataset {
  Index height = 0;
  Index width = 0;
  Index channels = 0;
  std::vector<Tensor<float>> images;
  std::vector<std::string> captions;
  std::vector<std::vector<std::string>> labels;
  std::vector<std::uint64_t> ids;

  Index size() const { return static_cast<Index>(images.size()); }
  void validate() const;
};

// <prefix>.cdat, <prefix>.txt, and <prefix>.labels / <prefix>.ids when present.
void write_dataset(const std::string& prefix, const Dataset& data);
Dataset read_dataset(const std::string& prefix);

struct SyntheticSpec {
  Index n_classes = 8;
  Index per_class = 64;  // examples per class in each training source
  Index height = 16;
  Index width = 16;
  double noise = 0.1;    // Gaussian pixel noise std, clamped to [0, 1] afterwards
  Index test_per_combo = 2;  // held-out images per (class, color)
};

struct SyntheticCorpus {
  std::vector<std::string> class_names;
  std::vector<std::string> color_names;
  Dataset annotated;
  Dataset alt_text;
  Dataset test;  // every (class, color) pair, test_per_combo times, in class-major order
  std::vector<int> test_classes;
  std::vector<int> test_colors;
};

std::vector<std::string> synthetic_class_names(Index n_classes);
const std::vector<std::string>& synthetic_color_names();

// Noiseless pattern intensity in [0, 1], [H, W].
Matrix<float> class_pattern(Index cls, Index height, Index width);
// Tinted image of one (class, color) with optional noise.
Tensor<float> render_image(Index cls, Index color, Index height, Index width, double noise, Rng& rng);
std::string alt_text_caption(const std::string& class_name, const std::string& color_name, Rng& rng);

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed);

// Corpus directory layout: annotated.*, alt_text.*, test.*, classes.txt,
// colors.txt, manifest.txt (split of every id) and vocab.txt.
void write_corpus(const std::string& dir, const SyntheticCorpus& corpus);
SyntheticCorpus read_corpus(const std::string& dir);
// Words of all captions, prompts and class names, in a stable order.
std::vector<std::string> corpus_texts(const SyntheticCorpus& corpus);

struct Batch {
  std::vector<Tensor<float>> images;
  std::vector<std::string> captions;
  std::vector<std::uint64_t> ids;
  std::vector<Source> sources;
};

// Endless stream of half-annotated, half-alt-text batches. Each source walks
// its own seeded permutation and reshuffles when exhausted.
class BatchStream {
 public:
  BatchStream(const Dataset& annotated, const Dataset& alt_text, Index batch_size, std::uint64_t seed);

  Batch next();
  // Replays the stream so the next batch is number `step` (0-based).
  void seek(Index step);
  Index position() const { return position_; }

 private:
  struct Cursor {
    const Dataset* data = nullptr;
    Rng rng;
    std::vector<Index> order;
    std::size_t next = 0;
    void reset(std::uint64_t seed, std::uint64_t stream);
    Index take();
  };

  void take_half(Cursor& c, Source source, Batch& out);

  Index half_ = 0;
  std::uint64_t seed_ = 0;
  Cursor annotated_, alt_text_;
  Index position_ = 0;
};

}  // namespace coca
