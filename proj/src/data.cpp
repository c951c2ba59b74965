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
#include "coca/data.hpp"

#include "coca/text.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>

namespace coca {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

constexpr char kDatasetMagic[4] = {'C', 'D', 'A', 'T'};
constexpr std::uint32_t kDatasetVersion = 1;

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in, const std::string& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) throw IoError("truncated header in " + path);
  return v;
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw IoError("failed writing " + path);
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream in(s);
  while (std::getline(in, cur, sep)) out.push_back(cur);
  return out;
}

struct Rgb {
  float r, g, b;
};

const std::vector<Rgb>& palette() {
  static const std::vector<Rgb> colors = {
      {0.95f, 0.15f, 0.10f}, {0.10f, 0.85f, 0.20f}, {0.15f, 0.30f, 0.95f}, {0.95f, 0.90f, 0.10f}};
  return colors;
}

constexpr float kBackground = 0.08f;

}  // namespace

void Dataset::validate() const {
  const std::size_t n = images.size();
  if (captions.size() != n) throw Error("dataset: caption count differs from image count");
  if (!labels.empty() && labels.size() != n) throw Error("dataset: label count differs from image count");
  if (!ids.empty() && ids.size() != n) throw Error("dataset: id count differs from image count");
  for (const auto& im : images) {
    if (im.shape() != Shape{height, width, channels}) {
      throw ShapeError("dataset: image " + shape_str(im.shape()) + " does not match the header");
    }
  }
  for (const auto& c : captions) {
    if (c.find('\n') != std::string::npos) throw Error("dataset: captions must be single lines");
  }
}

void write_dataset(const std::string& prefix, const Dataset& data) {
  data.validate();
  {
    std::ofstream out(prefix + ".cdat", std::ios::binary);
    if (!out) throw IoError("cannot write " + prefix + ".cdat");
    out.write(kDatasetMagic, 4);
    put_u32(out, kDatasetVersion);
    put_u32(out, static_cast<std::uint32_t>(data.size()));
    put_u32(out, static_cast<std::uint32_t>(data.height));
    put_u32(out, static_cast<std::uint32_t>(data.width));
    put_u32(out, static_cast<std::uint32_t>(data.channels));
    for (const auto& im : data.images) {
      out.write(reinterpret_cast<const char*>(im.matrix().data()),
                static_cast<std::streamsize>(im.size() * sizeof(float)));
    }
    if (!out) throw IoError("failed writing " + prefix + ".cdat");
  }
  write_lines(prefix + ".txt", data.captions);
  if (!data.labels.empty()) {
    std::vector<std::string> lines;
    for (const auto& l : data.labels) lines.push_back(join(l, ","));
    write_lines(prefix + ".labels", lines);
  }
  if (!data.ids.empty()) {
    std::vector<std::string> lines;
    for (auto id : data.ids) lines.push_back(std::to_string(id));
    write_lines(prefix + ".ids", lines);
  }
}

Dataset read_dataset(const std::string& prefix) {
  const std::string path = prefix + ".cdat";
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read " + path);
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kDatasetMagic, 4) != 0) throw IoError(path + " is not a CDAT file");
  if (get_u32(in, path) != kDatasetVersion) throw IoError(path + ": unsupported version");
  Dataset data;
  const std::uint32_t count = get_u32(in, path);
  data.height = get_u32(in, path);
  data.width = get_u32(in, path);
  data.channels = get_u32(in, path);
  if (data.height == 0 || data.width == 0 || data.channels == 0) throw IoError(path + ": zero image extent");
  const auto expected = static_cast<std::uintmax_t>(24) +
                        static_cast<std::uintmax_t>(count) * static_cast<std::uintmax_t>(data.height * data.width *
                                                                                           data.channels) * 4;
  if (std::filesystem::file_size(path) != expected) throw IoError(path + ": payload length does not match header");
  for (std::uint32_t i = 0; i < count; ++i) {
    Tensor<float> im(Shape{data.height, data.width, data.channels});
    if (!in.read(reinterpret_cast<char*>(im.matrix().data()), static_cast<std::streamsize>(im.size() * sizeof(float)))) {
      throw IoError(path + ": truncated payload");
    }
    data.images.push_back(std::move(im));
  }
  data.captions = read_lines(prefix + ".txt");
  if (std::filesystem::exists(prefix + ".labels")) {
    for (const auto& line : read_lines(prefix + ".labels")) data.labels.push_back(split(line, ','));
  }
  if (std::filesystem::exists(prefix + ".ids")) {
    for (const auto& line : read_lines(prefix + ".ids")) data.ids.push_back(std::stoull(line));
  }
  try {
    data.validate();
  } catch (const Error& e) {
    throw IoError(prefix + ": " + e.what());
  }
  return data;
}

std::vector<std::string> synthetic_class_names(Index n_classes) {
  static const std::vector<std::string> named = {"stripe", "bar", "check", "ring", "cross", "slash", "dot", "frame"};
  if (n_classes < 2) throw ConfigError("synthetic data needs at least 2 classes");
  std::vector<std::string> out;
  for (Index i = 0; i < n_classes; ++i) {
    out.push_back(i < static_cast<Index>(named.size()) ? named[static_cast<std::size_t>(i)]
                                                        : "grating" + std::to_string(i));
  }
  return out;
}

const std::vector<std::string>& synthetic_color_names() {
  static const std::vector<std::string> names = {"red", "green", "blue", "yellow"};
  return names;
}

Matrix<float> class_pattern(Index cls, Index height, Index width) {
  Matrix<float> p = Matrix<float>::Zero(height, width);
  const double cy = (height - 1) / 2.0, cx = (width - 1) / 2.0;
  const double size = static_cast<double>(std::min(height, width));
  const Index period = std::max<Index>(2, height / 4);
  const Index band = std::max<Index>(1, static_cast<Index>(size / 8));
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      const double r = std::hypot(y - cy, x - cx);
      bool on = false;
      switch (cls) {
        case 0: on = (y % period) < period / 2; break;
        case 1: on = (x % period) < period / 2; break;
        case 2: on = ((y / period) + (x / period)) % 2 == 0; break;
        case 3: on = r >= 0.22 * size && r <= 0.42 * size; break;
        case 4: on = std::abs(y - cy) < band || std::abs(x - cx) < band; break;
        case 5: on = std::abs(static_cast<double>(y) * width / height - x) <= band; break;
        case 6: on = r < 0.25 * size; break;
        case 7: on = y < band || x < band || y >= height - band || x >= width - band; break;
        default: {
          const double theta = 0.7 * static_cast<double>(cls);
          const double freq = 1.0 + static_cast<double>(cls % 3);
          const double u = (y * std::cos(theta) + x * std::sin(theta)) / size;
          p(y, x) = static_cast<float>(0.5 + 0.5 * std::sin(2 * M_PI * freq * u + 0.3 * static_cast<double>(cls)));
          continue;
        }
      }
      p(y, x) = on ? 1.0f : 0.0f;
    }
  }
  return p;
}

Tensor<float> render_image(Index cls, Index color, Index height, Index width, double noise, Rng& rng) {
  const auto& pal = palette();
  if (color < 0 || color >= static_cast<Index>(pal.size())) throw Error("color index out of range");
  const Rgb c = pal[static_cast<std::size_t>(color)];
  const float tint[3] = {c.r, c.g, c.b};
  Matrix<float> p = class_pattern(cls, height, width);
  Tensor<float> im(Shape{height, width, 3});
  auto& m = im.matrix();
  for (Index y = 0; y < height; ++y) {
    for (Index x = 0; x < width; ++x) {
      for (Index ch = 0; ch < 3; ++ch) {
        double v = kBackground + p(y, x) * (tint[ch] - kBackground);
        if (noise > 0) v += rng.normal(0.0, noise);
        m(y * width + x, ch) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }
  return im;
}

std::string alt_text_caption(const std::string& class_name, const std::string& color_name, Rng& rng) {
  static const std::vector<std::string> leads = {"nice", "my", "look at this", "found a", "random", "just a"};
  static const std::vector<std::string> tails = {"pattern", "design", "on display", "online", "again", "today", ""};
  std::string out = leads[rng.bounded(static_cast<std::uint32_t>(leads.size()))];
  if (!color_name.empty() && rng.uniform() < 0.7) out += " " + color_name;
  out += " " + class_name;
  const auto& tail = tails[rng.bounded(static_cast<std::uint32_t>(tails.size()))];
  if (!tail.empty()) out += " " + tail;
  return out;
}

SyntheticCorpus generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed) {
  if (spec.per_class < 1 || spec.test_per_combo < 1) throw ConfigError("synthetic counts must be positive");
  if (spec.height < 4 || spec.width < 4) throw ConfigError("synthetic images must be at least 4x4");
  if (spec.noise < 0) throw ConfigError("noise must be nonnegative");
  SyntheticCorpus corpus;
  corpus.class_names = synthetic_class_names(spec.n_classes);
  corpus.color_names = synthetic_color_names();
  const Index n_colors = static_cast<Index>(corpus.color_names.size());
  Rng root(seed);
  Rng pixels = root.split(), captions = root.split();
  std::uint64_t next_id = 0;

  auto init = [&](Dataset& d) {
    d.height = spec.height;
    d.width = spec.width;
    d.channels = 3;
  };
  init(corpus.annotated);
  init(corpus.alt_text);
  init(corpus.test);

  for (Index cls = 0; cls < spec.n_classes; ++cls) {
    const auto& name = corpus.class_names[static_cast<std::size_t>(cls)];
    for (Index i = 0; i < spec.per_class; ++i) {
      const Index color = i % n_colors;
      const auto& color_name = corpus.color_names[static_cast<std::size_t>(color)];
      corpus.annotated.images.push_back(render_image(cls, color, spec.height, spec.width, spec.noise, pixels));
      corpus.annotated.labels.push_back({name, color_name});
      corpus.annotated.captions.push_back(label_to_caption({name, color_name}, captions));
      corpus.annotated.ids.push_back(next_id++);
    }
    for (Index i = 0; i < spec.per_class; ++i) {
      const Index color = static_cast<Index>(pixels.bounded(static_cast<std::uint32_t>(n_colors)));
      const auto& color_name = corpus.color_names[static_cast<std::size_t>(color)];
      corpus.alt_text.images.push_back(render_image(cls, color, spec.height, spec.width, spec.noise, pixels));
      corpus.alt_text.labels.push_back({name, color_name});
      corpus.alt_text.captions.push_back(alt_text_caption(name, color_name, captions));
      corpus.alt_text.ids.push_back(next_id++);
    }
  }
  for (Index cls = 0; cls < spec.n_classes; ++cls) {
    const auto& name = corpus.class_names[static_cast<std::size_t>(cls)];
    for (Index color = 0; color < n_colors; ++color) {
      const auto& color_name = corpus.color_names[static_cast<std::size_t>(color)];
      for (Index r = 0; r < spec.test_per_combo; ++r) {
        corpus.test.images.push_back(render_image(cls, color, spec.height, spec.width, spec.noise, pixels));
        corpus.test.labels.push_back({name, color_name});
        corpus.test.captions.push_back(label_to_caption({name, color_name}, captions));
        corpus.test.ids.push_back(next_id++);
        corpus.test_classes.push_back(static_cast<int>(cls));
        corpus.test_colors.push_back(static_cast<int>(color));
      }
    }
  }
  return corpus;
}

void write_corpus(const std::string& dir, const SyntheticCorpus& corpus) {
  std::filesystem::create_directories(dir);
  write_dataset(dir + "/annotated", corpus.annotated);
  write_dataset(dir + "/alt_text", corpus.alt_text);
  write_dataset(dir + "/test", corpus.test);
  write_lines(dir + "/classes.txt", corpus.class_names);
  write_lines(dir + "/colors.txt", corpus.color_names);
  std::vector<std::string> manifest;
  for (const auto* d : {&corpus.annotated, &corpus.alt_text}) {
    for (auto id : d->ids) manifest.push_back("train " + std::to_string(id));
  }
  for (auto id : corpus.test.ids) manifest.push_back("test " + std::to_string(id));
  write_lines(dir + "/manifest.txt", manifest);
  Vocab::build(corpus_texts(corpus)).save(dir + "/vocab.txt");
}

SyntheticCorpus read_corpus(const std::string& dir) {
  SyntheticCorpus corpus;
  corpus.annotated = read_dataset(dir + "/annotated");
  corpus.alt_text = read_dataset(dir + "/alt_text");
  corpus.test = read_dataset(dir + "/test");
  corpus.class_names = read_lines(dir + "/classes.txt");
  corpus.color_names = read_lines(dir + "/colors.txt");
  auto index_of = [](const std::vector<std::string>& names, const std::string& n) {
    auto it = std::find(names.begin(), names.end(), n);
    if (it == names.end()) throw IoError("unknown label '" + n + "' in corpus");
    return static_cast<int>(it - names.begin());
  };
  if (corpus.test.labels.size() != corpus.test.images.size()) throw IoError(dir + ": test split needs labels");
  for (const auto& l : corpus.test.labels) {
    if (l.size() != 2) throw IoError(dir + ": test labels must be 'class,color'");
    corpus.test_classes.push_back(index_of(corpus.class_names, l[0]));
    corpus.test_colors.push_back(index_of(corpus.color_names, l[1]));
  }
  return corpus;
}

std::vector<std::string> corpus_texts(const SyntheticCorpus& corpus) {
  std::vector<std::string> texts;
  for (const auto& n : corpus.class_names) {
    for (const auto& t : prompt_templates()) texts.push_back(apply_template(t, n));
  }
  for (const auto* d : {&corpus.annotated, &corpus.alt_text, &corpus.test}) {
    texts.insert(texts.end(), d->captions.begin(), d->captions.end());
  }
  return texts;
}

void BatchStream::Cursor::reset(std::uint64_t seed, std::uint64_t stream) {
  rng = Rng(seed, stream);
  order.resize(static_cast<std::size_t>(data->size()));
  std::iota(order.begin(), order.end(), Index{0});
  rng.shuffle(std::span<Index>(order));
  next = 0;
}

Index BatchStream::Cursor::take() {
  if (next == order.size()) {
    rng.shuffle(std::span<Index>(order));
    next = 0;
  }
  return order[next++];
}

BatchStream::BatchStream(const Dataset& annotated, const Dataset& alt_text, Index batch_size, std::uint64_t seed)
    : half_(batch_size / 2), seed_(seed) {
  if (batch_size < 2 || batch_size % 2 != 0) {
    throw ConfigError("batch size must be even and positive, got " + std::to_string(batch_size));
  }
  if (annotated.size() == 0 || alt_text.size() == 0) throw ConfigError("both sources need examples");
  annotated_.data = &annotated;
  alt_text_.data = &alt_text;
  seek(0);
}

void BatchStream::take_half(Cursor& c, Source source, Batch& out) {
  for (Index i = 0; i < half_; ++i) {
    const auto idx = static_cast<std::size_t>(c.take());
    out.images.push_back(c.data->images[idx]);
    out.captions.push_back(c.data->captions[idx]);
    out.ids.push_back(c.data->ids.empty() ? idx : c.data->ids[idx]);
    out.sources.push_back(source);
  }
}

Batch BatchStream::next() {
  Batch b;
  take_half(annotated_, Source::kAnnotated, b);
  take_half(alt_text_, Source::kAltText, b);
  ++position_;
  return b;
}

void BatchStream::seek(Index step) {
  annotated_.reset(seed_, 1);
  alt_text_.reset(seed_, 2);
  for (Index s = 0; s < step; ++s) {
    for (Index i = 0; i < half_; ++i) {
      annotated_.take();
      alt_text_.take();
    }
  }
  position_ = step;
}

}  // namespace coca
