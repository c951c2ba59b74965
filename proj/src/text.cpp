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
#include "coca/text.hpp"

#include "coca/common.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>

namespace coca {

namespace {

const char* const kReserved[kNumReserved] = {"[PAD]", "[BOS]", "[EOS]", "[UNK]"};

bool is_space(unsigned char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v'; }

bool is_punct(unsigned char c) { return c < 0x80 && std::ispunct(c); }

}  // namespace

Vocab::Vocab() {
  for (const char* t : kReserved) add(t);
}

Vocab Vocab::build(const std::vector<std::string>& texts) {
  Vocab v;
  for (const auto& t : texts) {
    for (const auto& w : split_words(t)) v.add(w);
  }
  return v;
}

int Vocab::add(const std::string& token) {
  auto it = ids_.find(token);
  if (it != ids_.end()) return it->second;
  const int id = static_cast<int>(tokens_.size());
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

int Vocab::id(const std::string& token) const {
  auto it = ids_.find(token);
  return it == ids_.end() ? kUnkId : it->second;
}

const std::string& Vocab::token(int id) const {
  if (id < 0 || id >= static_cast<int>(tokens_.size())) throw Error("token id out of range");
  return tokens_[static_cast<std::size_t>(id)];
}

void Vocab::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write vocab " + path);
  for (std::size_t i = kNumReserved; i < tokens_.size(); ++i) out << tokens_[i] << '\n';
  if (!out) throw IoError("failed writing vocab " + path);
}

Vocab Vocab::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot read vocab " + path);
  Vocab v;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) throw IoError("empty token line in vocab " + path);
    if (v.contains(line)) throw IoError("duplicate token '" + line + "' in vocab " + path);
    v.add(line);
  }
  return v;
}

std::vector<std::string> split_words(const std::string& text) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    auto c = static_cast<unsigned char>(ch);
    if (is_space(c)) {
      flush();
    } else if (is_punct(c)) {
      flush();
      words.emplace_back(1, ch);
    } else {
      cur.push_back(c < 0x80 ? static_cast<char>(std::tolower(c)) : ch);
    }
  }
  flush();
  return words;
}

std::string normalize_text(const std::string& text) {
  std::string out;
  for (const auto& w : split_words(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

TokenSequence tokenize(const Vocab& vocab, const std::string& text, Index max_len) {
  if (max_len < 2) throw ShapeError("tokenize: max_len must hold [BOS] and [EOS]");
  auto words = split_words(text);
  const std::size_t keep = std::min(words.size(), static_cast<std::size_t>(max_len - 2));
  TokenSequence seq;
  seq.ids.assign(static_cast<std::size_t>(max_len), kPadId);
  seq.ids[0] = kBosId;
  for (std::size_t i = 0; i < keep; ++i) seq.ids[i + 1] = vocab.id(words[i]);
  seq.ids[keep + 1] = kEosId;
  seq.length = static_cast<Index>(keep + 2);
  return seq;
}

std::string detokenize(const Vocab& vocab, std::span<const int> ids) {
  std::string out;
  for (int id : ids) {
    if (id == kBosId || id == kPadId) continue;
    if (id == kEosId) break;
    if (!out.empty()) out.push_back(' ');
    out += vocab.token(id);
  }
  return out;
}

std::string detokenize(const Vocab& vocab, const TokenSequence& seq) {
  return detokenize(vocab, std::span<const int>(seq.ids.data(), static_cast<std::size_t>(seq.length)));
}

const std::vector<std::string>& prompt_templates() {
  static const std::vector<std::string> templates = {
      "a photo of the {}",     "a photo of a {}",          "a picture of the {}", "a picture of a {}",
      "an image of the {}",    "a rendering of the {}",    "a close photo of the {}",
      "a small picture of a {}",
  };
  return templates;
}

std::string apply_template(const std::string& templ, const std::string& fill) {
  auto pos = templ.find("{}");
  if (pos == std::string::npos) throw Error("template without a {} slot: " + templ);
  return templ.substr(0, pos) + fill + templ.substr(pos + 2);
}

std::string label_to_caption(const std::vector<std::string>& labels, Rng& rng) {
  if (labels.empty()) throw Error("label_to_caption: empty label set");
  std::vector<std::string> shuffled = labels;
  rng.shuffle(std::span<std::string>(shuffled));
  std::string joined;
  for (const auto& l : shuffled) {
    if (!joined.empty()) joined += ", ";
    joined += l;
  }
  const auto& templates = prompt_templates();
  return apply_template(templates[rng.bounded(static_cast<std::uint32_t>(templates.size()))], joined);
}

}  // namespace coca
