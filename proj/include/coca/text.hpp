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
#include "coca/tokens.hpp"

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace coca {

// Token strings with stable contiguous ids; ids 0..3 are the reserved tokens.
class Vocab {
 public:
  Vocab();

  // Adds every word of every text, in first-seen order.
  static Vocab build(const std::vector<std::string>& texts);

  int add(const std::string& token);
  // [UNK] for unknown tokens.
  int id(const std::string& token) const;
  bool contains(const std::string& token) const { return ids_.count(token) > 0; }
  const std::string& token(int id) const;
  Index size() const { return static_cast<Index>(tokens_.size()); }

  // One token per line, reserved tokens excluded.
  void save(const std::string& path) const;
  static Vocab load(const std::string& path);

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

// ASCII-lowercased words; ASCII punctuation characters become single-character
// words. Other bytes (including UTF-8 sequences) pass through unchanged.
std::vector<std::string> split_words(const std::string& text);
std::string normalize_text(const std::string& text);

// [BOS] words... [EOS] then [PAD] up to max_len. Longer texts keep their first
// max_len - 2 words and still end in [EOS].
TokenSequence tokenize(const Vocab& vocab, const std::string& text, Index max_len);
// Words between [BOS] and [EOS], space-joined.
std::string detokenize(const Vocab& vocab, std::span<const int> ids);
std::string detokenize(const Vocab& vocab, const TokenSequence& seq);

const std::vector<std::string>& prompt_templates();
std::string apply_template(const std::string& templ, const std::string& fill);

// A random template over the shuffled, comma-joined labels.
std::string label_to_caption(const std::vector<std::string>& labels, Rng& rng);

}  // namespace coca
