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

#include "coca/common.hpp"

#include <vector>

namespace coca {

inline constexpr int kPadId = 0;
inline constexpr int kBosId = 1;
inline constexpr int kEosId = 2;
inline constexpr int kUnkId = 3;
inline constexpr int kNumReserved = 4;

// A tokenized caption: [BOS] w1 .. wn [EOS] followed by [PAD]s.
struct TokenSequence {
  std::vector<int> ids;
  Index length = 0;  // real tokens including [BOS] and [EOS]

  Index padded_length() const { return static_cast<Index>(ids.size()); }
};

}  // namespace coca
