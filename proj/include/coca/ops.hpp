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

#include "coca/tape.hpp"

#include <span>

namespace coca {

// Differentiable free functions over tape variables. All operate on the
// (rows x cols) matrix view of a tensor; "row" below means one slice along
// every axis but the last.
//
// Broadcasting rule for the binary elementwise ops: the right operand may be
// a single value, or have the same column count and a row count that divides
// the left operand's (it is tiled down the rows). A [d] bias or a [L,d]
// positional table added to a stacked [B*L,d] batch both fall out of this.

enum class Reduction { kSum, kMean };

template <typename S> Var<S> matmul(Var<S> a, Var<S> b);
template <typename S> Var<S> transpose(Var<S> a);
template <typename S> Var<S> add(Var<S> a, Var<S> b);
template <typename S> Var<S> sub(Var<S> a, Var<S> b);
template <typename S> Var<S> mul(Var<S> a, Var<S> b);
template <typename S> Var<S> scale(Var<S> a, S factor);
template <typename S> Var<S> exp(Var<S> a);
template <typename S> Var<S> gelu(Var<S> a);
// Softmax along the last axis with max subtraction.
template <typename S> Var<S> softmax(Var<S> a);
template <typename S> Var<S> log_softmax(Var<S> a);
template <typename S>
Var<S> layer_norm(Var<S> x, Var<S> gain, Var<S> bias, S eps = S(1e-5));
template <typename S> Var<S> embedding_lookup(Var<S> table, std::span<const int> ids);
// Negative log-likelihood of `targets` under row-wise softmax of `logits`.
// Rows whose target equals `ignore_index` contribute nothing; kMean divides by
// the number of non-ignored rows.
template <typename S>
Var<S> cross_entropy(Var<S> logits, std::span<const int> targets, Reduction reduction,
                     int ignore_index = -1);
template <typename S> Var<S> sum(Var<S> a);
template <typename S> Var<S> mean(Var<S> a);
template <typename S> Var<S> l2_normalize_rows(Var<S> a);
template <typename S> Var<S> tile_rows(Var<S> a, Index times);
template <typename S> Var<S> concat_rows(Var<S> a, Var<S> b);
template <typename S> Var<S> gather_rows(Var<S> a, std::span<const Index> rows);
template <typename S> Var<S> reshape(Var<S> a, Shape shape);

template <typename S> Var<S> operator+(Var<S> a, Var<S> b) { return add(a, b); }
template <typename S> Var<S> operator-(Var<S> a, Var<S> b) { return sub(a, b); }
template <typename S> Var<S> operator*(Var<S> a, Var<S> b) { return mul(a, b); }
template <typename S> Var<S> operator*(S factor, Var<S> a) { return scale(a, factor); }

}  // namespace coca
