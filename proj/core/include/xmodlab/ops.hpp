// Copyright 2026 The xmodlab Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef XMODLAB_OPS_HPP_
#define XMODLAB_OPS_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "xmodlab/autodiff.hpp"
#include "xmodlab/rng.hpp"
#include "xmodlab/tensor.hpp"

namespace xmodlab {

// Target value skipped by cross_entropy.
inline constexpr int kIgnoreIndex = -1;

enum class Reduction { kMean, kSum };

// Differentiable ops. All of them record onto the record of their first
// argument and return the output node. Tensors passed as 2-D operands are
// interpreted as rows() x cols().

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b);

// a[m x k] * b[n x k]^T
template <typename T>
Var<T> matmul_transposed(Var<T> a, Var<T> b);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

// x[r, :] + bias for every row r.
template <typename T>
Var<T> add_bias(Var<T> x, Var<T> bias);

// x * w + bias, w of shape [in x out].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> sum(Var<T> x);

template <typename T>
Var<T> softmax(Var<T> x, std::size_t axis);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps);

// Exact-erf GELU.
template <typename T>
Var<T> gelu(Var<T> x);

template <typename T>
Var<T> embedding_lookup(Var<T> table, std::span<const int> ids);

// Mean (or sum) of -log softmax(logits)[target] over non-ignored rows. When
// every row is ignored the result is 0 and `all_ignored` is set.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> targets,
                     Reduction reduction = Reduction::kMean,
                     bool* all_ignored = nullptr);

// Inverted dropout; identity when rate == 0.
template <typename T>
Var<T> dropout(Var<T> x, double rate, Rng& rng);

// out[i, :] = x[rows[i], :]
template <typename T>
Var<T> gather_rows(Var<T> x, std::span<const std::size_t> rows);

// out = base; out[rows[i], :] += src[i, :]
template <typename T>
Var<T> index_add_rows(Var<T> base, Var<T> src,
                      std::span<const std::size_t> rows);

struct AttentionShape {
  std::size_t batch = 1;
  std::size_t seq_len = 1;
  std::size_t heads = 1;
};

// Scaled dot-product self-attention over [batch*seq_len x d] projections,
// split into `heads` heads. key_valid[b*seq_len + j] == 0 excludes key j of
// sequence b (padding); excluded keys receive exactly zero weight.
template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, AttentionShape shape,
                 std::span<const std::uint8_t> key_valid);

// Plain-value helpers shared by ops, metrics and tests.
template <typename T>
T gelu_value(T x);

}  // namespace xmodlab

#endif  // XMODLAB_OPS_HPP_
