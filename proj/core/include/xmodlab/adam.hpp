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

#ifndef XMODLAB_ADAM_HPP_
#define XMODLAB_ADAM_HPP_

#include <cstdint>
#include <span>
#include <vector>

#include "xmodlab/tensor.hpp"

namespace xmodlab {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-6;
  double weight_decay = 0.01;
};

// Moments for an ordered list of parameters. The list given to adam_step must
// keep the same order and shapes across calls.
template <typename T>
struct AdamState {
  AdamConfig config;
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t t = 0;
};

// One Adam update with bias correction. Decoupled weight decay is applied to
// rank-2 tensors only; biases and LayerNorm affines are not decayed.
// Parameters without a gradient buffer are treated as having zero gradient.
template <typename T>
void adam_step(std::span<BasicTensor<T>* const> params, AdamState<T>& state,
               double lr);

// Scales every gradient so that the global L2 norm is at most max_norm.
// Returns the norm before clipping.
template <typename T>
double clip_grad_norm(std::span<BasicTensor<T>* const> params, double max_norm);

}  // namespace xmodlab

#endif  // XMODLAB_ADAM_HPP_
