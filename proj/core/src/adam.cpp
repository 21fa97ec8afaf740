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

#include "xmodlab/adam.hpp"

#include <cmath>
#include <string>

#include "xmodlab/error.hpp"

namespace xmodlab {

template <typename T>
void adam_step(std::span<BasicTensor<T>* const> params, AdamState<T>& state,
               double lr) {
  if (state.m.empty() && state.t == 0) {
    state.m.resize(params.size());
    state.v.resize(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.m[i].assign(params[i]->numel(), T(0));
      state.v[i].assign(params[i]->numel(), T(0));
    }
  }
  if (state.m.size() != params.size()) {
    throw DimensionError("adam state tracks " + std::to_string(state.m.size()) +
                         " parameters, step got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const BasicTensor<T>& p = *params[i];
    if (state.m[i].size() != p.numel() ||
        (p.has_grad() && p.grad().size() != p.numel())) {
      throw DimensionError("adam shape mismatch for parameter " + std::to_string(i) +
                           " " + shape_string(p.shape()));
    }
  }
  const AdamConfig& c = state.config;
  state.t += 1;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.t));
  const T b1 = static_cast<T>(c.beta1), b2 = static_cast<T>(c.beta2);
  for (std::size_t i = 0; i < params.size(); ++i) {
    BasicTensor<T>& p = *params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    const bool decay = p.rank() == 2 && c.weight_decay > 0.0;
    const std::span<const T> g = p.grad();
    auto data = p.data();
    for (std::size_t j = 0; j < data.size(); ++j) {
      const T gj = g.empty() ? T(0) : g[j];
      m[j] = b1 * m[j] + (T(1) - b1) * gj;
      v[j] = b2 * v[j] + (T(1) - b2) * gj * gj;
      if (lr == 0.0) continue;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      double update = mhat / (std::sqrt(vhat) + c.eps);
      if (decay) update += c.weight_decay * data[j];
      data[j] = static_cast<T>(data[j] - lr * update);
    }
  }
}

template <typename T>
double clip_grad_norm(std::span<BasicTensor<T>* const> params, double max_norm) {
  double sq = 0;
  for (auto* p : params)
    for (T g : p->grad()) sq += static_cast<double>(g) * g;
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T f = static_cast<T>(max_norm / norm);
    for (auto* p : params)
      for (T& g : p->grad()) g *= f;
  }
  return norm;
}

template void adam_step<float>(std::span<BasicTensor<float>* const>,
                               AdamState<float>&, double);
template void adam_step<double>(std::span<BasicTensor<double>* const>,
                                AdamState<double>&, double);
template double clip_grad_norm<float>(std::span<BasicTensor<float>* const>, double);
template double clip_grad_norm<double>(std::span<BasicTensor<double>* const>, double);

}  // namespace xmodlab
