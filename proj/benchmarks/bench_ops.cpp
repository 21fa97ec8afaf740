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

#include <benchmark/benchmark.h>

#include <vector>

#include "xmodlab/data.hpp"
#include "xmodlab/experiment.hpp"
#include "xmodlab/kernels.hpp"
#include "xmodlab/model.hpp"
#include "xmodlab/rng.hpp"
#include "xmodlab/train.hpp"

namespace {

using namespace xmodlab;

std::vector<float> random_vec(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<float> v(n);
  for (auto& x : v) x = static_cast<float>(rng.normal());
  return v;
}

void BM_GemmNN(benchmark::State& state) {
  const auto m = static_cast<std::size_t>(state.range(0));
  const auto k = static_cast<std::size_t>(state.range(1));
  const auto n = static_cast<std::size_t>(state.range(2));
  auto a = random_vec(m * k, 1), b = random_vec(k * n, 2);
  std::vector<float> c(m * n);
  for (auto _ : state) {
    kernels::gemm_nn(a.data(), b.data(), c.data(), m, k, n, false);
    benchmark::DoNotOptimize(c.data());
  }
  state.counters["flop/s"] =
      benchmark::Counter(2.0 * double(m * k * n), benchmark::Counter::kIsIterationInvariantRate);
}
// Shapes of the desk model: batch*seq rows against width, FF and vocabulary.
BENCHMARK(BM_GemmNN)->Args({512, 64, 64})->Args({512, 64, 128})->Args({512, 128, 64})->Args({512, 64, 330});

struct Desk {
  ExperimentConfig cfg = default_experiment();
  ToyData data = build_data(cfg, 1);
  std::vector<std::string> langs = pool_prefix(cfg, 8);
  BatchSampler sampler = make_sampler(cfg, data, langs, 1);

  XmodModel model(Variant v) const {
    ModelConfig mc = cfg.model;
    mc.variant = v;
    mc.vocab_size = data.pool_vocab.size();
    return XmodModel(mc, langs, 1);
  }
};

const Desk& desk() {
  static const Desk d;
  return d;
}

void BM_ForwardMlmBatch(benchmark::State& state) {
  const auto& d = desk();
  const auto m = d.model(static_cast<Variant>(state.range(0)));
  const auto batch = d.sampler.batch(0);
  for (auto _ : state) benchmark::DoNotOptimize(forward_mlm_batch(ModelView<float>(m), batch.tokens));
}
BENCHMARK(BM_ForwardMlmBatch)
    ->Arg(int(Variant::kXmod))
    ->Arg(int(Variant::kShared))
    ->Arg(int(Variant::kSharedNm))
    ->Unit(benchmark::kMillisecond);

// One pre-training update (forward, backward, clipping, Adam) on a mixed
// 8-language batch.
void BM_PretrainStep(benchmark::State& state) {
  const auto& d = desk();
  auto m = d.model(static_cast<Variant>(state.range(0)));
  BatchFn batches = [&](std::uint64_t step) {
    auto b = d.sampler.batch(step);
    return TrainBatch{std::move(b.tokens), std::move(b.labels)};
  };
  const auto regime = pretrain_regime(m, {1e-3, 0.0, 1});
  for (auto _ : state) benchmark::DoNotOptimize(run_regime(m, regime, batches, 1));
}
BENCHMARK(BM_PretrainStep)
    ->Arg(int(Variant::kXmod))
    ->Arg(int(Variant::kShared))
    ->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
