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

#ifndef XMODLAB_TRAIN_HPP_
#define XMODLAB_TRAIN_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "xmodlab/adam.hpp"
#include "xmodlab/model.hpp"
#include "xmodlab/toy_lingua.hpp"

namespace xmodlab {

struct ScheduleSpec {
  double peak_lr = 7e-4;
  double warmup_fraction = 0.06;
  std::size_t total_steps = 0;
};

std::size_t warmup_steps(const ScheduleSpec& s);

// Linear warmup to the peak, then linear decay to zero at total_steps.
double lr_at(const ScheduleSpec& s, std::size_t step);

enum class BudgetMode { kEqualTotalSteps, kEqualPerLanguageExamples };

std::string to_string(BudgetMode m);
BudgetMode parse_budget_mode(const std::string& s);

struct LanguageSet {
  std::vector<std::string> langs;
  std::vector<double> proportions;
};

// Probability mass of `reference` languages under alpha sampling of `set`.
double reference_mass(const LanguageSet& set, std::span<const std::string> reference,
                      double alpha);

// Steps for every set. Equal-total: base_steps each. Equal-per-language:
// base_steps * p_ref(smallest set) / p_ref(set), rounded to nearest.
std::vector<std::size_t> scaled_steps(BudgetMode mode, std::size_t base_steps,
                                      std::span<const LanguageSet> sets,
                                      std::span<const std::string> reference, double alpha);

enum class RegimeKind { kPretrain, kExtend, kFinetune, kAdapterBaseline };

std::string to_string(RegimeKind k);

struct TrainRegime {
  RegimeKind kind = RegimeKind::kPretrain;
  std::vector<ParameterRole> trainable;
  ScheduleSpec schedule;
  std::string source_lang;             // finetune
  std::vector<std::string> new_langs;  // extend / adapter phase
  double clip_norm = 1.0;
  AdamConfig adam;
};

// Regimes with their role contracts, derived from the model's current roles.
TrainRegime pretrain_regime(const XmodModel& model, ScheduleSpec schedule);
TrainRegime extend_regime(const XmodModel& model, std::vector<std::string> new_langs,
                          ScheduleSpec schedule);
TrainRegime finetune_regime(const XmodModel& model, std::string source_lang,
                            ScheduleSpec schedule);
TrainRegime adapter_regime(const XmodModel& model, std::string lang, ScheduleSpec schedule);

struct TrainBatch {
  TokenBatch tokens;
  std::vector<int> labels;
};

using BatchFn = std::function<TrainBatch(std::uint64_t step)>;

enum class Objective { kMlm, kTask };

struct LossLogEntry {
  std::size_t step = 0;
  double lr = 0;
  double loss = 0;
  std::uint64_t lang_mix_hash = 0;
};

struct RunOptions {
  Objective objective = Objective::kMlm;
  // Called with the number of completed steps whenever it is a multiple of
  // checkpoint_every.
  std::size_t checkpoint_every = 0;
  std::function<void(std::size_t, const XmodModel&)> on_checkpoint;
};

// Runs the regime with Adam over exactly the trainable roles; every other
// parameter stays bit-identical. Throws NumericError naming the step on a
// non-finite loss.
std::vector<LossLogEntry> run_regime(XmodModel& model, const TrainRegime& regime,
                                     const BatchFn& batches, std::uint64_t seed,
                                     const RunOptions& options = {});

void write_loss_log(const std::filesystem::path& path, std::span<const LossLogEntry> log);

// Zero-shot transfer: a head fine-tuned on `source` evaluated on examples of
// `target` routed through target's modules and embeddings. Returns accuracy
// for a seq_cls head and micro-F1 for a tok_cls head.
double zero_shot_eval(const XmodModel& model, const std::string& source, const std::string& target,
                      std::span<const LabeledExample> examples);

// Step split of the post-hoc adapter baseline against an X-Mod run of
// xmod_steps: body_steps = round(0.8 * xmod_steps) on all languages, then
// adapter_steps = xmod_steps - body_steps per language.
struct AdapterPlan {
  std::size_t body_steps = 0;
  std::size_t adapter_steps = 0;
};
AdapterPlan adapter_plan(std::size_t xmod_steps);

struct AdapterBaselineResult {
  std::vector<LossLogEntry> body_log;
  std::map<std::string, std::vector<LossLogEntry>> adapter_logs;
};

// Phase 1 trains the SHARED_NM body (pre-training contract) with body_batches;
// phase 2 freezes it and trains one fresh adapter per language on that
// language's batches.
AdapterBaselineResult adapter_baseline(XmodModel& model, std::span<const std::string> langs,
                                       const AdapterPlan& plan, double body_lr, double adapter_lr,
                                       const BatchFn& body_batches,
                                       const std::function<BatchFn(const std::string&)>& lang_batches,
                                       std::uint64_t seed);

struct FinetuneResult {
  double lr = 0;
  double dev_metric = 0;
  std::vector<double> dev_by_lr;
  XmodModel model;
  std::vector<LossLogEntry> log;
};

// Fine-tunes a copy of `base` with each learning rate and keeps the one with
// the best source-language dev metric (earliest on ties).
FinetuneResult finetune_select(const XmodModel& base, HeadKind kind, std::size_t n_out,
                               const std::string& source, std::span<const double> lrs,
                               std::size_t steps, const BatchFn& batches,
                               std::span<const LabeledExample> dev, std::uint64_t seed);

// Task batches from labelled examples: rows drawn uniformly by (seed, step).
BatchFn task_batches(std::span<const LabeledExample> examples, HeadKind kind,
                     std::size_t batch_size, std::uint64_t seed);

}  // namespace xmodlab

#endif  // XMODLAB_TRAIN_HPP_
