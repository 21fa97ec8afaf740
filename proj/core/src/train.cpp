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

#include "xmodlab/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>

#include "xmodlab/data.hpp"
#include "xmodlab/error.hpp"
#include "xmodlab/eval.hpp"

namespace xmodlab {

std::size_t warmup_steps(const ScheduleSpec& s) {
  return static_cast<std::size_t>(std::llround(s.warmup_fraction * double(s.total_steps)));
}

double lr_at(const ScheduleSpec& s, std::size_t step) {
  if (s.total_steps == 0) throw ConfigError("schedule has no steps");
  if (s.warmup_fraction < 0.0 || s.warmup_fraction >= 1.0) {
    throw ConfigError("warmup_fraction must be in [0, 1)");
  }
  if (step > s.total_steps) {
    throw IndexError("step " + std::to_string(step) + " beyond schedule of " +
                     std::to_string(s.total_steps));
  }
  const std::size_t w = warmup_steps(s);
  if (step < w) return s.peak_lr * double(step) / double(w);
  return s.peak_lr * double(s.total_steps - step) / double(s.total_steps - w);
}

std::string to_string(BudgetMode m) {
  return m == BudgetMode::kEqualTotalSteps ? "equal_total_steps" : "equal_per_language_examples";
}

BudgetMode parse_budget_mode(const std::string& s) {
  if (s == "equal_total_steps") return BudgetMode::kEqualTotalSteps;
  if (s == "equal_per_language_examples") return BudgetMode::kEqualPerLanguageExamples;
  throw ConfigError("unknown budget mode '" + s + "'");
}

double reference_mass(const LanguageSet& set, std::span<const std::string> reference,
                      double alpha) {
  if (set.langs.size() != set.proportions.size()) {
    throw ConfigError("language set has mismatched proportions");
  }
  const auto p = alpha_probs(set.proportions, alpha);
  double mass = 0;
  for (const auto& r : reference) {
    auto it = std::find(set.langs.begin(), set.langs.end(), r);
    if (it == set.langs.end()) {
      throw ConfigError("reference language '" + r + "' is absent from a language set");
    }
    mass += p[static_cast<std::size_t>(it - set.langs.begin())];
  }
  return mass;
}

std::vector<std::size_t> scaled_steps(BudgetMode mode, std::size_t base_steps,
                                      std::span<const LanguageSet> sets,
                                      std::span<const std::string> reference, double alpha) {
  if (sets.empty()) throw ConfigError("scaled_steps needs at least one language set");
  if (reference.empty()) throw ConfigError("scaled_steps needs reference languages");
  std::vector<double> mass;
  for (const auto& s : sets) mass.push_back(reference_mass(s, reference, alpha));
  if (mode == BudgetMode::kEqualTotalSteps) return std::vector<std::size_t>(sets.size(), base_steps);
  std::size_t smallest = 0;
  for (std::size_t i = 1; i < sets.size(); ++i)
    if (sets[i].langs.size() < sets[smallest].langs.size()) smallest = i;
  std::vector<std::size_t> out;
  for (double m : mass)
    out.push_back(static_cast<std::size_t>(std::llround(double(base_steps) * mass[smallest] / m)));
  return out;
}

std::string to_string(RegimeKind k) {
  switch (k) {
    case RegimeKind::kPretrain: return "pretrain";
    case RegimeKind::kExtend: return "extend";
    case RegimeKind::kFinetune: return "finetune";
    case RegimeKind::kAdapterBaseline: return "adapter_baseline";
  }
  return "?";
}

namespace {

std::vector<ParameterRole> present_roles(const XmodModel& model) {
  std::vector<ParameterRole> roles;
  for (const auto* p : model.parameters())
    if (std::find(roles.begin(), roles.end(), p->role) == roles.end()) roles.push_back(p->role);
  return roles;
}

void require_language(const XmodModel& model, const std::string& lang) {
  if (!model.has_language(lang)) throw RegistryError("unknown language '" + lang + "'");
}

ScheduleSpec checked(ScheduleSpec s) {
  if (s.total_steps == 0) throw ConfigError("regime needs at least one step");
  if (!(s.peak_lr >= 0.0)) throw ConfigError("peak learning rate must be non-negative");
  return s;
}

}  // namespace

TrainRegime pretrain_regime(const XmodModel& model, ScheduleSpec schedule) {
  TrainRegime r;
  r.kind = RegimeKind::kPretrain;
  r.schedule = checked(schedule);
  for (const auto& role : present_roles(model))
    if (role.kind != RoleKind::kTaskHead) r.trainable.push_back(role);
  return r;
}

TrainRegime extend_regime(const XmodModel& model, std::vector<std::string> new_langs,
                          ScheduleSpec schedule) {
  if (new_langs.empty()) throw ConfigError("extend needs at least one new language");
  TrainRegime r;
  r.kind = RegimeKind::kExtend;
  r.schedule = checked(schedule);
  for (const auto& lang : new_langs) {
    require_language(model, lang);
    const int vocab = model.vocab_of(lang);
    if (vocab == 0) {
      throw RegistryError("language '" + lang + "' shares the pre-training vocabulary; "
                          "extension needs a language added with add_language");
    }
    r.trainable.push_back(ParameterRole::token_embedding(vocab));
    r.trainable.push_back(ParameterRole::positional_embedding(vocab));
    switch (model.config().variant) {
      case Variant::kXmod: r.trainable.push_back(ParameterRole::module(lang)); break;
      case Variant::kShared: break;
      case Variant::kSharedNm:
        if (model.has_adapter(lang)) r.trainable.push_back(ParameterRole::post_hoc_adapter(lang));
        break;
    }
  }
  r.new_langs = std::move(new_langs);
  return r;
}

TrainRegime finetune_regime(const XmodModel& model, std::string source_lang,
                            ScheduleSpec schedule) {
  require_language(model, source_lang);
  if (!model.head()) throw RegistryError("finetune needs an attached task head");
  TrainRegime r;
  r.kind = RegimeKind::kFinetune;
  r.schedule = checked(schedule);
  r.trainable = {ParameterRole::shared_body(), ParameterRole::task_head()};
  r.source_lang = std::move(source_lang);
  return r;
}

TrainRegime adapter_regime(const XmodModel& model, std::string lang, ScheduleSpec schedule) {
  if (model.config().variant != Variant::kSharedNm) {
    throw ConfigError("adapter baseline needs a shared_nm model, got " +
                      to_string(model.config().variant));
  }
  require_language(model, lang);
  if (!model.has_adapter(lang)) throw RegistryError("no adapter for '" + lang + "'");
  TrainRegime r;
  r.kind = RegimeKind::kAdapterBaseline;
  r.schedule = checked(schedule);
  r.trainable = {ParameterRole::post_hoc_adapter(lang)};
  r.new_langs = {std::move(lang)};
  return r;
}

std::vector<LossLogEntry> run_regime(XmodModel& model, const TrainRegime& regime,
                                     const BatchFn& batches, std::uint64_t seed,
                                     const RunOptions& options) {
  if (regime.trainable.empty()) throw ConfigError("regime trains nothing");
  const RoleFilter trainable = roles_in(regime.trainable);
  std::vector<Tensor*> params;
  for (auto* p : model.parameters()) {
    p->value.drop_grad();
    if (trainable(p->role)) params.push_back(&p->value);
  }
  if (params.empty()) throw RegistryError("no parameter of the model has a trainable role");
  if (options.objective == Objective::kTask && !model.head()) {
    throw RegistryError("task objective needs an attached head");
  }
  AdamState<float> state;
  state.config = regime.adam;
  std::vector<LossLogEntry> log;
  log.reserve(regime.schedule.total_steps);
  const Rng dropout_root = Rng(seed).split("dropout");
  for (std::size_t step = 0; step < regime.schedule.total_steps; ++step) {
    TrainBatch batch = batches(step);
    for (const auto& lang : batch.tokens.langs) require_language(model, lang);
    for (auto* t : params) t->zero_grad();
    Rng drop = dropout_root.split("step", step);
    ComputationRecord<float> rec;
    ParamBinder<float> bind(rec, model, trainable);
    const ForwardOptions fo{true, &drop};
    Var<float> loss;
    try {
      loss = options.objective == Objective::kMlm
                 ? mlm_loss(ModelView<float>(model), bind, batch.tokens, batch.labels, fo)
                 : task_loss(ModelView<float>(model), bind, batch.tokens, batch.labels, fo);
    } catch (const NumericError& e) {
      throw NumericError("non-finite loss at step " + std::to_string(step) + ": " + e.what());
    }
    const double value = loss.value()[0];
    if (!std::isfinite(value)) {
      throw NumericError("non-finite loss at step " + std::to_string(step));
    }
    rec.backward(loss);
    clip_grad_norm<float>(params, regime.clip_norm);
    const double lr = lr_at(regime.schedule, step);
    adam_step<float>(params, state, lr);
    log.push_back({step, lr, value, lang_mix_hash(batch.tokens.langs)});
    if (options.checkpoint_every && options.on_checkpoint &&
        (step + 1) % options.checkpoint_every == 0) {
      options.on_checkpoint(step + 1, model);
    }
  }
  for (auto* t : params) t->drop_grad();
  return log;
}

void write_loss_log(const std::filesystem::path& path, std::span<const LossLogEntry> log) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp);
    f << "step,lr,loss,lang_mix_hash\n";
    char buf[128];
    for (const auto& e : log) {
      std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g,%016llx\n", e.step, e.lr, e.loss,
                    static_cast<unsigned long long>(e.lang_mix_hash));
      f << buf;
    }
    if (!f) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

double zero_shot_eval(const XmodModel& model, const std::string& source, const std::string& target,
                      std::span<const LabeledExample> examples) {
  require_language(model, source);
  require_language(model, target);
  const auto& head = model.head();
  if (!head) throw RegistryError("zero-shot evaluation needs a task head");
  ModelView<float> view(model);
  if (head->kind == HeadKind::kSeqCls) {
    return seq_cls_accuracy(predict_seq_cls(view, examples, target), seq_labels(examples));
  }
  return tok_cls_f1(predict_tok_cls(view, examples, target), flat_token_labels(examples));
}

AdapterPlan adapter_plan(std::size_t xmod_steps) {
  if (xmod_steps < 2) throw ConfigError("adapter baseline needs at least 2 steps");
  AdapterPlan p;
  p.body_steps = static_cast<std::size_t>(std::llround(0.8 * double(xmod_steps)));
  p.adapter_steps = xmod_steps - p.body_steps;
  return p;
}

AdapterBaselineResult adapter_baseline(XmodModel& model, std::span<const std::string> langs,
                                       const AdapterPlan& plan, double body_lr, double adapter_lr,
                                       const BatchFn& body_batches,
                                       const std::function<BatchFn(const std::string&)>& lang_batches,
                                       std::uint64_t seed) {
  if (model.config().variant != Variant::kSharedNm) {
    throw ConfigError("adapter baseline needs a shared_nm model, got " +
                      to_string(model.config().variant));
  }
  AdapterBaselineResult res;
  res.body_log = run_regime(model, pretrain_regime(model, {body_lr, 0.06, plan.body_steps}),
                            body_batches, Rng(seed).split("body").seed());
  for (const auto& lang : langs) {
    model.add_adapter(lang, Rng(seed).split("adapter_init").seed());
    const auto regime = adapter_regime(model, lang, {adapter_lr, 0.06, plan.adapter_steps});
    res.adapter_logs[lang] =
        run_regime(model, regime, lang_batches(lang), Rng(seed).split("adapter", hash_string(lang)).seed());
  }
  return res;
}

FinetuneResult finetune_select(const XmodModel& base, HeadKind kind, std::size_t n_out,
                               const std::string& source, std::span<const double> lrs,
                               std::size_t steps, const BatchFn& batches,
                               std::span<const LabeledExample> dev, std::uint64_t seed) {
  if (lrs.empty()) throw ConfigError("fine-tune grid is empty");
  std::optional<FinetuneResult> best;
  std::vector<double> dev_by_lr;
  for (double lr : lrs) {
    XmodModel m = base;
    m.attach_head(kind, n_out, Rng(seed).split("head").seed());
    RunOptions opts;
    opts.objective = Objective::kTask;
    auto log = run_regime(m, finetune_regime(m, source, {lr, 0.06, steps}), batches,
                          Rng(seed).split("finetune").seed(), opts);
    const double metric = zero_shot_eval(m, source, source, dev);
    dev_by_lr.push_back(metric);
    if (!best || metric > best->dev_metric) {
      best.emplace(FinetuneResult{lr, metric, {}, std::move(m), std::move(log)});
    }
  }
  best->dev_by_lr = std::move(dev_by_lr);
  return std::move(*best);
}

BatchFn task_batches(std::span<const LabeledExample> examples, HeadKind kind,
                     std::size_t batch_size, std::uint64_t seed) {
  if (examples.empty()) throw ConfigError("task_batches needs examples");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  auto data = std::make_shared<std::vector<LabeledExample>>(examples.begin(), examples.end());
  return [data, kind, batch_size, seed](std::uint64_t step) {
    Rng rng = Rng(seed).split("task_batch", step);
    std::vector<std::vector<int>> rows;
    std::vector<std::string> langs;
    std::vector<const LabeledExample*> picked;
    for (std::size_t r = 0; r < batch_size; ++r) {
      const auto& ex = (*data)[rng.below(data->size())];
      picked.push_back(&ex);
      rows.push_back(ex.ids);
      langs.push_back(ex.lang);
    }
    TrainBatch b;
    b.tokens = make_token_batch(rows, langs);
    if (kind == HeadKind::kSeqCls) {
      for (const auto* ex : picked) b.labels.push_back(ex->seq_label);
    } else {
      b.labels.assign(b.tokens.ids.size(), kIgnoreIndex);
      for (std::size_t r = 0; r < picked.size(); ++r) {
        const auto pl = position_labels(*picked[r]);
        std::copy(pl.begin(), pl.end(), b.labels.begin() + r * b.tokens.seq_len);
      }
    }
    return b;
  };
}

}  // namespace xmodlab
