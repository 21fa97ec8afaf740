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

#include <CLI11.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xmodlab/checkpoint.hpp"
#include "xmodlab/error.hpp"
#include "xmodlab/experiment.hpp"

namespace fs = std::filesystem;
using namespace xmodlab;

namespace {

struct Globals {
  std::uint64_t seed = 1;
  std::string out = "xmodlab_out";
  std::optional<double> steps_multiplier;
  std::string config;
};

ExperimentConfig load_config(const Globals& g) {
  ExperimentConfig c = g.config.empty() ? default_experiment() : load_experiment(g.config);
  if (g.steps_multiplier) c.steps_multiplier = *g.steps_multiplier;
  c.validate();
  return c;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

std::string normalise_variant(std::string v) {
  std::replace(v.begin(), v.end(), '-', '_');
  return v;
}

std::vector<std::string> pool_langs_of(const XmodModel& m, const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const auto& id : c.pool_ids())
    if (m.has_language(id)) out.push_back(id);
  return out;
}

std::vector<std::string> added_langs_of(const XmodModel& m, const ExperimentConfig& c) {
  std::vector<std::string> out;
  for (const auto& id : c.added_ids())
    if (m.has_language(id)) out.push_back(id);
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Toy-scale experiments on modular multilingual masked language models"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--seed", g.seed, "Run seed (data, initialisation, sampling)")->capture_default_str();
  app.add_option("--out", g.out, "Output directory")->capture_default_str();
  app.add_option("--steps-multiplier", g.steps_multiplier,
                 "Scale pre-training and extension steps");
  app.add_option("--config", g.config, "Experiment config JSON (default: built-in desk grid)");

  auto* show = app.add_subcommand("show-config", "Print the effective config as JSON");

  auto* gen = app.add_subcommand("gen-data", "Write corpora, vocabularies and labels for --seed");

  std::string variant = "xmod", langs_arg, budget = "equal_total_steps";
  std::size_t n_langs = 0, steps = 0, checkpoint_every = 0;
  auto* pre = app.add_subcommand("pretrain", "Pre-train one model");
  pre->add_option("--variant", variant, "xmod | shared | shared_nm | adapter-baseline")
      ->capture_default_str();
  pre->add_option("--n-langs", n_langs, "First N pool languages");
  pre->add_option("--langs", langs_arg, "Comma-separated pool languages");
  pre->add_option("--budget", budget, "equal_total_steps | equal_per_language_examples")
      ->capture_default_str();
  pre->add_option("--steps", steps, "Override the number of updates");
  pre->add_option("--checkpoint-every", checkpoint_every,
                  "Save a checkpoint every K updates");

  std::string from, to;
  auto* ext = app.add_subcommand("extend", "Add languages to a pre-trained model");
  ext->add_option("--from", from, "Checkpoint prefix")->required();
  ext->add_option("--langs", langs_arg, "Comma-separated added languages (default: all)");
  ext->add_option("--steps", steps, "Override the number of updates");

  auto* ft = app.add_subcommand("finetune", "Fine-tune on the source language");
  ft->add_option("--from", from, "Checkpoint prefix")->required();

  std::string finetuned;
  auto* ev = app.add_subcommand("evaluate", "Perplexity and zero-shot transfer rows");
  ev->add_option("--from", from, "Checkpoint prefix for perplexity")->required();
  ev->add_option("--finetuned", finetuned, "Fine-tuned checkpoint prefix for transfer rows");
  ev->add_option("--variant", variant, "Row label (default: model variant)");
  ev->add_option("--budget", budget, "Row label")->capture_default_str();

  std::size_t jobs = 1;
  auto* sw = app.add_subcommand("sweep", "Run every missing cell of the grid (resumable)");
  sw->add_option("--jobs", jobs, "Parallel cells")->capture_default_str();

  bool allow_partial = false;
  auto* rep = app.add_subcommand("report", "Summaries and figures from a results directory");
  rep->add_flag("--allow-partial", allow_partial, "Aggregate an incomplete grid, labelled");

  CLI11_PARSE(app, argc, argv);

  try {
    const ExperimentConfig cfg = load_config(g);
    const fs::path out = g.out;

    if (*show) {
      std::cout << to_json(cfg);
      return 0;
    }

    if (*gen) {
      const auto data = build_data(cfg, g.seed);
      const auto dir = out / "data" / ("seed_" + std::to_string(g.seed));
      write_data(data, dir);
      std::cout << "wrote " << dir.string() << "\n";
      return 0;
    }

    if (*pre) {
      const auto data = build_data(cfg, g.seed);
      variant = normalise_variant(variant);
      std::vector<std::string> langs = split_list(langs_arg);
      if (langs.empty()) langs = pool_prefix(cfg, n_langs ? n_langs : cfg.set_sizes.front());
      const auto mode = parse_budget_mode(budget);
      std::size_t n = steps;
      if (n == 0) {
        const bool in_grid = std::find(cfg.set_sizes.begin(), cfg.set_sizes.end(), langs.size()) !=
                             cfg.set_sizes.end();
        n = in_grid && langs == pool_prefix(cfg, langs.size())
                ? pretrain_steps(cfg, langs.size(), mode)
                : static_cast<std::size_t>(double(cfg.base_steps) * cfg.steps_multiplier + 0.5);
      }
      fs::create_directories(out);
      RunOptions opts;
      if (checkpoint_every) {
        opts.checkpoint_every = checkpoint_every;
        opts.on_checkpoint = [&](std::size_t s, const XmodModel& m) {
          save_checkpoint(m, out / ("model_step" + std::to_string(s)));
        };
      }
      StageLog log;
      auto model = pretrain_stage(cfg, data, variant, langs, n, g.seed, log, opts);
      write_loss_log(out / "pretrain_loss.csv", log.pretrain);
      save_checkpoint(model, out / "model");
      std::cout << "pre-trained " << variant << " on " << langs.size() << " languages for "
                << log.steps << " updates; checkpoint " << (out / "model").string() << "\n";
      return 0;
    }

    if (*ext) {
      const auto data = build_data(cfg, g.seed);
      auto model = load_checkpoint(from);
      auto langs = split_list(langs_arg);
      if (langs.empty()) langs = cfg.added_ids();
      StageLog log;
      extend_stage(model, cfg, data, langs, steps ? steps : extend_steps(cfg), g.seed, log);
      fs::create_directories(out);
      write_loss_log(out / "extend_loss.csv", log.extend);
      save_checkpoint(model, out / "model");
      std::cout << "extended with " << langs.size() << " languages in " << log.steps
                << " updates; checkpoint " << (out / "model").string() << "\n";
      return 0;
    }

    if (*ft) {
      const auto data = build_data(cfg, g.seed);
      const auto model = load_checkpoint(from);
      StageLog log;
      auto res = finetune_stage(model, cfg, data, g.seed, log);
      fs::create_directories(out);
      write_loss_log(out / "finetune_loss.csv", log.finetune);
      save_checkpoint(res.model, out / "finetuned");
      std::cout << "fine-tuned on " << cfg.source_lang() << ": lr " << res.lr << ", dev "
                << task_metric_name(cfg.head_kind()) << " " << res.dev_metric << "\n";
      return 0;
    }

    if (*ev) {
      const auto data = build_data(cfg, g.seed);
      const auto model = load_checkpoint(from);
      const auto pool = pool_langs_of(model, cfg);
      const auto added = added_langs_of(model, cfg);
      if (ev->count("--variant") == 0) variant = to_string(model.config().variant);
      const RowKey key{normalise_variant(variant), pool.size(), budget, g.seed};
      std::vector<EvalRow> rows = perplexity_rows(model, cfg, data, key, pool, "pretrained");
      auto a = perplexity_rows(model, cfg, data, key, added, "added");
      rows.insert(rows.end(), a.begin(), a.end());
      if (!finetuned.empty()) {
        const auto tuned = load_checkpoint(finetuned);
        auto t = transfer_rows(tuned, cfg, data, key, pool_langs_of(tuned, cfg), "pretrained");
        rows.insert(rows.end(), t.begin(), t.end());
        t = transfer_rows(tuned, cfg, data, key, added_langs_of(tuned, cfg), "added");
        rows.insert(rows.end(), t.begin(), t.end());
      }
      rows = with_group_means(rows);
      fs::create_directories(out);
      write_eval_csv(out / "eval.csv", rows);
      write_eval_csv(std::cout, rows);
      return 0;
    }

    if (*sw) {
      SweepOptions o;
      o.jobs = jobs;
      o.log = &std::cerr;
      const auto stats = run_sweep(cfg, out, o);
      std::cout << "ran " << stats.ran << " cells (" << stats.steps << " updates), skipped "
                << stats.skipped << "; results in " << (out / "results.csv").string() << "\n";
      return 0;
    }

    if (*rep) {
      ReportOptions o;
      o.allow_partial = allow_partial;
      return write_report(out, o, std::cout).exit_code;
    }
  } catch (const xmodlab::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
