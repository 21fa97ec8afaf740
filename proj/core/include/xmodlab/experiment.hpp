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

#ifndef XMODLAB_EXPERIMENT_HPP_
#define XMODLAB_EXPERIMENT_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "xmodlab/data.hpp"
#include "xmodlab/eval.hpp"
#include "xmodlab/model.hpp"
#include "xmodlab/toy_lingua.hpp"
#include "xmodlab/train.hpp"

namespace xmodlab {

// Name used in rows and configs for the post-hoc adapter baseline built on a
// SHARED_NM body. Other variants use to_string(Variant).
inline constexpr const char* kAdapterBaseline = "adapter_baseline";

struct LanguageEntry {
  std::string id;
  std::string script;
  double proportion = 1.0;  // share of pre-training text before alpha sampling
  bool reverse = false;
  friend bool operator==(const LanguageEntry&, const LanguageEntry&) = default;
};

struct ExperimentConfig {
  GrammarConfig grammar;  // grammar.seed is mixed with every run seed
  std::size_t n_swap_rules = 3;
  double swap_prob = 1.0;
  double anchor_fraction = 0.25;

  std::vector<LanguageEntry> languages;  // pre-training pool; sets are prefixes
  std::vector<LanguageEntry> added;      // languages added after pre-training
  std::vector<std::size_t> set_sizes{2, 4, 8};
  std::vector<std::string> reference;    // present in every set; empty -> first set
  std::vector<std::string> variants{"xmod", "shared", kAdapterBaseline};
  std::vector<BudgetMode> budgets{BudgetMode::kEqualTotalSteps,
                                  BudgetMode::kEqualPerLanguageExamples};
  std::vector<std::uint64_t> seeds{1, 2, 3};

  ModelConfig model;  // variant and vocab_size are filled per run

  std::size_t train_sentences = 4000;
  std::size_t held_sentences = 300;
  std::size_t dev_sentences = 300;
  std::size_t task_train = 2000;
  std::size_t max_vocab = 1000;

  std::size_t base_steps = 1000;
  double pretrain_lr = 3e-3;
  double warmup_fraction = 0.06;
  std::size_t batch_size = 16;
  double alpha = 0.7;

  std::size_t extend_steps = 400;
  double extend_lr = 1e-3;
  double adapter_lr = 1e-3;

  std::string task = "seq_cls";  // or tok_cls
  std::string source;            // empty -> first pool language
  std::size_t finetune_steps = 150;
  std::vector<double> finetune_lrs{1e-4, 3e-4, 5e-4};

  std::uint64_t mask_seed = 7;
  double steps_multiplier = 1.0;  // scales pre-training and extension steps
  std::size_t checkpoint_every = 0;  // pre-training steps between evaluated snapshots
  bool save_checkpoints = false;

  // Throws ConfigError naming the first problem.
  void validate() const;

  std::vector<std::string> reference_langs() const;
  std::string source_lang() const;
  HeadKind head_kind() const;
  std::vector<std::string> pool_ids() const;
  std::vector<std::string> added_ids() const;
};

// Desk-scale grid: eight pool languages with q_i proportional to 0.75^i,
// two added languages, three set sizes, both budgets, three seeds.
ExperimentConfig default_experiment();

std::string to_json(const ExperimentConfig& c);
// Missing fields keep their defaults; unknown fields are rejected.
ExperimentConfig experiment_from_json(const std::string& text);
ExperimentConfig load_experiment(const std::filesystem::path& path);

// Hash of the canonical (key-sorted) JSON form, so field order in the file
// does not matter.
std::string config_hash(const ExperimentConfig& c);

// Grammar, languages, corpora and vocabularies of one seed. Everything is a
// pure function of (config, seed).
struct ToyData {
  AbstractGrammar grammar{GrammarConfig{}};
  std::vector<ToyLanguageSpec> specs;  // pool languages, then added ones
  std::map<std::string, std::size_t> index;
  std::vector<std::vector<Sentence>> train, held, dev;
  Vocabulary pool_vocab;
  std::map<std::string, Vocabulary> added_vocabs;

  const ToyLanguageSpec& spec(const std::string& lang) const;
  bool is_added(const std::string& lang) const { return added_vocabs.count(lang) > 0; }
  const Vocabulary& vocab_for(const std::string& lang) const;
  std::vector<std::vector<int>> held_ids(const std::string& lang) const;
  // split: "train" (first task_train sentences), "dev" or "held".
  std::vector<LabeledExample> labeled(const std::string& lang, const std::string& split,
                                      std::size_t limit = 0) const;
  LanguageCorpus corpus(const std::string& lang) const;
};

ToyData build_data(const ExperimentConfig& c, std::uint64_t seed);

void write_data(const ToyData& data, const std::filesystem::path& dir);

struct Cell {
  std::string variant;
  std::size_t n_langs = 0;
  BudgetMode budget = BudgetMode::kEqualTotalSteps;
  std::uint64_t seed = 0;
  friend bool operator==(const Cell&, const Cell&) = default;
};

std::string cell_id(const Cell& c);
std::string describe(const Cell& c);
std::vector<Cell> experiment_grid(const ExperimentConfig& c);

// Identity of a cell's work: config without the grid lists, plus the cell.
std::string cell_hash(const ExperimentConfig& c, const Cell& cell);

// Pre-training steps of a set size under a budget, steps_multiplier applied.
std::size_t pretrain_steps(const ExperimentConfig& c, std::size_t n_langs, BudgetMode budget);
std::size_t extend_steps(const ExperimentConfig& c);

std::vector<std::string> pool_prefix(const ExperimentConfig& c, std::size_t n_langs);

// MLM batches over `langs` with their pool proportions under alpha sampling.
BatchSampler make_sampler(const ExperimentConfig& c, const ToyData& data,
                          std::span<const std::string> langs, std::uint64_t seed);

struct StageLog {
  std::vector<LossLogEntry> pretrain;
  std::map<std::string, std::vector<LossLogEntry>> adapters;
  std::vector<LossLogEntry> extend;
  std::vector<LossLogEntry> finetune;
  std::size_t steps = 0;  // optimizer updates over all stages
};

// Fresh model of `variant` (or the adapter baseline) pre-trained on `langs`
// for `steps` updates. The adapter baseline splits the steps between body and
// per-language adapters.
XmodModel pretrain_stage(const ExperimentConfig& c, const ToyData& data,
                         const std::string& variant, std::span<const std::string> langs,
                         std::size_t steps, std::uint64_t seed, StageLog& log,
                         const RunOptions& options = {});

// Adds `langs` (each with its own vocabulary; adapters for SHARED_NM) and
// trains their new parameters only.
void extend_stage(XmodModel& model, const ExperimentConfig& c, const ToyData& data,
                  std::span<const std::string> langs, std::size_t steps, std::uint64_t seed,
                  StageLog& log);

FinetuneResult finetune_stage(const XmodModel& model, const ExperimentConfig& c,
                              const ToyData& data, std::uint64_t seed, StageLog& log);

std::string task_metric_name(HeadKind k);

// Row key shared by every row of one run.
struct RowKey {
  std::string variant;
  std::size_t n_langs = 0;
  std::string budget;
  std::uint64_t seed = 0;
};

// Held-out pseudo-perplexity rows. Each language appears in `group`, and
// again in group "reference" when it is a reference language.
std::vector<EvalRow> perplexity_rows(const XmodModel& model, const ExperimentConfig& c,
                                     const ToyData& data, const RowKey& key,
                                     std::span<const std::string> langs, const std::string& group,
                                     const std::string& metric = "pseudo_perplexity");

// Task metric of a fine-tuned model on held-out examples, zero-shot for every
// language but the source (group "source").
std::vector<EvalRow> transfer_rows(const XmodModel& finetuned, const ExperimentConfig& c,
                                   const ToyData& data, const RowKey& key,
                                   std::span<const std::string> langs, const std::string& group);

struct CellRecord {
  std::string hash;
  Cell cell;
  std::size_t pretrain_steps = 0;
  std::size_t extend_steps = 0;
  std::size_t total_steps = 0;
  double finetune_lr = 0;
  double source_dev = 0;
  double seconds = 0;
};

std::string to_json(const CellRecord& r);
CellRecord cell_record_from_json(const std::string& text);

// Pre-train, evaluate, extend, fine-tune and transfer one cell. Writes
// eval.csv, loss logs and record.json into `dir`; record.json goes last.
CellRecord run_cell(const ExperimentConfig& c, const ToyData& data, const Cell& cell,
                    const std::filesystem::path& dir, std::vector<EvalRow>* rows = nullptr);

struct SweepOptions {
  std::size_t jobs = 1;
  std::ostream* log = nullptr;
};

struct SweepStats {
  std::size_t ran = 0;
  std::size_t skipped = 0;
  std::size_t steps = 0;  // updates performed by this invocation
};

// Runs each of `cells` lacking a matching record under out/cells.
SweepStats run_cells(const ExperimentConfig& c, const std::filesystem::path& out,
                     std::span<const Cell> cells, const SweepOptions& options = {});

// run_cells over the whole grid, then writes out/config.json and the merged
// out/results.csv.
SweepStats run_sweep(const ExperimentConfig& c, const std::filesystem::path& out,
                     const SweepOptions& options = {});

// Every row under out/cells (with group means), or out/results.csv when there
// is no cells directory.
std::vector<EvalRow> collect_rows(const std::filesystem::path& out);

struct ReportOptions {
  bool allow_partial = false;
};

struct ReportResult {
  int exit_code = 0;  // 0 written, 2 incomplete grid without allow_partial
  std::vector<std::string> missing;  // one line per missing cell
  std::vector<std::filesystem::path> written;
};

// summary.csv, per_language.csv and SVG figures under `out`. The expected
// grid comes from out/config.json when present, otherwise from the observed
// coordinates and seeds.
ReportResult write_report(const std::filesystem::path& out, const ReportOptions& options,
                          std::ostream& log);

// Plot geometry. A point (x, y) maps to
//   px = kPlotLeft + (x - x_lo) / (x_hi - x_lo) * (kPlotRight - kPlotLeft)
//   py = kPlotBottom - (y - y_lo) / (y_hi - y_lo) * (kPlotBottom - kPlotTop)
// where [x_lo, x_hi] spans the set sizes of the figure and [y_lo, y_hi] spans
// mean -/+ std of every point; a degenerate range is widened by 1 around x or
// by 0.5 around y.
inline constexpr double kSvgWidth = 720, kSvgHeight = 440;
inline constexpr double kPlotLeft = 70, kPlotRight = 520, kPlotTop = 40, kPlotBottom = 380;

}  // namespace xmodlab

#endif  // XMODLAB_EXPERIMENT_HPP_
