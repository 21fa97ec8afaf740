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

#ifndef XMODLAB_EVAL_HPP_
#define XMODLAB_EVAL_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "xmodlab/model.hpp"
#include "xmodlab/toy_lingua.hpp"

namespace xmodlab {

// The fixed masking pass behind pseudo_perplexity: (corrupted ids, labels)
// per sentence. A sentence's mask depends only on its content and on how
// often the same content occurred before it.
std::vector<std::pair<std::vector<int>, std::vector<int>>> eval_masks(
    std::span<const std::vector<int>> sentences, std::size_t vocab_size, std::size_t max_len,
    std::uint64_t mask_seed);

// exp(mean masked-token cross-entropy) under one fixed 15% masking draw. The
// mask of a sentence depends on mask_seed and the sentence content only, so
// the value does not depend on batch size or sentence order. Dropout is off.
double pseudo_perplexity(const ModelView<float>& view, std::span<const std::vector<int>> sentences,
                         const std::string& lang, std::uint64_t mask_seed,
                         std::size_t batch_size = 64);

// Argmax predictions, evaluated with every row tagged `lang`.
std::vector<int> predict_seq_cls(const ModelView<float>& view,
                                 std::span<const LabeledExample> examples, const std::string& lang,
                                 std::size_t batch_size = 64);
// One prediction per surface word (specials dropped), concatenated over examples.
std::vector<int> predict_tok_cls(const ModelView<float>& view,
                                 std::span<const LabeledExample> examples, const std::string& lang,
                                 std::size_t batch_size = 64);

double seq_cls_accuracy(std::span<const int> preds, std::span<const int> labels);
// Micro-F1 over non-outside tags; class 0 is outside. Positions labelled
// kIgnoreIndex are skipped.
double tok_cls_f1(std::span<const int> preds, std::span<const int> labels);

std::vector<int> seq_labels(std::span<const LabeledExample> examples);
std::vector<int> flat_token_labels(std::span<const LabeledExample> examples);

// One CSV row of an evaluation report.
struct EvalRow {
  std::string variant;
  std::size_t n_langs = 0;
  std::string budget_mode;
  std::uint64_t seed = 0;
  std::string lang;
  std::string group;
  std::string metric;
  double value = 0;
  friend bool operator==(const EvalRow&, const EvalRow&) = default;
};

inline constexpr const char* kEvalCsvHeader =
    "variant,n_langs,budget_mode,seed,lang,group,metric_name,value";
inline constexpr const char* kGroupMeanLang = "mean";

void write_eval_csv(std::ostream& out, std::span<const EvalRow> rows);
void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows);
// Throws IoError naming the line of the first malformed row.
std::vector<EvalRow> read_eval_csv(std::istream& in, const std::string& source = "<stream>");
std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path);

// Appends, for every (variant, n_langs, budget, seed, group, metric), a row
// with lang == "mean" holding the unweighted mean over member languages.
std::vector<EvalRow> with_group_means(std::span<const EvalRow> rows);

struct CurvePoint {
  std::string variant;
  std::size_t n_langs = 0;
  std::string budget_mode;
  std::string group;
  std::string metric;
  double mean = 0;
  double stddev = 0;  // sample standard deviation; 0 for a single seed
  std::size_t n_seeds = 0;
  bool complete = false;  // every expected seed present
  std::vector<std::uint64_t> missing_seeds;
};

// Groups the lang == "mean" rows by cell and aggregates over seeds. Cells
// lacking any of `expected_seeds` are flagged, never dropped.
std::vector<CurvePoint> curse_curve(std::span<const EvalRow> rows,
                                    std::span<const std::uint64_t> expected_seeds);

double mean_of(std::span<const double> v);
double sample_stddev(std::span<const double> v);

}  // namespace xmodlab

#endif  // XMODLAB_EVAL_HPP_
