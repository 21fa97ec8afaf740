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

#include "xmodlab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>
#include <unordered_map>

#include "xmodlab/data.hpp"
#include "xmodlab/error.hpp"

namespace xmodlab {

namespace {

std::uint64_t content_hash(std::span<const int> ids) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (int v : ids) h = combine_seed(h, static_cast<std::uint64_t>(static_cast<std::uint32_t>(v)));
  return h;
}

}  // namespace

std::vector<std::pair<std::vector<int>, std::vector<int>>> eval_masks(
    std::span<const std::vector<int>> sentences, std::size_t vocab_size, std::size_t max_len,
    std::uint64_t mask_seed) {
  const Rng root = Rng(mask_seed).split("pseudo_perplexity");
  std::unordered_map<std::uint64_t, std::uint64_t> seen;
  std::vector<std::pair<std::vector<int>, std::vector<int>>> out;
  out.reserve(sentences.size());
  for (const auto& s : sentences) {
    auto ids = truncate_sentence(s, max_len);
    const std::uint64_t h = content_hash(ids);
    Rng rng = root.split("sentence", combine_seed(h, seen[h]++));
    out.push_back(mask_tokens(ids, vocab_size, rng));
  }
  return out;
}

double pseudo_perplexity(const ModelView<float>& view, std::span<const std::vector<int>> sentences,
                         const std::string& lang, std::uint64_t mask_seed,
                         std::size_t batch_size) {
  if (sentences.empty()) throw ConfigError("pseudo_perplexity needs a non-empty corpus");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::string target = view.resolve(lang);
  const std::size_t V = view.model->vocab_size(view.model->vocab_of(target));
  const auto masked = eval_masks(sentences, V, view.model->config().max_seq_len, mask_seed);
  std::vector<double> nll;
  for (std::size_t start = 0; start < sentences.size(); start += batch_size) {
    const std::size_t end = std::min(sentences.size(), start + batch_size);
    std::vector<std::vector<int>> rows;
    std::vector<std::vector<int>> labels;
    for (std::size_t i = start; i < end; ++i) {
      rows.push_back(masked[i].first);
      labels.push_back(masked[i].second);
    }
    std::vector<std::string> langs(rows.size(), lang);
    auto logits = forward_mlm_batch(view, make_token_batch(rows, langs));
    for (std::size_t r = 0; r < rows.size(); ++r) {
      const Tensor& lg = logits[r];
      for (std::size_t t = 0; t < labels[r].size(); ++t) {
        const int y = labels[r][t];
        if (y == kIgnoreIndex) continue;
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < V; ++c) mx = std::max(mx, double(lg.at(t, c)));
        double z = 0;
        for (std::size_t c = 0; c < V; ++c) z += std::exp(double(lg.at(t, c)) - mx);
        nll.push_back(std::log(z) + mx - double(lg.at(t, static_cast<std::size_t>(y))));
      }
    }
  }
  if (nll.empty()) throw NumericError("pseudo_perplexity: no position was masked");
  std::sort(nll.begin(), nll.end());
  double sum = 0;
  for (double v : nll) sum += v;
  const double ppl = std::exp(sum / static_cast<double>(nll.size()));
  if (!std::isfinite(ppl)) throw NumericError("pseudo_perplexity is not finite");
  return ppl;
}

namespace {

template <typename Fn>
void for_each_task_batch(const ModelView<float>& view, std::span<const LabeledExample> examples,
                         const std::string& lang, std::size_t batch_size, Fn&& fn) {
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  const std::size_t max_len = view.model->config().max_seq_len;
  for (std::size_t start = 0; start < examples.size(); start += batch_size) {
    const std::size_t end = std::min(examples.size(), start + batch_size);
    std::vector<std::vector<int>> rows;
    for (std::size_t i = start; i < end; ++i) {
      if (examples[i].ids.size() > max_len) {
        throw DimensionError("example of length " + std::to_string(examples[i].ids.size()) +
                             " exceeds max_seq_len");
      }
      rows.push_back(examples[i].ids);
    }
    std::vector<std::string> langs(rows.size(), lang);
    TokenBatch batch = make_token_batch(rows, langs);
    ComputationRecord<float> rec;
    ParamBinder<float> bind(rec);
    Tensor logits = task_logits(view, bind, batch, ForwardOptions{}).value();
    fn(start, batch, logits);
  }
}

int argmax_row(const Tensor& t, std::size_t r) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < t.cols(); ++c)
    if (t.at(r, c) > t.at(r, best)) best = c;
  return static_cast<int>(best);
}

}  // namespace

std::vector<int> predict_seq_cls(const ModelView<float>& view,
                                 std::span<const LabeledExample> examples, const std::string& lang,
                                 std::size_t batch_size) {
  const auto& head = view.model->head();
  if (!head || head->kind != HeadKind::kSeqCls) throw RegistryError("no seq_cls head attached");
  std::vector<int> out;
  for_each_task_batch(view, examples, lang, batch_size,
                      [&](std::size_t, const TokenBatch& b, const Tensor& logits) {
                        for (std::size_t r = 0; r < b.batch; ++r) out.push_back(argmax_row(logits, r));
                      });
  return out;
}

std::vector<int> predict_tok_cls(const ModelView<float>& view,
                                 std::span<const LabeledExample> examples, const std::string& lang,
                                 std::size_t batch_size) {
  const auto& head = view.model->head();
  if (!head || head->kind != HeadKind::kTokCls) throw RegistryError("no tok_cls head attached");
  std::vector<int> out;
  for_each_task_batch(view, examples, lang, batch_size,
                      [&](std::size_t start, const TokenBatch& b, const Tensor& logits) {
                        for (std::size_t r = 0; r < b.batch; ++r) {
                          const std::size_t n = examples[start + r].ids.size();
                          for (std::size_t t = 1; t + 1 < n; ++t)
                            out.push_back(argmax_row(logits, r * b.seq_len + t));
                        }
                      });
  return out;
}

double seq_cls_accuracy(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) {
    throw DimensionError("accuracy over " + std::to_string(preds.size()) + " predictions and " +
                         std::to_string(labels.size()) + " labels");
  }
  if (preds.empty()) throw DimensionError("accuracy over no examples");
  std::size_t hit = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) hit += preds[i] == labels[i];
  return static_cast<double>(hit) / static_cast<double>(preds.size());
}

double tok_cls_f1(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) {
    throw DimensionError("F1 over " + std::to_string(preds.size()) + " predictions and " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (labels[i] == kIgnoreIndex) continue;
    const bool pred_pos = preds[i] != 0, gold_pos = labels[i] != 0;
    if (pred_pos && gold_pos && preds[i] == labels[i]) {
      ++tp;
    } else {
      fp += pred_pos;
      fn += gold_pos;
    }
  }
  if (tp == 0) return 0.0;
  const double p = double(tp) / double(tp + fp), r = double(tp) / double(tp + fn);
  return 2 * p * r / (p + r);
}

std::vector<int> seq_labels(std::span<const LabeledExample> examples) {
  std::vector<int> out;
  for (const auto& e : examples) out.push_back(e.seq_label);
  return out;
}

std::vector<int> flat_token_labels(std::span<const LabeledExample> examples) {
  std::vector<int> out;
  for (const auto& e : examples) out.insert(out.end(), e.token_labels.begin(), e.token_labels.end());
  return out;
}

// ---------------------------------------------------------------------------

void write_eval_csv(std::ostream& out, std::span<const EvalRow> rows) {
  out << kEvalCsvHeader << '\n';
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    out << r.variant << ',' << r.n_langs << ',' << r.budget_mode << ',' << r.seed << ','
        << r.lang << ',' << r.group << ',' << r.metric << ',' << buf << '\n';
  }
}

void write_eval_csv(const std::filesystem::path& path, std::span<const EvalRow> rows) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw IoError("cannot write " + tmp);
    write_eval_csv(f, rows);
    if (!f) throw IoError("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

std::vector<EvalRow> read_eval_csv(std::istream& in, const std::string& source) {
  std::vector<EvalRow> out;
  std::string line;
  std::size_t line_no = 1;
  auto fail = [&](const std::string& m) {
    throw IoError(source + ":" + std::to_string(line_no) + ": " + m);
  };
  if (!std::getline(in, line)) fail("empty file");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  if (line != kEvalCsvHeader) fail("unexpected header '" + line + "'");
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) f.push_back(cell);
    if (!line.empty() && line.back() == ',') f.emplace_back();
    if (f.size() != 8) fail("expected 8 fields, got " + std::to_string(f.size()));
    EvalRow r;
    try {
      std::size_t used = 0;
      r.variant = f[0];
      r.n_langs = std::stoul(f[1], &used);
      if (used != f[1].size()) fail("bad n_langs '" + f[1] + "'");
      r.budget_mode = f[2];
      r.seed = std::stoull(f[3], &used);
      if (used != f[3].size()) fail("bad seed '" + f[3] + "'");
      r.lang = f[4];
      r.group = f[5];
      r.metric = f[6];
      r.value = std::stod(f[7], &used);
      if (used != f[7].size()) fail("bad value '" + f[7] + "'");
    } catch (const std::logic_error&) {
      fail("malformed number");
    }
    if (r.variant.empty() || r.lang.empty() || r.metric.empty()) fail("empty key field");
    out.push_back(std::move(r));
  }
  return out;
}

std::vector<EvalRow> read_eval_csv(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  return read_eval_csv(f, path.string());
}

std::vector<EvalRow> with_group_means(std::span<const EvalRow> rows) {
  using Key = std::tuple<std::string, std::size_t, std::string, std::uint64_t, std::string,
                         std::string>;
  std::map<Key, std::vector<double>> groups;
  std::vector<EvalRow> out;
  for (const auto& r : rows) {
    out.push_back(r);
    if (r.lang == kGroupMeanLang) continue;
    groups[{r.variant, r.n_langs, r.budget_mode, r.seed, r.group, r.metric}].push_back(r.value);
  }
  for (const auto& [k, v] : groups) {
    EvalRow r{std::get<0>(k), std::get<1>(k), std::get<2>(k), std::get<3>(k),
              kGroupMeanLang, std::get<4>(k), std::get<5>(k), mean_of(v)};
    out.push_back(std::move(r));
  }
  return out;
}

double mean_of(std::span<const double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  double s = 0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double sample_stddev(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double s = 0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

std::vector<CurvePoint> curse_curve(std::span<const EvalRow> rows,
                                    std::span<const std::uint64_t> expected_seeds) {
  using Key = std::tuple<std::string, std::size_t, std::string, std::string, std::string>;
  std::map<Key, std::map<std::uint64_t, double>> cells;
  for (const auto& r : rows) {
    if (r.lang != kGroupMeanLang) continue;
    auto& per_seed = cells[{r.variant, r.n_langs, r.budget_mode, r.group, r.metric}];
    if (!per_seed.emplace(r.seed, r.value).second) {
      throw ConfigError("duplicate result for " + r.variant + "/" + std::to_string(r.n_langs) +
                        "/" + r.budget_mode + "/" + r.group + "/" + r.metric + " seed " +
                        std::to_string(r.seed));
    }
  }
  std::vector<CurvePoint> out;
  for (const auto& [k, per_seed] : cells) {
    CurvePoint p;
    std::tie(p.variant, p.n_langs, p.budget_mode, p.group, p.metric) = k;
    std::vector<double> v;
    for (const auto& [s, x] : per_seed) v.push_back(x);
    for (auto s : expected_seeds)
      if (!per_seed.count(s)) p.missing_seeds.push_back(s);
    p.n_seeds = v.size();
    p.mean = mean_of(v);
    p.stddev = sample_stddev(v);
    p.complete = p.missing_seeds.empty();
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace xmodlab
