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

#include "xmodlab/toy_lingua.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "xmodlab/error.hpp"

namespace xmodlab {

AbstractGrammar::AbstractGrammar(GrammarConfig config) : config_(config) {
  const std::size_t K = config_.n_symbols, C = config_.n_classes;
  if (K == 0 || C == 0 || C > K) throw ConfigError("grammar needs 0 < n_classes <= n_symbols");
  if (config_.min_len == 0 || config_.max_len < config_.min_len) {
    throw ConfigError("grammar needs 0 < min_len <= max_len");
  }
  if (config_.stop_prob <= 0.0 || config_.stop_prob > 1.0) {
    throw ConfigError("grammar stop_prob must be in (0, 1]");
  }
  Rng rng = Rng(config_.seed).split("transitions");
  transition_.resize(K * K);
  cumulative_.resize(K);
  for (std::size_t i = 0; i < K; ++i) {
    double z = 0;
    for (std::size_t j = 0; j < K; ++j) {
      double logw = config_.peakiness * rng.normal();
      if (class_of(static_cast<int>(i)) == class_of(static_cast<int>(j))) {
        logw += config_.stickiness;
      }
      transition_[i * K + j] = std::exp(logw);
      z += transition_[i * K + j];
    }
    cumulative_[i].resize(K);
    double acc = 0;
    for (std::size_t j = 0; j < K; ++j) {
      transition_[i * K + j] /= z;
      acc += transition_[i * K + j];
      cumulative_[i][j] = acc;
    }
    cumulative_[i][K - 1] = 1.0;
  }
}

int AbstractGrammar::class_of(int symbol) const {
  if (symbol < 0 || static_cast<std::size_t>(symbol) >= config_.n_symbols) {
    throw IndexError("symbol " + std::to_string(symbol) + " outside grammar of " +
                     std::to_string(config_.n_symbols));
  }
  return symbol % static_cast<int>(config_.n_classes);
}

std::span<const double> AbstractGrammar::transition_row(int from) const {
  class_of(from);
  return std::span<const double>(transition_).subspan(
      static_cast<std::size_t>(from) * config_.n_symbols, config_.n_symbols);
}

std::vector<int> AbstractGrammar::sentence(std::uint64_t index) const {
  Rng rng = Rng(config_.seed).split("sentence", index);
  std::vector<int> s;
  s.push_back(static_cast<int>(rng.below(config_.n_symbols)));
  while (s.size() < config_.max_len) {
    if (s.size() >= config_.min_len && rng.bernoulli(config_.stop_prob)) break;
    const auto& cum = cumulative_[static_cast<std::size_t>(s.back())];
    const double u = rng.uniform();
    s.push_back(static_cast<int>(std::upper_bound(cum.begin(), cum.end(), u) - cum.begin()));
  }
  return s;
}

namespace {

std::vector<SwapRule> draw_swaps(const AbstractGrammar& g, Rng& rng, const LanguageStyle& style) {
  std::vector<SwapRule> pairs;
  for (std::size_t a = 0; a < g.n_classes(); ++a)
    for (std::size_t b = 0; b < g.n_classes(); ++b)
      if (a != b) pairs.push_back({static_cast<int>(a), static_cast<int>(b), style.swap_prob});
  if (style.n_swap_rules > pairs.size()) {
    throw ConfigError("at most " + std::to_string(pairs.size()) + " swap rules for " +
                      std::to_string(g.n_classes()) + " classes");
  }
  std::shuffle(pairs.begin(), pairs.end(), rng);
  pairs.resize(style.n_swap_rules);
  return pairs;
}

std::vector<std::size_t> permutation(std::size_t n, Rng& rng) {
  std::vector<std::size_t> p(n);
  std::iota(p.begin(), p.end(), 0);
  std::shuffle(p.begin(), p.end(), rng);
  return p;
}

}  // namespace

ToyLanguageSpec make_language(const AbstractGrammar& grammar, std::string lang_id,
                              std::string script, double proportion, std::uint64_t seed,
                              const LanguageStyle& style) {
  ToyLanguageSpec spec;
  spec.lang_id = std::move(lang_id);
  spec.script = std::move(script);
  spec.proportion = proportion;
  spec.seed = seed;
  spec.reverse = style.reverse;
  Rng rng = Rng(seed).split("language");
  if (style.anchor_fraction < 0.0 || style.anchor_fraction > 1.0) {
    throw ConfigError("anchor_fraction must be in [0, 1]");
  }
  const std::size_t K = grammar.n_symbols();
  auto perm = permutation(K, rng);
  const auto n_anchor = static_cast<std::size_t>(std::llround(style.anchor_fraction * double(K)));
  if (n_anchor > 0) {
    // Same draw, anchors pinned; the others keep their relative order.
    std::vector<std::size_t> rest;
    for (auto v : perm)
      if (v >= n_anchor) rest.push_back(v);
    for (std::size_t s = 0; s < K; ++s) perm[s] = s < n_anchor ? s : rest[s - n_anchor];
  }
  for (std::size_t s = 0; s < K; ++s)
    spec.lexicon.push_back(spec.script + "_" + std::to_string(perm[s]));
  spec.swaps = draw_swaps(grammar, rng, style);
  validate_language(grammar, spec);
  return spec;
}

ToyLanguageSpec make_family_language(const AbstractGrammar& grammar, const ToyLanguageSpec& base,
                                     std::string lang_id, double shared_fraction,
                                     double proportion, std::uint64_t seed,
                                     const LanguageStyle& style) {
  if (shared_fraction < 0.0 || shared_fraction > 1.0) {
    throw ConfigError("shared_fraction must be in [0, 1]");
  }
  ToyLanguageSpec spec;
  spec.lang_id = std::move(lang_id);
  spec.script = base.script;
  spec.proportion = proportion;
  spec.seed = seed;
  spec.reverse = style.reverse;
  Rng rng = Rng(seed).split("family");
  const std::size_t K = grammar.n_symbols();
  const auto order = permutation(K, rng);
  const auto fresh = permutation(K, rng);
  const auto n_shared = static_cast<std::size_t>(std::llround(shared_fraction * double(K)));
  spec.lexicon.resize(K);
  for (std::size_t r = 0; r < K; ++r) {
    const std::size_t s = order[r];
    spec.lexicon[s] = r < n_shared ? base.lexicon[s]
                                   : spec.script + "_" + std::to_string(K + fresh[s]);
  }
  spec.swaps = draw_swaps(grammar, rng, style);
  validate_language(grammar, spec);
  return spec;
}

void validate_language(const AbstractGrammar& grammar, const ToyLanguageSpec& spec) {
  auto fail = [&](const std::string& m) {
    throw ConfigError("language '" + spec.lang_id + "': " + m);
  };
  if (spec.lang_id.empty() || spec.lang_id == kSharedModuleKey) fail("invalid language id");
  if (spec.script.empty() || spec.script.find_first_of(" \t\n_") != std::string::npos) {
    fail("script must be non-empty without blanks or '_'");
  }
  if (spec.lexicon.size() != grammar.n_symbols()) {
    fail("lexicon has " + std::to_string(spec.lexicon.size()) + " entries, grammar has " +
         std::to_string(grammar.n_symbols()) + " symbols");
  }
  std::set<std::string> seen;
  for (const auto& w : spec.lexicon) {
    if (w.rfind(spec.script + "_", 0) != 0) fail("token '" + w + "' lacks the script prefix");
    if (w.find_first_of(" \t\n") != std::string::npos) fail("token '" + w + "' has blanks");
    if (!seen.insert(w).second) fail("lexicon is not a bijection ('" + w + "' repeats)");
  }
  for (const auto& r : spec.swaps) {
    const auto C = static_cast<int>(grammar.n_classes());
    if (r.first_class < 0 || r.first_class >= C || r.second_class < 0 || r.second_class >= C) {
      fail("swap rule class out of range");
    }
    if (r.prob < 0.0 || r.prob > 1.0) fail("swap probability outside [0, 1]");
  }
  if (!(spec.proportion > 0.0)) fail("proportion must be positive");
}

Sentence realize(const AbstractGrammar& grammar, const ToyLanguageSpec& spec,
                 std::uint64_t index) {
  Sentence s;
  s.index = index;
  s.abstract = grammar.sentence(index);
  s.realized = s.abstract;
  if (spec.reverse) std::reverse(s.realized.begin(), s.realized.end());
  Rng rng = Rng(spec.seed).split("realize", index);
  for (std::size_t i = 0; i + 1 < s.realized.size();) {
    const int a = grammar.class_of(s.realized[i]), b = grammar.class_of(s.realized[i + 1]);
    bool swapped = false;
    for (const auto& r : spec.swaps) {
      if (r.first_class == a && r.second_class == b) {
        if (rng.bernoulli(r.prob)) {
          std::swap(s.realized[i], s.realized[i + 1]);
          swapped = true;
        }
        break;
      }
    }
    i += swapped ? 2 : 1;
  }
  s.tokens.reserve(s.realized.size() + 2);
  s.tokens.push_back(special_tokens()[kBosId]);
  for (int sym : s.realized) s.tokens.push_back(spec.lexicon[static_cast<std::size_t>(sym)]);
  s.tokens.push_back(special_tokens()[kEosId]);
  return s;
}

std::vector<Sentence> generate_corpus(const AbstractGrammar& grammar, const ToyLanguageSpec& spec,
                                      std::size_t n_sentences, std::uint64_t first_index) {
  if (n_sentences == 0) throw ConfigError("generate_corpus needs n_sentences > 0");
  validate_language(grammar, spec);
  std::vector<Sentence> out;
  out.reserve(n_sentences);
  for (std::size_t i = 0; i < n_sentences; ++i) out.push_back(realize(grammar, spec, first_index + i));
  return out;
}

std::vector<int> decode_surface(const ToyLanguageSpec& spec, std::span<const std::string> tokens) {
  std::unordered_map<std::string, int> inv;
  for (std::size_t s = 0; s < spec.lexicon.size(); ++s) inv.emplace(spec.lexicon[s], static_cast<int>(s));
  std::vector<int> out;
  for (const auto& t : tokens) {
    if (std::find(special_tokens().begin(), special_tokens().end(), t) != special_tokens().end()) {
      continue;
    }
    auto it = inv.find(t);
    if (it == inv.end()) {
      throw IndexError("token '" + t + "' is not in the lexicon of '" + spec.lang_id + "'");
    }
    out.push_back(it->second);
  }
  return out;
}

// ---------------------------------------------------------------------------

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& sp = special_tokens();
  if (tokens_.size() < sp.size() || !std::equal(sp.begin(), sp.end(), tokens_.begin())) {
    throw ConfigError("vocabulary must start with the special tokens <pad> <unk> <mask> <s> </s>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty() || tokens_[i].find_first_of(" \t\n") != std::string::npos) {
      throw ConfigError("vocabulary token " + std::to_string(i) + " is empty or has blanks");
    }
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw ConfigError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= tokens_.size()) {
    throw IndexError("token id " + std::to_string(id) + " outside vocabulary of " +
                     std::to_string(tokens_.size()));
  }
  return tokens_[static_cast<std::size_t>(id)];
}

int Vocabulary::id(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnkId : it->second;
}

std::vector<int> Vocabulary::encode(std::span<const std::string> tokens) const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const auto& t : tokens) out.push_back(id(t));
  return out;
}

std::vector<std::string> Vocabulary::decode(std::span<const int> ids) const {
  std::vector<std::string> out;
  out.reserve(ids.size());
  for (int i : ids) out.push_back(token(i));
  return out;
}

Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus, std::size_t max_size) {
  if (corpus.empty()) throw ConfigError("build_vocab needs a non-empty corpus");
  if (max_size < static_cast<std::size_t>(kNumSpecial)) {
    throw ConfigError("max_size must leave room for the 5 special tokens");
  }
  const auto& sp = special_tokens();
  std::map<std::string, std::size_t> counts;
  for (const auto& sentence : corpus)
    for (const auto& t : sentence)
      if (std::find(sp.begin(), sp.end(), t) == sp.end()) ++counts[t];
  std::vector<std::pair<std::string, std::size_t>> ranked(counts.begin(), counts.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> tokens(sp.begin(), sp.end());
  for (const auto& [t, _] : ranked) {
    if (tokens.size() >= max_size) break;
    tokens.push_back(t);
  }
  return Vocabulary(std::move(tokens));
}

std::vector<InitPair> overlap_init_pairs(const Vocabulary& old_vocab, const Vocabulary& new_vocab) {
  std::vector<InitPair> out;
  for (std::size_t i = 0; i < new_vocab.size(); ++i) {
    const auto& t = new_vocab.tokens()[i];
    if (old_vocab.contains(t)) out.push_back({static_cast<int>(i), old_vocab.id(t)});
  }
  return out;
}

std::pair<int, std::vector<int>> label_example(const AbstractGrammar& grammar,
                                               std::span<const int> symbols) {
  if (symbols.empty()) throw ConfigError("label_example needs a non-empty sequence");
  std::vector<std::size_t> count(grammar.n_classes(), 0);
  std::vector<int> labels;
  labels.reserve(symbols.size());
  for (int s : symbols) {
    labels.push_back(grammar.class_of(s));
    ++count[static_cast<std::size_t>(labels.back())];
  }
  const auto best = std::max_element(count.begin(), count.end()) - count.begin();
  return {static_cast<int>(best), std::move(labels)};
}

LabeledExample make_labeled(const AbstractGrammar& grammar, const Sentence& s,
                            const Vocabulary& vocab, const std::string& lang) {
  LabeledExample ex;
  ex.ids = vocab.encode(s.tokens);
  ex.lang = lang;
  ex.index = s.index;
  auto [seq, tok] = label_example(grammar, s.realized);
  ex.seq_label = seq;
  ex.token_labels = std::move(tok);
  return ex;
}

std::vector<int> position_labels(const LabeledExample& ex) {
  if (ex.ids.size() != ex.token_labels.size() + 2) {
    throw DimensionError("example has " + std::to_string(ex.ids.size()) + " ids but " +
                         std::to_string(ex.token_labels.size()) + " token labels");
  }
  std::vector<int> out;
  out.reserve(ex.ids.size());
  out.push_back(kIgnoreIndex);
  out.insert(out.end(), ex.token_labels.begin(), ex.token_labels.end());
  out.push_back(kIgnoreIndex);
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path.string());
  return f;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  return f;
}

std::vector<std::string> split_ws(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  for (std::string t; in >> t;) out.push_back(t);
  return out;
}

}  // namespace

void write_corpus(const std::filesystem::path& path, std::span<const Sentence> corpus) {
  auto f = open_out(path);
  for (const auto& s : corpus) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) f << (i ? " " : "") << s.tokens[i];
    f << '\n';
  }
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<std::vector<std::string>> read_corpus(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<std::vector<std::string>> out;
  for (std::string line; std::getline(f, line);) out.push_back(split_ws(line));
  return out;
}

void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab) {
  auto f = open_out(path);
  for (const auto& t : vocab.tokens()) f << t << '\n';
  if (!f) throw IoError("write failed for " + path.string());
}

Vocabulary read_vocab(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<std::string> tokens;
  for (std::string line; std::getline(f, line);) tokens.push_back(line);
  return Vocabulary(std::move(tokens));
}

void write_labels(const std::filesystem::path& path, std::span<const LabeledExample> examples) {
  auto f = open_out(path);
  for (const auto& ex : examples) {
    f << ex.index << '\t' << ex.seq_label << '\t';
    for (std::size_t i = 0; i < ex.token_labels.size(); ++i) f << (i ? " " : "") << ex.token_labels[i];
    f << '\n';
  }
  if (!f) throw IoError("write failed for " + path.string());
}

std::vector<LabelRow> read_labels(const std::filesystem::path& path) {
  auto f = open_in(path);
  std::vector<LabelRow> out;
  std::size_t line_no = 0;
  for (std::string line; std::getline(f, line);) {
    ++line_no;
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected 3 tab-separated fields");
    }
    try {
      LabelRow row;
      row.index = std::stoull(line.substr(0, t1));
      row.seq_label = std::stoi(line.substr(t1 + 1, t2 - t1 - 1));
      for (const auto& t : split_ws(line.substr(t2 + 1))) row.token_labels.push_back(std::stoi(t));
      out.push_back(std::move(row));
    } catch (const std::logic_error&) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": malformed number");
    }
  }
  return out;
}

}  // namespace xmodlab
