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

#ifndef XMODLAB_TOY_LINGUA_HPP_
#define XMODLAB_TOY_LINGUA_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xmodlab/model.hpp"
#include "xmodlab/rng.hpp"

namespace xmodlab {

// Reserved vocabulary ids.
inline constexpr int kUnkId = 1;
inline constexpr int kMaskId = 2;
inline constexpr int kBosId = 3;
inline constexpr int kEosId = 4;
inline constexpr int kNumSpecial = 5;

inline const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> s{"<pad>", "<unk>", "<mask>", "<s>", "</s>"};
  return s;
}

struct GrammarConfig {
  std::size_t n_symbols = 40;
  std::size_t n_classes = 4;
  std::size_t min_len = 6;
  std::size_t max_len = 24;
  double stop_prob = 0.08;   // per-token stop probability once min_len is reached
  double peakiness = 2.0;    // log-weight scale of successor preferences
  double stickiness = 1.0;   // log-weight bonus for staying in the same class
  std::uint64_t seed = 1;
};

// K symbols in C classes (symbol s belongs to class s % C) with a first-order
// Markov chain over symbols and a uniform start distribution.
class AbstractGrammar {
 public:
  explicit AbstractGrammar(GrammarConfig config);

  const GrammarConfig& config() const { return config_; }
  std::size_t n_symbols() const { return config_.n_symbols; }
  std::size_t n_classes() const { return config_.n_classes; }
  int class_of(int symbol) const;
  double transition(int from, int to) const {
    return transition_[static_cast<std::size_t>(from) * config_.n_symbols +
                       static_cast<std::size_t>(to)];
  }
  std::span<const double> transition_row(int from) const;

  // Sentence `index` of the shared abstract stream; identical for every
  // language realizing the same index.
  std::vector<int> sentence(std::uint64_t index) const;

 private:
  GrammarConfig config_;
  std::vector<double> transition_;
  std::vector<std::vector<double>> cumulative_;
};

// Adjacent pair (first class, second class) swapped with probability `prob`.
struct SwapRule {
  int first_class = 0;
  int second_class = 0;
  double prob = 0.0;
  friend bool operator==(const SwapRule&, const SwapRule&) = default;
};

struct ToyLanguageSpec {
  std::string lang_id;
  std::string script;                // prefix of every surface token
  std::vector<std::string> lexicon;  // symbol -> surface token
  std::vector<SwapRule> swaps;
  bool reverse = false;              // realize sentences right to left
  double proportion = 1.0;           // share of the pre-training text
  std::uint64_t seed = 0;
};

struct LanguageStyle {
  std::size_t n_swap_rules = 2;
  double swap_prob = 0.8;
  bool reverse = false;
  // Symbols below round(anchor_fraction * K) keep the surface form
  // script_<symbol>, so languages sharing a script agree on them. The rest
  // are permuted among themselves.
  double anchor_fraction = 0.0;
};

// Independent language: own script, permuted lexicon, `style.n_swap_rules`
// distinct class-pair swap rules drawn from the seed.
ToyLanguageSpec make_language(const AbstractGrammar& grammar, std::string lang_id,
                              std::string script, double proportion, std::uint64_t seed,
                              const LanguageStyle& style = {});

// Member of `base`'s script family: same script, a `shared_fraction` of the
// symbols keep base's surface form, the rest get new forms.
ToyLanguageSpec make_family_language(const AbstractGrammar& grammar, const ToyLanguageSpec& base,
                                     std::string lang_id, double shared_fraction,
                                     double proportion, std::uint64_t seed,
                                     const LanguageStyle& style = {});

// Throws ConfigError on a non-bijective lexicon, bad prefix or bad rules.
void validate_language(const AbstractGrammar& grammar, const ToyLanguageSpec& spec);

struct Sentence {
  std::uint64_t index = 0;
  std::vector<int> abstract;      // grammar order
  std::vector<int> realized;      // surface order, as symbols
  std::vector<std::string> tokens;  // <s> surface... </s>
};

Sentence realize(const AbstractGrammar& grammar, const ToyLanguageSpec& spec,
                 std::uint64_t index);

// Sentences first_index .. first_index + n - 1.
std::vector<Sentence> generate_corpus(const AbstractGrammar& grammar, const ToyLanguageSpec& spec,
                                      std::size_t n_sentences, std::uint64_t first_index = 0);

// Symbol sequence of a surface sentence (specials dropped); throws on an
// unknown token.
std::vector<int> decode_surface(const ToyLanguageSpec& spec, std::span<const std::string> tokens);

class Vocabulary {
 public:
  Vocabulary() : Vocabulary(special_tokens()) {}
  explicit Vocabulary(std::vector<std::string> tokens);

  std::size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;
  int id(const std::string& token) const;  // kUnkId when absent
  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  std::vector<int> encode(std::span<const std::string> tokens) const;
  std::vector<std::string> decode(std::span<const int> ids) const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) {
    return a.tokens_ == b.tokens_;
  }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

Vocabulary build_vocab(std::span<const std::vector<std::string>> corpus, std::size_t max_size);

std::vector<InitPair> overlap_init_pairs(const Vocabulary& old_vocab, const Vocabulary& new_vocab);

struct LabeledExample {
  std::vector<int> ids;  // <s> ... </s>
  std::string lang;
  int seq_label = 0;
  std::vector<int> token_labels;  // one per surface word, specials excluded
  std::uint64_t index = 0;
};

// Majority class (ties to the lowest class) and per-symbol classes.
std::pair<int, std::vector<int>> label_example(const AbstractGrammar& grammar,
                                               std::span<const int> symbols);

LabeledExample make_labeled(const AbstractGrammar& grammar, const Sentence& s,
                            const Vocabulary& vocab, const std::string& lang);

// Position-aligned token labels for a model batch row: kIgnoreIndex on <s>
// and </s>.
std::vector<int> position_labels(const LabeledExample& ex);

// Files.
void write_corpus(const std::filesystem::path& path, std::span<const Sentence> corpus);
std::vector<std::vector<std::string>> read_corpus(const std::filesystem::path& path);
void write_vocab(const std::filesystem::path& path, const Vocabulary& vocab);
Vocabulary read_vocab(const std::filesystem::path& path);
void write_labels(const std::filesystem::path& path, std::span<const LabeledExample> examples);
// Returns (sentence index, seq label, token labels) triples.
struct LabelRow {
  std::uint64_t index = 0;
  int seq_label = 0;
  std::vector<int> token_labels;
};
std::vector<LabelRow> read_labels(const std::filesystem::path& path);

}  // namespace xmodlab

#endif  // XMODLAB_TOY_LINGUA_HPP_
