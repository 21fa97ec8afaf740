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

#ifndef XMODLAB_DATA_HPP_
#define XMODLAB_DATA_HPP_

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "xmodlab/model.hpp"
#include "xmodlab/rng.hpp"

namespace xmodlab {

// p_i = q_i^alpha / sum_j q_j^alpha, in the order of q.
std::vector<double> alpha_probs(std::span<const double> q, double alpha);

struct MaskConfig {
  double rate = 0.15;
  double mask_frac = 0.8;    // of selected: replaced by <mask>
  double random_frac = 0.1;  // of selected: replaced by a random non-special token
};

// Corrupted ids and labels (original id at selected positions, kIgnoreIndex
// elsewhere). Ids below the special-token count are never selected.
std::pair<std::vector<int>, std::vector<int>> mask_tokens(std::span<const int> ids,
                                                          std::size_t vocab_size, Rng& rng,
                                                          const MaskConfig& config = {});

// Encoded sentences of one language, each <s> ... </s>.
struct LanguageCorpus {
  std::string lang;
  std::vector<std::vector<int>> sentences;
  std::size_t vocab_size = 0;
};

struct SamplerConfig {
  std::vector<double> proportions;  // aligned with the corpora
  double alpha = 0.7;
  std::uint64_t seed = 0;
  std::size_t batch_size = 16;
  std::size_t max_seq_len = 32;
  MaskConfig mask;
};

struct MLMBatch {
  TokenBatch tokens;        // input ids, pad mask, language per row
  std::vector<int> labels;  // [batch * seq_len]
};

// Draws MLM batches: each row's language i.i.d. from alpha_probs, a sentence
// uniformly within it, then masking. batch(step) is a pure function of
// (seed, step).
class BatchSampler {
 public:
  BatchSampler(std::vector<LanguageCorpus> corpora, SamplerConfig config);

  MLMBatch batch(std::uint64_t step) const;
  const std::vector<double>& probs() const { return probs_; }
  const std::vector<LanguageCorpus>& corpora() const { return corpora_; }

  // Language index of every row of batch(step), without masking work.
  std::vector<std::size_t> languages(std::uint64_t step) const;

 private:
  std::vector<LanguageCorpus> corpora_;
  SamplerConfig config_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

// Truncates to max_len keeping </s> as the last id.
std::vector<int> truncate_sentence(std::span<const int> ids, std::size_t max_len);

// Order-sensitive hash of a batch's language tags.
std::uint64_t lang_mix_hash(std::span<const std::string> langs);

}  // namespace xmodlab

#endif  // XMODLAB_DATA_HPP_
