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

#include "xmodlab/data.hpp"

#include <algorithm>
#include <cmath>

#include "xmodlab/error.hpp"
#include "xmodlab/toy_lingua.hpp"

namespace xmodlab {

std::vector<double> alpha_probs(std::span<const double> q, double alpha) {
  if (q.empty()) throw ConfigError("alpha_probs needs at least one proportion");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alpha must be in (0, 1]");
  std::vector<double> p(q.size());
  double z = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (!(q[i] > 0.0) || !std::isfinite(q[i])) {
      throw ConfigError("proportion " + std::to_string(i) + " must be positive, got " +
                        std::to_string(q[i]));
    }
    p[i] = std::pow(q[i], alpha);
    z += p[i];
  }
  for (auto& v : p) v /= z;
  return p;
}

std::pair<std::vector<int>, std::vector<int>> mask_tokens(std::span<const int> ids,
                                                          std::size_t vocab_size, Rng& rng,
                                                          const MaskConfig& config) {
  if (vocab_size <= static_cast<std::size_t>(kNumSpecial)) {
    throw ConfigError("vocabulary has no non-special tokens");
  }
  std::vector<int> out(ids.begin(), ids.end());
  std::vector<int> labels(ids.size(), kIgnoreIndex);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < kNumSpecial) continue;
    if (!rng.bernoulli(config.rate)) continue;
    labels[i] = ids[i];
    const double u = rng.uniform();
    if (u < config.mask_frac) {
      out[i] = kMaskId;
    } else if (u < config.mask_frac + config.random_frac) {
      out[i] = kNumSpecial + static_cast<int>(rng.below(vocab_size - kNumSpecial));
    }
  }
  return {std::move(out), std::move(labels)};
}

std::vector<int> truncate_sentence(std::span<const int> ids, std::size_t max_len) {
  if (ids.size() <= max_len) return {ids.begin(), ids.end()};
  if (max_len < 2) throw ConfigError("max_seq_len must be at least 2");
  std::vector<int> out(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(max_len - 1));
  out.push_back(kEosId);
  return out;
}

std::uint64_t lang_mix_hash(std::span<const std::string> langs) {
  std::uint64_t h = 0x9e3779b97f4a7c15ULL;
  for (const auto& l : langs) h = combine_seed(h, hash_string(l));
  return h;
}

BatchSampler::BatchSampler(std::vector<LanguageCorpus> corpora, SamplerConfig config)
    : corpora_(std::move(corpora)), config_(std::move(config)) {
  if (corpora_.empty()) throw ConfigError("sampler needs at least one language");
  if (config_.proportions.size() != corpora_.size()) {
    throw ConfigError("sampler has " + std::to_string(config_.proportions.size()) +
                      " proportions for " + std::to_string(corpora_.size()) + " corpora");
  }
  if (config_.batch_size == 0) throw ConfigError("batch_size must be positive");
  probs_ = alpha_probs(config_.proportions, config_.alpha);
  double acc = 0;
  for (double p : probs_) cumulative_.push_back(acc += p);
  cumulative_.back() = 1.0;
}

std::vector<std::size_t> BatchSampler::languages(std::uint64_t step) const {
  Rng rng = Rng(config_.seed).split("sample", step);
  std::vector<std::size_t> out;
  for (std::size_t r = 0; r < config_.batch_size; ++r) {
    const double u = rng.uniform();
    out.push_back(static_cast<std::size_t>(
        std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin()));
    rng.uniform();  // sentence draw slot, kept so both views consume alike
  }
  return out;
}

MLMBatch BatchSampler::batch(std::uint64_t step) const {
  Rng rng = Rng(config_.seed).split("sample", step);
  Rng mask_rng = Rng(config_.seed).split("mask", step);
  std::vector<std::vector<int>> rows;
  std::vector<std::vector<int>> labels;
  std::vector<std::string> langs;
  for (std::size_t r = 0; r < config_.batch_size; ++r) {
    const double u = rng.uniform();
    const auto li = static_cast<std::size_t>(
        std::upper_bound(cumulative_.begin(), cumulative_.end(), u) - cumulative_.begin());
    const LanguageCorpus& c = corpora_[li];
    if (c.sentences.empty()) throw ConfigError("empty corpus for language '" + c.lang + "'");
    const auto si = static_cast<std::size_t>(rng.uniform() * double(c.sentences.size()));
    auto ids = truncate_sentence(c.sentences[std::min(si, c.sentences.size() - 1)],
                                 config_.max_seq_len);
    auto [corrupted, lab] = mask_tokens(ids, c.vocab_size, mask_rng, config_.mask);
    rows.push_back(std::move(corrupted));
    labels.push_back(std::move(lab));
    langs.push_back(c.lang);
  }
  MLMBatch b;
  b.tokens = make_token_batch(rows, langs);
  b.labels.assign(b.tokens.ids.size(), kIgnoreIndex);
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::copy(labels[r].begin(), labels[r].end(), b.labels.begin() + r * b.tokens.seq_len);
  return b;
}

}  // namespace xmodlab
