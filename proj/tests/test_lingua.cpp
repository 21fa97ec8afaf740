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

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "xmodlab/data.hpp"
#include "xmodlab/error.hpp"
#include "xmodlab/toy_lingua.hpp"

namespace xmodlab {
namespace {

GrammarConfig small_grammar(std::uint64_t seed = 3) {
  GrammarConfig g;
  g.seed = seed;
  return g;
}

std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("xmodlab_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

TEST(Grammar, RowsAreDistributionsAndClassesPartition) {
  AbstractGrammar g(small_grammar());
  for (std::size_t s = 0; s < g.n_symbols(); ++s) {
    double sum = 0;
    for (double p : g.transition_row(static_cast<int>(s))) {
      EXPECT_GE(p, 0.0);
      sum += p;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
    const int c = g.class_of(static_cast<int>(s));
    EXPECT_GE(c, 0);
    EXPECT_LT(c, static_cast<int>(g.n_classes()));
  }
}

TEST(Grammar, SentenceLengthsRespectBounds) {
  AbstractGrammar g(small_grammar());
  for (std::uint64_t i = 0; i < 2000; ++i) {
    const auto s = g.sentence(i);
    EXPECT_GE(s.size(), g.config().min_len);
    EXPECT_LE(s.size(), g.config().max_len);
  }
}

// Monte Carlo against the transition matrix: for every (from, to) cell the
// observed count of `to` among continuations of `from` is binomial.
TEST(Grammar, BigramFrequenciesFollowTransitionMatrix) {
  AbstractGrammar g(small_grammar(17));
  const std::size_t K = g.n_symbols();
  std::vector<double> counts(K * K, 0.0), from(K, 0.0);
  for (std::uint64_t i = 0; i < 100000; ++i) {
    const auto s = g.sentence(i);
    for (std::size_t t = 0; t + 1 < s.size(); ++t) {
      counts[static_cast<std::size_t>(s[t]) * K + static_cast<std::size_t>(s[t + 1])] += 1;
      from[static_cast<std::size_t>(s[t])] += 1;
    }
  }
  std::size_t outside3 = 0;
  double worst = 0;
  for (std::size_t a = 0; a < K; ++a) {
    ASSERT_GT(from[a], 0.0);
    for (std::size_t b = 0; b < K; ++b) {
      const double p = g.transition(static_cast<int>(a), static_cast<int>(b));
      const double sd = std::sqrt(from[a] * p * (1 - p));
      const double dev = std::abs(counts[a * K + b] - from[a] * p);
      if (sd == 0) {
        EXPECT_EQ(dev, 0.0);
        continue;
      }
      worst = std::max(worst, dev / sd);
      if (dev > 3 * sd) ++outside3;
    }
  }
  // 1600 cells: about 4 are expected beyond 3 sigma by chance alone.
  EXPECT_LE(outside3, K * K / 100) << "cells beyond 3 sigma";
  EXPECT_LT(worst, 5.0);
}

TEST(Languages, SameSeedsGiveIdenticalCorpora) {
  AbstractGrammar g(small_grammar());
  auto spec = make_language(g, "aa", "aa", 0.5, 7);
  auto a = generate_corpus(g, spec, 50);
  auto b = generate_corpus(g, make_language(g, "aa", "aa", 0.5, 7), 50);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].tokens, b[i].tokens);
    EXPECT_EQ(a[i].abstract, b[i].abstract);
  }
}

TEST(Languages, AlignedSentencesShareAbstractFormButNotSurface) {
  AbstractGrammar g(small_grammar());
  auto x = make_language(g, "xa", "xa", 0.5, 1);
  auto y = make_language(g, "yb", "yb", 0.5, 2);
  auto cx = generate_corpus(g, x, 200, 1000);
  auto cy = generate_corpus(g, y, 200, 1000);
  for (std::size_t i = 0; i < cx.size(); ++i) {
    EXPECT_EQ(cx[i].abstract, cy[i].abstract);
    ASSERT_EQ(cx[i].tokens.front(), "<s>");
    ASSERT_EQ(cx[i].tokens.back(), "</s>");
    std::set<std::string> sx(cx[i].tokens.begin() + 1, cx[i].tokens.end() - 1);
    for (std::size_t t = 1; t + 1 < cy[i].tokens.size(); ++t) EXPECT_EQ(sx.count(cy[i].tokens[t]), 0u);
  }
}

TEST(Languages, LexiconsAreDisjointAndBijective) {
  AbstractGrammar g(small_grammar());
  std::vector<ToyLanguageSpec> specs;
  for (int i = 0; i < 4; ++i) {
    const std::string id = std::string("l") + static_cast<char>('a' + i);
    specs.push_back(make_language(g, id, id, 0.25, 40 + i));
  }
  std::set<std::string> all;
  std::size_t total = 0;
  for (const auto& s : specs) {
    EXPECT_NO_THROW(validate_language(g, s));
    std::set<std::string> own(s.lexicon.begin(), s.lexicon.end());
    EXPECT_EQ(own.size(), g.n_symbols());
    for (const auto& w : s.lexicon) EXPECT_EQ(w.rfind(s.script, 0), 0u);
    all.insert(own.begin(), own.end());
    total += own.size();
  }
  EXPECT_EQ(all.size(), total);
}

TEST(Languages, AnchorsAgreeAndTheRestArePermuted) {
  AbstractGrammar g(small_grammar());
  const std::size_t K = g.n_symbols();
  LanguageStyle style;
  style.anchor_fraction = 0.25;
  const std::size_t n_anchor = K / 4;
  auto plain = make_language(g, "pa", "w", 1.0, 3);
  auto a = make_language(g, "aa", "w", 1.0, 3, style);
  auto b = make_language(g, "ab", "w", 1.0, 4, style);
  std::size_t differ = 0;
  for (std::size_t s = 0; s < K; ++s) {
    if (s < n_anchor) {
      EXPECT_EQ(a.lexicon[s], "w_" + std::to_string(s));
      EXPECT_EQ(a.lexicon[s], b.lexicon[s]);
    } else {
      const int id = std::stoi(a.lexicon[s].substr(2));
      EXPECT_GE(id, static_cast<int>(n_anchor));
      differ += a.lexicon[s] != b.lexicon[s];
    }
  }
  EXPECT_GT(differ, (K - n_anchor) / 2);
  EXPECT_EQ(std::set<std::string>(a.lexicon.begin(), a.lexicon.end()).size(), K);
  // Swap rules come from the same stream, so anchoring changes only the lexicon.
  EXPECT_EQ(a.swaps, plain.swaps);
  style.anchor_fraction = 1.5;
  EXPECT_THROW(make_language(g, "bad", "w", 1.0, 3, style), ConfigError);
}

TEST(Languages, SurfaceDecodesToRealizedSymbols) {
  AbstractGrammar g(small_grammar());
  LanguageStyle style;
  style.reverse = true;
  auto spec = make_language(g, "zz", "zz", 1.0, 9, style);
  for (const auto& s : generate_corpus(g, spec, 100)) {
    EXPECT_EQ(decode_surface(spec, s.tokens), s.realized);
    auto sorted_a = s.abstract, sorted_r = s.realized;
    std::sort(sorted_a.begin(), sorted_a.end());
    std::sort(sorted_r.begin(), sorted_r.end());
    EXPECT_EQ(sorted_a, sorted_r);
  }
}

TEST(Languages, DeterministicSwapRuleReordersAdjacentPair) {
  GrammarConfig gc = small_grammar();
  AbstractGrammar g(gc);
  auto spec = make_language(g, "sw", "sw", 1.0, 5);
  spec.swaps = {{0, 1, 1.0}};
  for (const auto& s : generate_corpus(g, spec, 200)) {
    // Oracle: left-to-right scan, a swapped pair is not revisited.
    std::vector<int> want = s.abstract;
    for (std::size_t i = 0; i + 1 < want.size();) {
      if (g.class_of(want[i]) == 0 && g.class_of(want[i + 1]) == 1) {
        std::swap(want[i], want[i + 1]);
        i += 2;
      } else {
        ++i;
      }
    }
    EXPECT_EQ(s.realized, want);
  }
}

TEST(Languages, InvalidSpecsAreRejected) {
  AbstractGrammar g(small_grammar());
  auto spec = make_language(g, "bad", "bad", 1.0, 5);
  auto dup = spec;
  dup.lexicon[1] = dup.lexicon[0];
  EXPECT_THROW(validate_language(g, dup), ConfigError);
  auto prefix = spec;
  prefix.lexicon[0] = "other_0";
  EXPECT_THROW(validate_language(g, prefix), ConfigError);
  auto prop = spec;
  prop.proportion = 0;
  EXPECT_THROW(validate_language(g, prop), ConfigError);
}

TEST(Vocab, RepeatedTokenGivesSpecialsPlusOne) {
  std::vector<std::vector<std::string>> corpus{{"w", "w"}, {"w"}};
  auto v = build_vocab(corpus, 100);
  ASSERT_EQ(v.size(), 6u);
  for (int i = 0; i < kNumSpecial; ++i) EXPECT_EQ(v.token(i), special_tokens()[i]);
  EXPECT_EQ(v.token(5), "w");
}

TEST(Vocab, FrequencyTiesAreLexicographic) {
  std::vector<std::vector<std::string>> corpus{{"pear", "apple", "fig", "fig", "kiwi", "banana"}};
  auto v = build_vocab(corpus, 100);
  std::vector<std::string> got(v.tokens().begin() + kNumSpecial, v.tokens().end());
  EXPECT_EQ(got, (std::vector<std::string>{"fig", "apple", "banana", "kiwi", "pear"}));
  auto cut = build_vocab(corpus, 7);
  EXPECT_EQ(cut.size(), 7u);
  EXPECT_EQ(cut.token(6), "apple");
}

TEST(Vocab, UnknownCoverageMatchesBruteForce) {
  AbstractGrammar g(small_grammar());
  auto spec = make_language(g, "cv", "cv", 1.0, 3);
  std::vector<std::vector<std::string>> corpus;
  for (const auto& s : generate_corpus(g, spec, 300)) corpus.push_back(s.tokens);
  auto v = build_vocab(corpus, 25);
  std::set<std::string> kept(v.tokens().begin(), v.tokens().end());
  std::size_t brute = 0, via_vocab = 0;
  for (const auto& s : corpus) {
    for (const auto& t : s) brute += kept.count(t) ? 0 : 1;
    for (int id : v.encode(s)) via_vocab += id == kUnkId ? 1 : 0;
  }
  EXPECT_EQ(via_vocab, brute);
  EXPECT_GT(brute, 0u);
}

TEST(Vocab, EncodeDecodeRoundTrip) {
  AbstractGrammar g(small_grammar());
  auto spec = make_language(g, "rt", "rt", 1.0, 3);
  auto corpus = generate_corpus(g, spec, 50);
  std::vector<std::vector<std::string>> toks;
  for (const auto& s : corpus) toks.push_back(s.tokens);
  auto v = build_vocab(toks, 500);
  for (const auto& s : corpus) EXPECT_EQ(v.decode(v.encode(s.tokens)), s.tokens);
}

TEST(Vocab, ConstructorRejectsBadLayouts) {
  EXPECT_THROW(Vocabulary(std::vector<std::string>{"<pad>", "<unk>"}), ConfigError);
  auto dup = special_tokens();
  dup.push_back("x");
  dup.push_back("x");
  EXPECT_THROW(Vocabulary{dup}, ConfigError);
}

TEST(OverlapPairs, IdenticalVocabulariesPairEveryId) {
  auto toks = special_tokens();
  for (int i = 0; i < 10; ++i) toks.push_back("t" + std::to_string(i));
  Vocabulary v(toks);
  auto pairs = overlap_init_pairs(v, v);
  ASSERT_EQ(pairs.size(), v.size());
  for (const auto& p : pairs) EXPECT_EQ(p.new_id, p.old_id);
}

TEST(OverlapPairs, DisjointScriptsPairOnlySpecials) {
  AbstractGrammar g(small_grammar());
  auto a = make_language(g, "oa", "oa", 1.0, 1), b = make_language(g, "ob", "ob", 1.0, 2);
  auto va = build_vocab(std::vector<std::vector<std::string>>{a.lexicon}, 500);
  auto vb = build_vocab(std::vector<std::vector<std::string>>{b.lexicon}, 500);
  auto pairs = overlap_init_pairs(va, vb);
  ASSERT_EQ(pairs.size(), static_cast<std::size_t>(kNumSpecial));
  for (int i = 0; i < kNumSpecial; ++i) EXPECT_EQ(pairs[i], (InitPair{i, i}));
}

TEST(OverlapPairs, FamilyLanguageMatchesSetIntersection) {
  AbstractGrammar g(small_grammar());
  auto base = make_language(g, "fa", "fa", 1.0, 1);
  auto kin = make_family_language(g, base, "fb", 0.3, 1.0, 2);
  EXPECT_NO_THROW(validate_language(g, kin));
  auto vb = build_vocab(std::vector<std::vector<std::string>>{base.lexicon}, 500);
  auto vk = build_vocab(std::vector<std::vector<std::string>>{kin.lexicon}, 500);
  std::set<std::string> sb(vb.tokens().begin(), vb.tokens().end());
  std::size_t inter = 0;
  for (const auto& t : vk.tokens()) inter += sb.count(t);
  auto pairs = overlap_init_pairs(vb, vk);
  EXPECT_EQ(pairs.size(), inter);
  EXPECT_EQ(inter, kNumSpecial + static_cast<std::size_t>(std::lround(0.3 * g.n_symbols())));
  for (const auto& p : pairs) EXPECT_EQ(vk.token(p.new_id), vb.token(p.old_id));
}

TEST(Labels, AllClassZero) {
  AbstractGrammar g(small_grammar());
  const int C = static_cast<int>(g.n_classes());
  std::vector<int> syms{0, C, 2 * C, 0};
  auto [seq, tok] = label_example(g, syms);
  EXPECT_EQ(seq, 0);
  EXPECT_EQ(tok, std::vector<int>(4, 0));
}

TEST(Labels, TieGoesToLowestClass) {
  AbstractGrammar g(small_grammar());
  auto [seq, tok] = label_example(g, std::vector<int>{2, 1, 1 + 4, 2 + 4});
  EXPECT_EQ(seq, 1);
  EXPECT_EQ(tok, (std::vector<int>{2, 1, 1, 2}));
}

TEST(Labels, RandomSequencesMatchCountingOracle) {
  AbstractGrammar g(small_grammar());
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> syms(1 + rng.below(20));
    for (auto& s : syms) s = static_cast<int>(rng.below(g.n_symbols()));
    std::vector<int> count(g.n_classes(), 0);
    for (int s : syms) ++count[static_cast<std::size_t>(g.class_of(s))];
    int best = 0;
    for (int c = 1; c < static_cast<int>(count.size()); ++c)
      if (count[static_cast<std::size_t>(c)] > count[static_cast<std::size_t>(best)]) best = c;
    EXPECT_EQ(label_example(g, syms).first, best);
  }
}

TEST(Labels, IdenticalAcrossLanguagesForAlignedSentences) {
  AbstractGrammar g(small_grammar());
  LanguageStyle rev;
  rev.reverse = true;
  auto a = make_language(g, "ka", "ka", 1.0, 1), b = make_language(g, "kb", "kb", 1.0, 2, rev);
  auto ca = generate_corpus(g, a, 100), cb = generate_corpus(g, b, 100);
  std::vector<std::vector<std::string>> all;
  for (auto& s : ca) all.push_back(s.tokens);
  for (auto& s : cb) all.push_back(s.tokens);
  auto v = build_vocab(all, 500);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    auto la = make_labeled(g, ca[i], v, "ka"), lb = make_labeled(g, cb[i], v, "kb");
    EXPECT_EQ(la.seq_label, lb.seq_label);
    auto sa = la.token_labels, sb = lb.token_labels;
    std::sort(sa.begin(), sa.end());
    std::sort(sb.begin(), sb.end());
    EXPECT_EQ(sa, sb);
    const auto pos = position_labels(la);
    ASSERT_EQ(pos.size(), la.ids.size());
    EXPECT_EQ(pos.front(), kIgnoreIndex);
    EXPECT_EQ(pos.back(), kIgnoreIndex);
  }
}

TEST(Files, CorpusVocabAndLabelsRoundTrip) {
  auto dir = scratch_dir("files");
  AbstractGrammar g(small_grammar());
  auto spec = make_language(g, "io", "io", 1.0, 3);
  auto corpus = generate_corpus(g, spec, 20);
  write_corpus(dir / "c.txt", corpus);
  auto back = read_corpus(dir / "c.txt");
  ASSERT_EQ(back.size(), corpus.size());
  std::vector<std::vector<std::string>> toks;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    EXPECT_EQ(back[i], corpus[i].tokens);
    toks.push_back(corpus[i].tokens);
  }
  auto v = build_vocab(toks, 500);
  write_vocab(dir / "v.txt", v);
  EXPECT_EQ(read_vocab(dir / "v.txt"), v);
  std::vector<LabeledExample> ex;
  for (const auto& s : corpus) ex.push_back(make_labeled(g, s, v, "io"));
  write_labels(dir / "l.tsv", ex);
  auto rows = read_labels(dir / "l.tsv");
  ASSERT_EQ(rows.size(), ex.size());
  for (std::size_t i = 0; i < ex.size(); ++i) {
    EXPECT_EQ(rows[i].index, ex[i].index);
    EXPECT_EQ(rows[i].seq_label, ex[i].seq_label);
    EXPECT_EQ(rows[i].token_labels, ex[i].token_labels);
  }
}

TEST(Files, MalformedLabelLineNamesTheLine) {
  auto dir = scratch_dir("badlabels");
  {
    std::ofstream f(dir / "l.tsv");
    f << "0\t1\t1 2\n1\tx\t0\n";
  }
  try {
    read_labels(dir / "l.tsv");
    FAIL() << "expected IoError";
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("2"), std::string::npos) << e.what();
  }
}

// ---- data pipeline ----

TEST(AlphaProbs, UniformStaysUniform) {
  std::vector<double> q(5, 0.2);
  for (double a : {0.1, 0.5, 0.7, 1.0})
    for (double p : alpha_probs(q, a)) EXPECT_NEAR(p, 0.2, 1e-15);
}

TEST(AlphaProbs, AlphaOneIsIdentity) {
  std::vector<double> q{0.5, 0.3, 0.2};
  auto p = alpha_probs(q, 1.0);
  for (std::size_t i = 0; i < q.size(); ++i) EXPECT_NEAR(p[i], q[i], 1e-15);
}

TEST(AlphaProbs, ClosedFormTwoLanguages) {
  std::vector<double> q{0.9, 0.1};
  auto p = alpha_probs(q, 0.7);
  const double a = std::pow(0.9, 0.7), b = std::pow(0.1, 0.7);
  EXPECT_NEAR(p[0], a / (a + b), 1e-12);
  EXPECT_NEAR(p[1], b / (a + b), 1e-12);
  EXPECT_NEAR(p[0], 0.8232, 5e-5);
  EXPECT_NEAR(p[1], 0.1768, 5e-5);
}

TEST(AlphaProbs, OrderingAndNormalization) {
  Rng rng(2);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> q(2 + rng.below(7));
    double s = 0;
    for (auto& x : q) s += (x = 0.01 + rng.uniform());
    for (auto& x : q) x /= s;
    auto p = alpha_probs(q, 0.7);
    double sum = 0;
    for (double x : p) sum += x;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    for (std::size_t i = 0; i < q.size(); ++i)
      for (std::size_t j = 0; j < q.size(); ++j)
        if (q[i] < q[j]) EXPECT_LT(p[i], p[j]);
  }
}

TEST(AlphaProbs, RejectsBadInput) {
  EXPECT_THROW(alpha_probs(std::vector<double>{0.5, 0.0}, 0.7), ConfigError);
  EXPECT_THROW(alpha_probs(std::vector<double>{0.5, -0.1}, 0.7), ConfigError);
  EXPECT_THROW(alpha_probs(std::vector<double>{0.5, 0.5}, 0.0), ConfigError);
  EXPECT_THROW(alpha_probs(std::vector<double>{0.5, 0.5}, 1.5), ConfigError);
}

std::vector<LanguageCorpus> toy_corpora(std::size_t n_langs, std::size_t vocab_size = 60) {
  std::vector<LanguageCorpus> out;
  for (std::size_t l = 0; l < n_langs; ++l) {
    LanguageCorpus c{"L" + std::to_string(l), {}, vocab_size};
    for (int s = 0; s < 30; ++s) {
      std::vector<int> ids{kBosId};
      for (int t = 0; t < 5 + s % 7; ++t) ids.push_back(kNumSpecial + (s * 7 + t) % 50);
      ids.push_back(kEosId);
      c.sentences.push_back(ids);
    }
    out.push_back(std::move(c));
  }
  return out;
}

TEST(Sampler, SingleLanguageRows) {
  SamplerConfig sc;
  sc.proportions = {1.0};
  sc.seed = 4;
  BatchSampler s(toy_corpora(1), sc);
  for (std::uint64_t step = 0; step < 5; ++step)
    for (const auto& l : s.batch(step).tokens.langs) EXPECT_EQ(l, "L0");
}

TEST(Sampler, SameSeedSameStream) {
  SamplerConfig sc;
  sc.proportions = {0.6, 0.4};
  sc.seed = 9;
  BatchSampler a(toy_corpora(2), sc), b(toy_corpora(2), sc);
  for (std::uint64_t step = 0; step < 10; ++step) {
    auto x = a.batch(step), y = b.batch(step);
    EXPECT_EQ(x.tokens.ids, y.tokens.ids);
    EXPECT_EQ(x.tokens.langs, y.tokens.langs);
    EXPECT_EQ(x.labels, y.labels);
  }
  EXPECT_NE(a.batch(0).tokens.ids, a.batch(1).tokens.ids);
}

// Language frequency over 1e5 draws against binomial 3-sigma bands.
TEST(Sampler, LanguageFrequenciesWithinThreeSigma) {
  SamplerConfig sc;
  sc.proportions = {0.4, 0.25, 0.15, 0.1, 0.05, 0.03, 0.015, 0.005};
  sc.seed = 21;
  sc.batch_size = 100;
  BatchSampler s(toy_corpora(8), sc);
  std::vector<double> count(8, 0);
  const std::size_t n = 100000;
  for (std::uint64_t step = 0; step < n / sc.batch_size; ++step)
    for (std::size_t l : s.languages(step)) count[l] += 1;
  const auto p = alpha_probs(sc.proportions, 0.7);
  for (std::size_t l = 0; l < 8; ++l) {
    const double sd = std::sqrt(n * p[l] * (1 - p[l]));
    EXPECT_LE(std::abs(count[l] - n * p[l]), 3 * sd) << "language " << l;
  }
}

TEST(Sampler, RowLanguageMatchesItsTokens) {
  auto corpora = toy_corpora(3);
  // Give each language its own id range so rows can be traced back.
  for (std::size_t l = 0; l < 3; ++l)
    for (auto& s : corpora[l].sentences)
      for (auto& id : s)
        if (id >= kNumSpecial) id += static_cast<int>(100 * l);
  for (auto& c : corpora) c.vocab_size = 400;
  SamplerConfig sc;
  sc.proportions = {0.5, 0.3, 0.2};
  sc.mask.rate = 0;
  BatchSampler s(corpora, sc);
  auto b = s.batch(3);
  for (std::size_t r = 0; r < b.tokens.batch; ++r) {
    const int lang = b.tokens.langs[r][1] - '0';
    for (std::size_t t = 0; t < b.tokens.seq_len; ++t) {
      const int id = b.tokens.ids[r * b.tokens.seq_len + t];
      if (id >= kNumSpecial) EXPECT_EQ((id - kNumSpecial) / 100, lang);
    }
  }
}

TEST(Sampler, EmptyCorpusRejected) {
  auto c = toy_corpora(2);
  c[1].sentences.clear();
  SamplerConfig sc;
  sc.proportions = {0.5, 0.5};
  BatchSampler s(c, sc);
  EXPECT_THROW(s.batch(0), ConfigError);
}

TEST(Masking, RateZeroIsIdentity) {
  Rng rng(1);
  std::vector<int> ids{kBosId, 7, 8, 9, kEosId};
  MaskConfig mc;
  mc.rate = 0;
  auto [out, labels] = mask_tokens(ids, 20, rng, mc);
  EXPECT_EQ(out, ids);
  for (int l : labels) EXPECT_EQ(l, kIgnoreIndex);
}

TEST(Masking, SpecialsNeverSelected) {
  Rng rng(2);
  std::vector<int> ids{kBosId, 9, kUnkId, 10, kPadId, 11, kMaskId, kEosId};
  MaskConfig mc;
  mc.rate = 0.9;
  for (int d = 0; d < 10000; ++d) {
    auto [out, labels] = mask_tokens(ids, 20, rng, mc);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      if (ids[i] < kNumSpecial) {
        EXPECT_EQ(out[i], ids[i]);
        EXPECT_EQ(labels[i], kIgnoreIndex);
      }
    }
  }
}

// Selection rate and the 80/10/10 split against binomial 3-sigma bands.
TEST(Masking, SelectionAndSplitWithinThreeSigma) {
  Rng rng(1);
  const int V = 40;
  std::vector<int> ids{kBosId};
  for (int i = 0; i < 100; ++i) ids.push_back(kNumSpecial + i % (V - kNumSpecial));
  ids.push_back(kEosId);
  double n = 0, selected = 0, masked = 0, random_or_kept_same = 0, changed_random = 0;
  for (int d = 0; d < 1000; ++d) {
    auto [out, labels] = mask_tokens(ids, V, rng);
    for (std::size_t i = 1; i + 1 < ids.size(); ++i) {
      n += 1;
      if (labels[i] == kIgnoreIndex) {
        EXPECT_EQ(out[i], ids[i]);
        continue;
      }
      EXPECT_EQ(labels[i], ids[i]);
      selected += 1;
      if (out[i] == kMaskId) {
        masked += 1;
      } else {
        EXPECT_GE(out[i], kNumSpecial);
        EXPECT_LT(out[i], V);
        if (out[i] == ids[i]) random_or_kept_same += 1;
        else changed_random += 1;
      }
    }
  }
  ASSERT_EQ(n, 100000);
  auto within = [](double count, double trials, double p) {
    return std::abs(count - trials * p) <= 3 * std::sqrt(trials * p * (1 - p));
  };
  EXPECT_TRUE(within(selected, n, 0.15)) << selected;
  EXPECT_TRUE(within(masked, selected, 0.8)) << masked;
  // Unchanged = the 10% keep plus random draws that hit the original token.
  const double p_same = 0.1 + 0.1 / (V - kNumSpecial);
  EXPECT_TRUE(within(random_or_kept_same, selected, p_same)) << random_or_kept_same;
  EXPECT_TRUE(within(changed_random, selected, 0.1 - 0.1 / (V - kNumSpecial))) << changed_random;
}

TEST(Batching, TruncationKeepsEndMarker) {
  std::vector<int> ids{kBosId, 5, 6, 7, 8, kEosId};
  auto t = truncate_sentence(ids, 4);
  EXPECT_EQ(t, (std::vector<int>{kBosId, 5, 6, kEosId}));
  EXPECT_EQ(truncate_sentence(ids, 10), ids);
}

}  // namespace
}  // namespace xmodlab
