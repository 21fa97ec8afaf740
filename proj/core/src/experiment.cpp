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

#include "xmodlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <json.hpp>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <thread>

#include "xmodlab/checkpoint.hpp"
#include "xmodlab/error.hpp"

namespace xmodlab {

using nlohmann::json;

namespace {

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool is_known_variant(const std::string& v) {
  return v == "xmod" || v == "shared" || v == "shared_nm" || v == kAdapterBaseline;
}

json lang_json(const LanguageEntry& e) {
  return {{"id", e.id}, {"script", e.script}, {"proportion", e.proportion}, {"reverse", e.reverse}};
}

// Rejects keys outside `allowed` so a typo in a config file is not silently
// ignored.
void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + " must be an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || it.key() == a;
    if (!ok) throw ConfigError("unknown field '" + it.key() + "' in " + where);
  }
}

template <typename T>
void read(const json& j, const char* key, T& dst, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    dst = j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("field '" + std::string(key) + "' in " + where + " has the wrong type");
  }
}

LanguageEntry lang_from_json(const json& j, const std::string& where) {
  check_keys(j, {"id", "script", "proportion", "reverse"}, where);
  LanguageEntry e;
  read(j, "id", e.id, where);
  e.script = e.id;
  read(j, "script", e.script, where);
  read(j, "proportion", e.proportion, where);
  read(j, "reverse", e.reverse, where);
  return e;
}

json config_json(const ExperimentConfig& c) {
  const auto& g = c.grammar;
  const auto& m = c.model;
  json langs = json::array(), added = json::array(), budgets = json::array();
  for (const auto& e : c.languages) langs.push_back(lang_json(e));
  for (const auto& e : c.added) added.push_back(lang_json(e));
  for (auto b : c.budgets) budgets.push_back(to_string(b));
  return {
      {"grammar",
       {{"n_symbols", g.n_symbols}, {"n_classes", g.n_classes}, {"min_len", g.min_len},
        {"max_len", g.max_len}, {"stop_prob", g.stop_prob}, {"peakiness", g.peakiness},
        {"stickiness", g.stickiness}, {"seed", g.seed}}},
      {"style",
       {{"n_swap_rules", c.n_swap_rules},
        {"swap_prob", c.swap_prob},
        {"anchor_fraction", c.anchor_fraction}}},
      {"languages", langs},
      {"added", added},
      {"set_sizes", c.set_sizes},
      {"reference", c.reference},
      {"variants", c.variants},
      {"budgets", budgets},
      {"seeds", c.seeds},
      {"model",
       {{"n_layers", m.n_layers}, {"d_model", m.d_model}, {"n_heads", m.n_heads},
        {"d_ff", m.d_ff}, {"d_bottleneck", m.d_bottleneck}, {"max_seq_len", m.max_seq_len},
        {"dropout", m.dropout}, {"layernorm_eps", m.layernorm_eps},
        {"ff_activation", m.ff_activation}, {"module_activation", m.module_activation}}},
      {"data",
       {{"train_sentences", c.train_sentences}, {"held_sentences", c.held_sentences},
        {"dev_sentences", c.dev_sentences}, {"task_train", c.task_train},
        {"max_vocab", c.max_vocab}}},
      {"pretrain",
       {{"base_steps", c.base_steps}, {"lr", c.pretrain_lr},
        {"warmup_fraction", c.warmup_fraction}, {"batch_size", c.batch_size},
        {"alpha", c.alpha}, {"checkpoint_every", c.checkpoint_every},
        {"save_checkpoints", c.save_checkpoints}}},
      {"extend", {{"steps", c.extend_steps}, {"lr", c.extend_lr}}},
      {"adapter", {{"lr", c.adapter_lr}}},
      {"finetune",
       {{"task", c.task}, {"source", c.source}, {"steps", c.finetune_steps},
        {"lrs", c.finetune_lrs}}},
      {"eval", {{"mask_seed", c.mask_seed}}},
      {"steps_multiplier", c.steps_multiplier},
  };
}

template <typename T>
bool has_duplicates(std::vector<T> v) {
  std::sort(v.begin(), v.end());
  return std::adjacent_find(v.begin(), v.end()) != v.end();
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f << text;
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

std::size_t scaled(std::size_t steps, double multiplier) {
  return static_cast<std::size_t>(std::llround(double(steps) * multiplier));
}

bool has_adapters(const XmodModel& m) {
  return !m.layers().empty() && !m.layers()[0].adapters.empty();
}

}  // namespace

void ExperimentConfig::validate() const {
  if (languages.empty()) throw ConfigError("no pool languages");
  std::vector<std::string> ids;
  for (const auto* list : {&languages, &added})
    for (const auto& e : *list) {
      if (e.id.empty()) throw ConfigError("language with an empty id");
      if (e.script.empty()) throw ConfigError("language '" + e.id + "' has an empty script");
      if (!(e.proportion > 0) || !std::isfinite(e.proportion))
        throw ConfigError("language '" + e.id + "' needs a positive proportion");
      ids.push_back(e.id);
    }
  if (has_duplicates(ids)) throw ConfigError("language ids must be unique");
  if (set_sizes.empty()) throw ConfigError("set_sizes is empty");
  for (std::size_t i = 0; i < set_sizes.size(); ++i) {
    if (set_sizes[i] == 0 || set_sizes[i] > languages.size())
      throw ConfigError("set size " + std::to_string(set_sizes[i]) + " outside 1.." +
                        std::to_string(languages.size()));
    if (i && set_sizes[i] <= set_sizes[i - 1]) throw ConfigError("set_sizes must increase");
  }
  const auto first = pool_prefix(*this, set_sizes.front());
  for (const auto& r : reference_langs())
    if (std::find(first.begin(), first.end(), r) == first.end())
      throw ConfigError("reference language '" + r + "' is not in the smallest set");
  if (std::find(first.begin(), first.end(), source_lang()) == first.end())
    throw ConfigError("source language '" + source_lang() + "' is not in the smallest set");
  if (variants.empty()) throw ConfigError("variants is empty");
  for (const auto& v : variants)
    if (!is_known_variant(v)) throw ConfigError("unknown variant '" + v + "'");
  if (has_duplicates(variants)) throw ConfigError("duplicate variant");
  if (budgets.empty()) throw ConfigError("budgets is empty");
  if (seeds.empty()) throw ConfigError("seeds is empty");
  if (has_duplicates(seeds)) throw ConfigError("duplicate seed");
  if (task != "seq_cls" && task != "tok_cls") throw ConfigError("unknown task '" + task + "'");
  if (finetune_lrs.empty()) throw ConfigError("finetune lrs is empty");
  for (double lr : finetune_lrs)
    if (!(lr > 0)) throw ConfigError("finetune lrs must be positive");
  if (!(pretrain_lr > 0) || !(extend_lr > 0) || !(adapter_lr > 0))
    throw ConfigError("learning rates must be positive");
  if (base_steps == 0) throw ConfigError("base_steps must be positive");
  if (finetune_steps == 0) throw ConfigError("finetune steps must be positive");
  if (batch_size == 0) throw ConfigError("batch_size must be positive");
  if (!(steps_multiplier > 0) || !std::isfinite(steps_multiplier))
    throw ConfigError("steps_multiplier must be positive");
  if (!(alpha > 0) || alpha > 1) throw ConfigError("alpha must lie in (0, 1]");
  if (train_sentences == 0 || train_sentences >= 10000000)
    throw ConfigError("train_sentences must lie in 1..9999999");
  if (held_sentences == 0 || dev_sentences == 0) throw ConfigError("held and dev sets need sentences");
  if (task_train == 0 || task_train > train_sentences)
    throw ConfigError("task_train must lie in 1..train_sentences");
  if (grammar.max_len + 2 > model.max_seq_len)
    throw ConfigError("grammar max_len " + std::to_string(grammar.max_len) +
                      " plus <s> and </s> exceeds model max_seq_len " +
                      std::to_string(model.max_seq_len));
  ModelConfig m = model;
  m.vocab_size = std::max<std::size_t>(m.vocab_size, kNumSpecial + 1);
  m.validate();
  AbstractGrammar check(grammar);
  (void)check;
}

std::vector<std::string> ExperimentConfig::reference_langs() const {
  if (!reference.empty()) return reference;
  return pool_prefix(*this, set_sizes.empty() ? 1 : set_sizes.front());
}

std::string ExperimentConfig::source_lang() const {
  if (!source.empty()) return source;
  return languages.empty() ? std::string() : languages.front().id;
}

HeadKind ExperimentConfig::head_kind() const { return parse_head_kind(task); }

std::vector<std::string> ExperimentConfig::pool_ids() const {
  std::vector<std::string> out;
  for (const auto& e : languages) out.push_back(e.id);
  return out;
}

std::vector<std::string> ExperimentConfig::added_ids() const {
  std::vector<std::string> out;
  for (const auto& e : added) out.push_back(e.id);
  return out;
}

ExperimentConfig default_experiment() {
  ExperimentConfig c;
  c.grammar.peakiness = 4.0;
  const char* pool[] = {"la", "lb", "lc", "ld", "le", "lf", "lg", "lh"};
  // One script for everyone: every surface form is a false friend across
  // languages, which is where capacity competition comes from. With disjoint
  // scripts the languages never interfere at this size.
  for (int i = 0; i < 8; ++i)
    c.languages.push_back({pool[i], "w", std::pow(0.75, i), i % 2 == 1});
  c.added = {{"lx", "w", 1.0, false}, {"ly", "w", 1.0, true}};
  c.reference = {"la", "lb"};
  c.model.n_layers = 4;
  c.model.d_model = 64;
  c.model.n_heads = 4;
  c.model.d_ff = 128;
  c.model.d_bottleneck = 32;
  c.model.max_seq_len = 32;
  return c;
}

std::string to_json(const ExperimentConfig& c) { return config_json(c).dump(2) + "\n"; }

ExperimentConfig experiment_from_json(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  ExperimentConfig c = default_experiment();
  check_keys(j,
             {"grammar", "style", "languages", "added", "set_sizes", "reference", "variants",
              "budgets", "seeds", "model", "data", "pretrain", "extend", "adapter", "finetune",
              "eval", "steps_multiplier"},
             "config");
  if (j.contains("grammar")) {
    const auto& g = j["grammar"];
    check_keys(g, {"n_symbols", "n_classes", "min_len", "max_len", "stop_prob", "peakiness",
                   "stickiness", "seed"}, "grammar");
    read(g, "n_symbols", c.grammar.n_symbols, "grammar");
    read(g, "n_classes", c.grammar.n_classes, "grammar");
    read(g, "min_len", c.grammar.min_len, "grammar");
    read(g, "max_len", c.grammar.max_len, "grammar");
    read(g, "stop_prob", c.grammar.stop_prob, "grammar");
    read(g, "peakiness", c.grammar.peakiness, "grammar");
    read(g, "stickiness", c.grammar.stickiness, "grammar");
    read(g, "seed", c.grammar.seed, "grammar");
  }
  if (j.contains("style")) {
    check_keys(j["style"], {"n_swap_rules", "swap_prob", "anchor_fraction"}, "style");
    read(j["style"], "n_swap_rules", c.n_swap_rules, "style");
    read(j["style"], "swap_prob", c.swap_prob, "style");
    read(j["style"], "anchor_fraction", c.anchor_fraction, "style");
  }
  for (const char* key : {"languages", "added"}) {
    if (!j.contains(key)) continue;
    if (!j[key].is_array()) throw ConfigError(std::string(key) + " must be an array");
    auto& dst = std::string(key) == "languages" ? c.languages : c.added;
    dst.clear();
    for (std::size_t i = 0; i < j[key].size(); ++i)
      dst.push_back(lang_from_json(j[key][i], std::string(key) + "[" + std::to_string(i) + "]"));
  }
  read(j, "set_sizes", c.set_sizes, "config");
  read(j, "reference", c.reference, "config");
  read(j, "variants", c.variants, "config");
  read(j, "seeds", c.seeds, "config");
  if (j.contains("budgets")) {
    std::vector<std::string> b;
    read(j, "budgets", b, "config");
    c.budgets.clear();
    for (const auto& s : b) c.budgets.push_back(parse_budget_mode(s));
  }
  if (j.contains("model")) {
    const auto& m = j["model"];
    check_keys(m, {"n_layers", "d_model", "n_heads", "d_ff", "d_bottleneck", "max_seq_len",
                   "dropout", "layernorm_eps", "ff_activation", "module_activation"}, "model");
    read(m, "n_layers", c.model.n_layers, "model");
    read(m, "d_model", c.model.d_model, "model");
    read(m, "n_heads", c.model.n_heads, "model");
    read(m, "d_ff", c.model.d_ff, "model");
    read(m, "d_bottleneck", c.model.d_bottleneck, "model");
    read(m, "max_seq_len", c.model.max_seq_len, "model");
    read(m, "dropout", c.model.dropout, "model");
    read(m, "layernorm_eps", c.model.layernorm_eps, "model");
    read(m, "ff_activation", c.model.ff_activation, "model");
    read(m, "module_activation", c.model.module_activation, "model");
  }
  if (j.contains("data")) {
    const auto& d = j["data"];
    check_keys(d, {"train_sentences", "held_sentences", "dev_sentences", "task_train", "max_vocab"},
               "data");
    read(d, "train_sentences", c.train_sentences, "data");
    read(d, "held_sentences", c.held_sentences, "data");
    read(d, "dev_sentences", c.dev_sentences, "data");
    read(d, "task_train", c.task_train, "data");
    read(d, "max_vocab", c.max_vocab, "data");
  }
  if (j.contains("pretrain")) {
    const auto& p = j["pretrain"];
    check_keys(p, {"base_steps", "lr", "warmup_fraction", "batch_size", "alpha",
                   "checkpoint_every", "save_checkpoints"}, "pretrain");
    read(p, "base_steps", c.base_steps, "pretrain");
    read(p, "lr", c.pretrain_lr, "pretrain");
    read(p, "warmup_fraction", c.warmup_fraction, "pretrain");
    read(p, "batch_size", c.batch_size, "pretrain");
    read(p, "alpha", c.alpha, "pretrain");
    read(p, "checkpoint_every", c.checkpoint_every, "pretrain");
    read(p, "save_checkpoints", c.save_checkpoints, "pretrain");
  }
  if (j.contains("extend")) {
    check_keys(j["extend"], {"steps", "lr"}, "extend");
    read(j["extend"], "steps", c.extend_steps, "extend");
    read(j["extend"], "lr", c.extend_lr, "extend");
  }
  if (j.contains("adapter")) {
    check_keys(j["adapter"], {"lr"}, "adapter");
    read(j["adapter"], "lr", c.adapter_lr, "adapter");
  }
  if (j.contains("finetune")) {
    const auto& f = j["finetune"];
    check_keys(f, {"task", "source", "steps", "lrs"}, "finetune");
    read(f, "task", c.task, "finetune");
    read(f, "source", c.source, "finetune");
    read(f, "steps", c.finetune_steps, "finetune");
    read(f, "lrs", c.finetune_lrs, "finetune");
  }
  if (j.contains("eval")) {
    check_keys(j["eval"], {"mask_seed"}, "eval");
    read(j["eval"], "mask_seed", c.mask_seed, "eval");
  }
  read(j, "steps_multiplier", c.steps_multiplier, "config");
  c.validate();
  return c;
}

ExperimentConfig load_experiment(const std::filesystem::path& path) {
  try {
    return experiment_from_json(read_text(path));
  } catch (const ConfigError& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

std::string config_hash(const ExperimentConfig& c) { return hex64(fnv1a(config_json(c).dump())); }

// ---------------------------------------------------------------------------

const ToyLanguageSpec& ToyData::spec(const std::string& lang) const {
  auto it = index.find(lang);
  if (it == index.end()) throw RegistryError("unknown language '" + lang + "'");
  return specs[it->second];
}

const Vocabulary& ToyData::vocab_for(const std::string& lang) const {
  spec(lang);
  auto it = added_vocabs.find(lang);
  return it == added_vocabs.end() ? pool_vocab : it->second;
}

std::vector<std::vector<int>> ToyData::held_ids(const std::string& lang) const {
  const auto& v = vocab_for(lang);
  std::vector<std::vector<int>> out;
  for (const auto& s : held[index.at(lang)]) out.push_back(v.encode(s.tokens));
  return out;
}

std::vector<LabeledExample> ToyData::labeled(const std::string& lang, const std::string& split,
                                             std::size_t limit) const {
  const std::size_t i = index.at(spec(lang).lang_id);
  const std::vector<Sentence>* src = nullptr;
  if (split == "train") src = &train[i];
  else if (split == "dev") src = &dev[i];
  else if (split == "held") src = &held[i];
  else throw ConfigError("unknown split '" + split + "'");
  const std::size_t n = limit ? std::min(limit, src->size()) : src->size();
  std::vector<LabeledExample> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) out.push_back(make_labeled(grammar, (*src)[k], vocab_for(lang), lang));
  return out;
}

LanguageCorpus ToyData::corpus(const std::string& lang) const {
  const auto& v = vocab_for(lang);
  LanguageCorpus c{lang, {}, v.size()};
  for (const auto& s : train[index.at(lang)]) c.sentences.push_back(v.encode(s.tokens));
  return c;
}

ToyData build_data(const ExperimentConfig& c, std::uint64_t seed) {
  c.validate();
  ToyData d;
  GrammarConfig g = c.grammar;
  g.seed = Rng(c.grammar.seed).split("grammar", seed).seed();
  d.grammar = AbstractGrammar(g);
  std::vector<LanguageEntry> all = c.languages;
  all.insert(all.end(), c.added.begin(), c.added.end());
  std::vector<std::vector<std::string>> pool_tokens;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const auto& e = all[i];
    LanguageStyle style;
    style.n_swap_rules = c.n_swap_rules;
    style.swap_prob = c.swap_prob;
    style.anchor_fraction = c.anchor_fraction;
    style.reverse = e.reverse;
    d.specs.push_back(make_language(d.grammar, e.id, e.script, e.proportion,
                                    Rng(c.grammar.seed).split("language:" + e.id, seed).seed(),
                                    style));
    d.index[e.id] = i;
    d.train.push_back(generate_corpus(d.grammar, d.specs.back(), c.train_sentences, i * 10000000ULL));
    d.dev.push_back(generate_corpus(d.grammar, d.specs.back(), c.dev_sentences, 800000000ULL));
    d.held.push_back(generate_corpus(d.grammar, d.specs.back(), c.held_sentences, 900000000ULL));
    if (i < c.languages.size()) {
      for (const auto& s : d.train.back()) pool_tokens.push_back(s.tokens);
    } else {
      std::vector<std::vector<std::string>> own;
      for (const auto& s : d.train.back()) own.push_back(s.tokens);
      d.added_vocabs[e.id] = build_vocab(own, c.max_vocab);
    }
  }
  d.pool_vocab = build_vocab(pool_tokens, c.max_vocab);
  return d;
}

void write_data(const ToyData& data, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  write_vocab(dir / "vocab.pool.txt", data.pool_vocab);
  for (const auto& [lang, v] : data.added_vocabs) write_vocab(dir / ("vocab." + lang + ".txt"), v);
  for (const auto& s : data.specs) {
    const std::size_t i = data.index.at(s.lang_id);
    write_corpus(dir / (s.lang_id + ".train.txt"), data.train[i]);
    write_corpus(dir / (s.lang_id + ".dev.txt"), data.dev[i]);
    write_corpus(dir / (s.lang_id + ".held.txt"), data.held[i]);
    write_labels(dir / (s.lang_id + ".dev.labels.tsv"), data.labeled(s.lang_id, "dev"));
    write_labels(dir / (s.lang_id + ".held.labels.tsv"), data.labeled(s.lang_id, "held"));
  }
}

// ---------------------------------------------------------------------------

std::string cell_id(const Cell& c) {
  return c.variant + "_n" + std::to_string(c.n_langs) + "_" + to_string(c.budget) + "_s" +
         std::to_string(c.seed);
}

std::string describe(const Cell& c) {
  return "variant=" + c.variant + " n_langs=" + std::to_string(c.n_langs) +
         " budget=" + to_string(c.budget) + " seed=" + std::to_string(c.seed);
}

std::vector<Cell> experiment_grid(const ExperimentConfig& c) {
  std::vector<Cell> out;
  for (auto seed : c.seeds)
    for (const auto& v : c.variants)
      for (auto b : c.budgets)
        for (auto n : c.set_sizes) out.push_back(Cell{v, n, b, seed});
  return out;
}

std::string cell_hash(const ExperimentConfig& c, const Cell& cell) {
  json j = config_json(c);
  j.erase("seeds");
  j.erase("variants");
  j.erase("budgets");
  return hex64(fnv1a(j.dump() + "|" + cell_id(cell)));
}

std::vector<std::string> pool_prefix(const ExperimentConfig& c, std::size_t n_langs) {
  if (n_langs > c.languages.size())
    throw ConfigError("set of " + std::to_string(n_langs) + " languages exceeds the pool");
  std::vector<std::string> out;
  for (std::size_t i = 0; i < n_langs; ++i) out.push_back(c.languages[i].id);
  return out;
}

std::size_t pretrain_steps(const ExperimentConfig& c, std::size_t n_langs, BudgetMode budget) {
  std::vector<LanguageSet> sets;
  std::size_t which = c.set_sizes.size();
  for (std::size_t i = 0; i < c.set_sizes.size(); ++i) {
    LanguageSet s;
    for (std::size_t k = 0; k < c.set_sizes[i]; ++k) {
      s.langs.push_back(c.languages[k].id);
      s.proportions.push_back(c.languages[k].proportion);
    }
    sets.push_back(std::move(s));
    if (c.set_sizes[i] == n_langs) which = i;
  }
  if (which == c.set_sizes.size())
    throw ConfigError("set size " + std::to_string(n_langs) + " is not in the grid");
  const auto steps = scaled_steps(budget, c.base_steps, sets, c.reference_langs(), c.alpha);
  return std::max<std::size_t>(1, scaled(steps[which], c.steps_multiplier));
}

std::size_t extend_steps(const ExperimentConfig& c) { return scaled(c.extend_steps, c.steps_multiplier); }

BatchSampler make_sampler(const ExperimentConfig& c, const ToyData& data,
                          std::span<const std::string> langs, std::uint64_t seed) {
  std::vector<LanguageCorpus> corpora;
  SamplerConfig sc;
  for (const auto& l : langs) {
    corpora.push_back(data.corpus(l));
    sc.proportions.push_back(data.spec(l).proportion);
  }
  sc.alpha = c.alpha;
  sc.seed = seed;
  sc.batch_size = c.batch_size;
  sc.max_seq_len = c.model.max_seq_len;
  return BatchSampler(std::move(corpora), sc);
}

namespace {

BatchFn sampler_batches(std::shared_ptr<const BatchSampler> s) {
  return [s](std::uint64_t step) {
    auto b = s->batch(step);
    return TrainBatch{std::move(b.tokens), std::move(b.labels)};
  };
}

}  // namespace

XmodModel pretrain_stage(const ExperimentConfig& c, const ToyData& data,
                         const std::string& variant, std::span<const std::string> langs,
                         std::size_t steps, std::uint64_t seed, StageLog& log,
                         const RunOptions& options) {
  if (!is_known_variant(variant)) throw ConfigError("unknown variant '" + variant + "'");
  ModelConfig mc = c.model;
  mc.vocab_size = data.pool_vocab.size();
  const bool baseline = variant == kAdapterBaseline;
  mc.variant = baseline ? Variant::kSharedNm : parse_variant(variant);
  std::vector<std::string> lang_vec(langs.begin(), langs.end());
  XmodModel model(mc, lang_vec, Rng(seed).split("init").seed());
  auto sampler = std::make_shared<const BatchSampler>(
      make_sampler(c, data, langs, Rng(seed).split("mlm").seed()));
  if (baseline) {
    const auto plan = adapter_plan(steps);
    auto per_lang = [&](const std::string& lang) {
      const std::vector<std::string> one{lang};
      return sampler_batches(std::make_shared<const BatchSampler>(
          make_sampler(c, data, one, Rng(seed).split("mlm:" + lang).seed())));
    };
    auto res = adapter_baseline(model, langs, plan, c.pretrain_lr, c.adapter_lr,
                                sampler_batches(sampler), per_lang, seed);
    log.pretrain = std::move(res.body_log);
    log.adapters = std::move(res.adapter_logs);
    log.steps += plan.body_steps + plan.adapter_steps * langs.size();
    return model;
  }
  log.pretrain = run_regime(model,
                            pretrain_regime(model, {c.pretrain_lr, c.warmup_fraction, steps}),
                            sampler_batches(sampler), Rng(seed).split("pretrain").seed(), options);
  log.steps += steps;
  return model;
}

void extend_stage(XmodModel& model, const ExperimentConfig& c, const ToyData& data,
                  std::span<const std::string> langs, std::size_t steps, std::uint64_t seed,
                  StageLog& log) {
  if (langs.empty() || steps == 0) return;
  const bool adapters = has_adapters(model);
  for (const auto& lang : langs) {
    if (!data.is_added(lang))
      throw ConfigError("language '" + lang + "' is not an added language of this config");
    const auto& v = data.vocab_for(lang);
    model.add_language(lang, v.size(), overlap_init_pairs(data.pool_vocab, v),
                       Rng(seed).split("add:" + lang).seed());
    if (adapters) model.add_adapter(lang, Rng(seed).split("add_adapter:" + lang).seed());
  }
  auto sampler = std::make_shared<const BatchSampler>(
      make_sampler(c, data, langs, Rng(seed).split("mlm_extend").seed()));
  std::vector<std::string> lang_vec(langs.begin(), langs.end());
  log.extend = run_regime(model, extend_regime(model, lang_vec, {c.extend_lr, c.warmup_fraction, steps}),
                          sampler_batches(sampler), Rng(seed).split("extend").seed());
  log.steps += steps;
}

FinetuneResult finetune_stage(const XmodModel& model, const ExperimentConfig& c,
                              const ToyData& data, std::uint64_t seed, StageLog& log) {
  const auto source = c.source_lang();
  const auto kind = c.head_kind();
  const auto train = data.labeled(source, "train", c.task_train);
  const auto dev = data.labeled(source, "dev");
  auto res = finetune_select(model, kind, c.grammar.n_classes, source, c.finetune_lrs,
                             c.finetune_steps,
                             task_batches(train, kind, c.batch_size, Rng(seed).split("task").seed()),
                             dev, seed);
  log.finetune = res.log;
  log.steps += c.finetune_steps * c.finetune_lrs.size();
  return res;
}

std::string task_metric_name(HeadKind k) {
  return k == HeadKind::kSeqCls ? "seq_cls_accuracy" : "tok_cls_f1";
}

std::vector<EvalRow> perplexity_rows(const XmodModel& model, const ExperimentConfig& c,
                                     const ToyData& data, const RowKey& key,
                                     std::span<const std::string> langs, const std::string& group,
                                     const std::string& metric) {
  const auto ref = c.reference_langs();
  std::vector<EvalRow> rows;
  for (const auto& lang : langs) {
    const double v = pseudo_perplexity(ModelView<float>(model), data.held_ids(lang), lang, c.mask_seed);
    rows.push_back({key.variant, key.n_langs, key.budget, key.seed, lang, group, metric, v});
    if (std::find(ref.begin(), ref.end(), lang) != ref.end())
      rows.push_back({key.variant, key.n_langs, key.budget, key.seed, lang, "reference", metric, v});
  }
  return rows;
}

std::vector<EvalRow> transfer_rows(const XmodModel& finetuned, const ExperimentConfig& c,
                                   const ToyData& data, const RowKey& key,
                                   std::span<const std::string> langs, const std::string& group) {
  const auto source = c.source_lang();
  const auto metric = task_metric_name(c.head_kind());
  const auto ref = c.reference_langs();
  std::vector<EvalRow> rows;
  for (const auto& lang : langs) {
    const auto ex = data.labeled(lang, "held");
    const double v = zero_shot_eval(finetuned, source, lang, ex);
    const bool is_source = lang == source;
    rows.push_back({key.variant, key.n_langs, key.budget, key.seed, lang,
                    is_source ? "source" : group, metric, v});
    if (!is_source && std::find(ref.begin(), ref.end(), lang) != ref.end())
      rows.push_back({key.variant, key.n_langs, key.budget, key.seed, lang, "reference", metric, v});
  }
  return rows;
}

std::string to_json(const CellRecord& r) {
  json j{{"hash", r.hash},
         {"variant", r.cell.variant},
         {"n_langs", r.cell.n_langs},
         {"budget_mode", to_string(r.cell.budget)},
         {"seed", r.cell.seed},
         {"pretrain_steps", r.pretrain_steps},
         {"extend_steps", r.extend_steps},
         {"total_steps", r.total_steps},
         {"finetune_lr", r.finetune_lr},
         {"source_dev", r.source_dev},
         {"seconds", r.seconds}};
  return j.dump(2) + "\n";
}

CellRecord cell_record_from_json(const std::string& text) {
  try {
    const json j = json::parse(text);
    CellRecord r;
    r.hash = j.at("hash").get<std::string>();
    r.cell.variant = j.at("variant").get<std::string>();
    r.cell.n_langs = j.at("n_langs").get<std::size_t>();
    r.cell.budget = parse_budget_mode(j.at("budget_mode").get<std::string>());
    r.cell.seed = j.at("seed").get<std::uint64_t>();
    r.pretrain_steps = j.at("pretrain_steps").get<std::size_t>();
    r.extend_steps = j.at("extend_steps").get<std::size_t>();
    r.total_steps = j.at("total_steps").get<std::size_t>();
    r.finetune_lr = j.at("finetune_lr").get<double>();
    r.source_dev = j.at("source_dev").get<double>();
    r.seconds = j.at("seconds").get<double>();
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("malformed cell record: ") + e.what());
  }
}

CellRecord run_cell(const ExperimentConfig& c, const ToyData& data, const Cell& cell,
                    const std::filesystem::path& dir, std::vector<EvalRow>* rows_out) {
  const auto t0 = std::chrono::steady_clock::now();
  std::filesystem::create_directories(dir);
  const auto langs = pool_prefix(c, cell.n_langs);
  const RowKey key{cell.variant, cell.n_langs, to_string(cell.budget), cell.seed};
  CellRecord rec;
  rec.hash = cell_hash(c, cell);
  rec.cell = cell;
  rec.pretrain_steps = pretrain_steps(c, cell.n_langs, cell.budget);

  std::vector<EvalRow> rows;
  StageLog log;
  RunOptions opts;
  if (c.checkpoint_every > 0 && cell.variant != kAdapterBaseline) {
    opts.checkpoint_every = c.checkpoint_every;
    opts.on_checkpoint = [&](std::size_t step, const XmodModel& m) {
      if (step == rec.pretrain_steps) return;  // the final model is evaluated below
      auto r = perplexity_rows(m, c, data, key, langs, "pretrained",
                               "pseudo_perplexity@" + std::to_string(step));
      rows.insert(rows.end(), r.begin(), r.end());
      if (c.save_checkpoints) save_checkpoint(m, dir / ("pretrain_step" + std::to_string(step)));
    };
  }
  XmodModel model = pretrain_stage(c, data, cell.variant, langs, rec.pretrain_steps, cell.seed, log, opts);
  write_loss_log(dir / "pretrain_loss.csv", log.pretrain);
  for (const auto& [lang, l] : log.adapters) write_loss_log(dir / ("adapter_" + lang + "_loss.csv"), l);
  if (c.save_checkpoints) save_checkpoint(model, dir / "pretrained");
  auto ppl = perplexity_rows(model, c, data, key, langs, "pretrained");
  rows.insert(rows.end(), ppl.begin(), ppl.end());

  const auto added = c.added_ids();
  rec.extend_steps = added.empty() ? 0 : extend_steps(c);
  if (rec.extend_steps > 0) {
    extend_stage(model, c, data, added, rec.extend_steps, cell.seed, log);
    write_loss_log(dir / "extend_loss.csv", log.extend);
    if (c.save_checkpoints) save_checkpoint(model, dir / "extended");
    auto r = perplexity_rows(model, c, data, key, added, "added");
    rows.insert(rows.end(), r.begin(), r.end());
  }

  auto ft = finetune_stage(model, c, data, cell.seed, log);
  write_loss_log(dir / "finetune_loss.csv", log.finetune);
  if (c.save_checkpoints) save_checkpoint(ft.model, dir / "finetuned");
  rec.finetune_lr = ft.lr;
  rec.source_dev = ft.dev_metric;
  auto tr = transfer_rows(ft.model, c, data, key, langs, "pretrained");
  rows.insert(rows.end(), tr.begin(), tr.end());
  if (rec.extend_steps > 0) {
    auto ta = transfer_rows(ft.model, c, data, key, added, "added");
    rows.insert(rows.end(), ta.begin(), ta.end());
  }

  rows = with_group_means(rows);
  write_eval_csv(dir / "eval.csv", rows);
  rec.total_steps = log.steps;
  rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_text_atomic(dir / "record.json", to_json(rec));
  if (rows_out) *rows_out = std::move(rows);
  return rec;
}

namespace {

bool cell_done(const std::filesystem::path& dir, const std::string& hash) {
  const auto rec = dir / "record.json";
  if (!std::filesystem::exists(rec) || !std::filesystem::exists(dir / "eval.csv")) return false;
  try {
    return cell_record_from_json(read_text(rec)).hash == hash;
  } catch (const IoError&) {
    return false;
  }
}

}  // namespace

SweepStats run_cells(const ExperimentConfig& c, const std::filesystem::path& out,
                     std::span<const Cell> cells, const SweepOptions& options) {
  c.validate();
  std::filesystem::create_directories(out / "cells");
  std::vector<Cell> todo;
  SweepStats stats;
  for (const auto& cell : cells) {
    if (cell_done(out / "cells" / cell_id(cell), cell_hash(c, cell))) ++stats.skipped;
    else todo.push_back(cell);
  }
  std::mutex mu;
  std::map<std::uint64_t, std::shared_ptr<const ToyData>> cache;
  auto data_for = [&](std::uint64_t seed) {
    std::lock_guard<std::mutex> lock(mu);
    auto& slot = cache[seed];
    if (!slot) slot = std::make_shared<const ToyData>(build_data(c, seed));
    return slot;
  };
  auto say = [&](const std::string& s) {
    if (!options.log) return;
    std::lock_guard<std::mutex> lock(mu);
    *options.log << s << std::endl;
  };
  if (stats.skipped) say("skipping " + std::to_string(stats.skipped) + " finished cells");

  std::atomic<std::size_t> next{0}, done{0}, steps{0};
  std::atomic<bool> failed{false};
  std::exception_ptr error;
  auto worker = [&] {
    while (!failed) {
      const std::size_t i = next++;
      if (i >= todo.size()) return;
      try {
        const auto& cell = todo[i];
        auto data = data_for(cell.seed);
        const auto rec = run_cell(c, *data, cell, out / "cells" / cell_id(cell));
        steps += rec.total_steps;
        char buf[96];
        std::snprintf(buf, sizeof buf, ": %zu updates, %.1f s", rec.total_steps, rec.seconds);
        say("[" + std::to_string(++done) + "/" + std::to_string(todo.size()) + "] " +
            describe(cell) + buf);
      } catch (...) {
        std::lock_guard<std::mutex> lock(mu);
        if (!error) error = std::current_exception();
        failed = true;
      }
    }
  };
  const std::size_t jobs = std::max<std::size_t>(1, std::min(options.jobs, todo.size()));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t j = 0; j < jobs; ++j) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (error) std::rethrow_exception(error);
  stats.ran = todo.size();
  stats.steps = steps;
  return stats;
}

SweepStats run_sweep(const ExperimentConfig& c, const std::filesystem::path& out,
                     const SweepOptions& options) {
  c.validate();
  std::filesystem::create_directories(out);
  write_text_atomic(out / "config.json", to_json(c));
  const auto grid = experiment_grid(c);
  const auto stats = run_cells(c, out, grid, options);

  std::vector<EvalRow> merged;
  for (const auto& cell : grid) {
    auto r = read_eval_csv(out / "cells" / cell_id(cell) / "eval.csv");
    merged.insert(merged.end(), r.begin(), r.end());
  }
  write_eval_csv(out / "results.csv", merged);
  return stats;
}

std::vector<EvalRow> collect_rows(const std::filesystem::path& out) {
  std::vector<EvalRow> rows;
  const auto cells = out / "cells";
  if (std::filesystem::is_directory(cells)) {
    std::vector<std::filesystem::path> dirs;
    for (const auto& e : std::filesystem::directory_iterator(cells))
      if (e.is_directory() && std::filesystem::exists(e.path() / "record.json") &&
          std::filesystem::exists(e.path() / "eval.csv"))
        dirs.push_back(e.path());
    std::sort(dirs.begin(), dirs.end());
    for (const auto& d : dirs) {
      auto r = read_eval_csv(d / "eval.csv");
      rows.insert(rows.end(), r.begin(), r.end());
    }
    return rows;
  }
  const auto csv = out / "results.csv";
  if (!std::filesystem::exists(csv)) throw IoError("no results under " + out.string());
  return read_eval_csv(csv);
}

}  // namespace xmodlab
