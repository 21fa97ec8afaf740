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

#include "xmodlab/model.hpp"

#include <algorithm>
#include <cstring>
#include <set>
#include <stdexcept>

#include "xmodlab/error.hpp"

namespace xmodlab {

std::string to_string(Variant v) {
  switch (v) {
    case Variant::kXmod: return "xmod";
    case Variant::kShared: return "shared";
    case Variant::kSharedNm: return "shared_nm";
  }
  return "?";
}

Variant parse_variant(const std::string& s) {
  if (s == "xmod") return Variant::kXmod;
  if (s == "shared") return Variant::kShared;
  if (s == "shared_nm") return Variant::kSharedNm;
  throw ConfigError("unknown variant '" + s + "'");
}

std::string to_string(RoleKind k) {
  switch (k) {
    case RoleKind::kSharedBody: return "shared_body";
    case RoleKind::kTokenEmbedding: return "token_embedding";
    case RoleKind::kPositionalEmbedding: return "positional_embedding";
    case RoleKind::kModule: return "module";
    case RoleKind::kTaskHead: return "task_head";
    case RoleKind::kPostHocAdapter: return "post_hoc_adapter";
  }
  return "?";
}

RoleKind parse_role_kind(const std::string& s) {
  for (RoleKind k : {RoleKind::kSharedBody, RoleKind::kTokenEmbedding,
                     RoleKind::kPositionalEmbedding, RoleKind::kModule,
                     RoleKind::kTaskHead, RoleKind::kPostHocAdapter}) {
    if (to_string(k) == s) return k;
  }
  throw ConfigError("unknown parameter role '" + s + "'");
}

std::string to_string(const ParameterRole& r) {
  std::string s = to_string(r.kind);
  if (!r.lang.empty()) s += "(" + r.lang + ")";
  if (r.vocab >= 0) s += "(" + std::to_string(r.vocab) + ")";
  return s;
}

RoleFilter roles_in(std::vector<ParameterRole> roles) {
  return [roles = std::move(roles)](const ParameterRole& r) {
    return std::find(roles.begin(), roles.end(), r) != roles.end();
  };
}

RoleFilter role_kind_is(RoleKind kind) {
  return [kind](const ParameterRole& r) { return r.kind == kind; };
}

std::string to_string(HeadKind k) {
  return k == HeadKind::kSeqCls ? "seq_cls" : "tok_cls";
}

HeadKind parse_head_kind(const std::string& s) {
  if (s == "seq_cls") return HeadKind::kSeqCls;
  if (s == "tok_cls") return HeadKind::kTokCls;
  throw ConfigError("unknown head kind '" + s + "'");
}

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError(m); };
  if (n_layers == 0) fail("n_layers must be positive");
  if (d_model == 0 || n_heads == 0) fail("d_model and n_heads must be positive");
  if (d_model % n_heads != 0) {
    fail("d_model " + std::to_string(d_model) + " not divisible by n_heads " +
         std::to_string(n_heads));
  }
  if (d_ff == 0 || d_bottleneck == 0) fail("d_ff and d_bottleneck must be positive");
  if (vocab_size < 5) fail("vocab_size must cover the 5 special tokens");
  if (max_seq_len == 0) fail("max_seq_len must be positive");
  if (dropout < 0.0 || dropout >= 1.0) fail("dropout must be in [0, 1)");
  if (layernorm_eps <= 0.0) fail("layernorm_eps must be positive");
  if (ff_activation != "gelu" || module_activation != "gelu") {
    fail("only the gelu activation is supported");
  }
}

ModelConfig base_size_config() {
  ModelConfig c;
  c.variant = Variant::kXmod;
  c.n_layers = 12;
  c.d_model = 768;
  c.n_heads = 12;
  c.d_ff = 3072;
  c.d_bottleneck = 384;
  c.vocab_size = 250002;
  c.max_seq_len = 514;
  return c;
}

// ---------------------------------------------------------------------------
// Model construction.

namespace {

template <typename T>
Param<T> make_param(std::string name, ParameterRole role, Shape shape) {
  return Param<T>{std::move(name), std::move(role), BasicTensor<T>(std::move(shape))};
}

template <typename T>
void init_normal(Param<T>& p, const Rng* root) {
  if (!root) return;
  Rng rng = root->split("init").split(p.name);
  for (auto& v : p.value.data()) v = static_cast<T>(rng.truncated_normal(0.02));
}

template <typename T>
void init_fill(Param<T>& p, T value) {
  for (auto& v : p.value.data()) v = value;
}

std::string layer_prefix(std::size_t i) { return "layer." + std::to_string(i) + "."; }

}  // namespace

template <typename T>
BasicXmodModel<T>::BasicXmodModel(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t d = config_.d_model;
  emb_ln_g_ = make_param<T>("emb_ln.gamma", ParameterRole::shared_body(), {d});
  emb_ln_b_ = make_param<T>("emb_ln.beta", ParameterRole::shared_body(), {d});
  init_fill(emb_ln_g_, T(1));
  layers_.resize(config_.n_layers);
  for (std::size_t i = 0; i < config_.n_layers; ++i) {
    XmodLayer<T>& l = layers_[i];
    const std::string p = layer_prefix(i);
    const auto body = ParameterRole::shared_body();
    l.q_w = make_param<T>(p + "attn.q.w", body, {d, d});
    l.q_b = make_param<T>(p + "attn.q.b", body, {d});
    l.k_w = make_param<T>(p + "attn.k.w", body, {d, d});
    l.k_b = make_param<T>(p + "attn.k.b", body, {d});
    l.v_w = make_param<T>(p + "attn.v.w", body, {d, d});
    l.v_b = make_param<T>(p + "attn.v.b", body, {d});
    l.o_w = make_param<T>(p + "attn.o.w", body, {d, d});
    l.o_b = make_param<T>(p + "attn.o.b", body, {d});
    l.ln_att_g = make_param<T>(p + "ln_att.gamma", body, {d});
    l.ln_att_b = make_param<T>(p + "ln_att.beta", body, {d});
    l.ff1_w = make_param<T>(p + "ff.1.w", body, {d, config_.d_ff});
    l.ff1_b = make_param<T>(p + "ff.1.b", body, {config_.d_ff});
    l.ff2_w = make_param<T>(p + "ff.2.w", body, {config_.d_ff, d});
    l.ff2_b = make_param<T>(p + "ff.2.b", body, {d});
    l.ln_ff_g = make_param<T>(p + "ln_ff.gamma", body, {d});
    l.ln_ff_b = make_param<T>(p + "ln_ff.beta", body, {d});
    init_fill(l.ln_att_g, T(1));
    init_fill(l.ln_ff_g, T(1));
  }
}

template <typename T>
BasicXmodModel<T>::BasicXmodModel(ModelConfig config,
                                  const std::vector<std::string>& languages,
                                  std::uint64_t seed)
    : BasicXmodModel(std::move(config)) {
  if (config_.variant == Variant::kXmod && languages.empty()) {
    throw ConfigError("an XMOD model needs at least one language");
  }
  Rng root(seed);
  vocabs_.emplace(0, make_vocab(0, config_.vocab_size, &root));
  for (auto& l : layers_) {
    for (Param<T>* p : {&l.q_w, &l.k_w, &l.v_w, &l.o_w, &l.ff1_w, &l.ff2_w})
      init_normal(*p, &root);
  }
  for (const auto& lang : languages) register_language(lang, 0);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (config_.variant == Variant::kXmod) {
      for (const auto& lang : languages) {
        layers_[i].modules.emplace(
            lang, make_bottleneck(i, layer_prefix(i) + "module." + lang + ".",
                                  ParameterRole::module(lang), &root));
      }
    } else if (config_.variant == Variant::kShared) {
      layers_[i].modules.emplace(
          kSharedModuleKey,
          make_bottleneck(i, layer_prefix(i) + "module." + kSharedModuleKey + ".",
                          ParameterRole::module(kSharedModuleKey), &root));
    }
  }
}

template <typename T>
Bottleneck<T> BasicXmodModel<T>::make_bottleneck(std::size_t, const std::string& prefix,
                                                 const ParameterRole& role,
                                                 Rng* rng) const {
  const std::size_t d = config_.d_model, b = config_.d_bottleneck;
  Bottleneck<T> m;
  m.down_w = make_param<T>(prefix + "down.w", role, {d, b});
  m.down_b = make_param<T>(prefix + "down.b", role, {b});
  m.up_w = make_param<T>(prefix + "up.w", role, {b, d});
  m.up_b = make_param<T>(prefix + "up.b", role, {d});
  init_normal(m.down_w, rng);
  init_normal(m.up_w, rng);
  return m;
}

template <typename T>
VocabTables<T> BasicXmodModel<T>::make_vocab(int vocab, std::size_t size, Rng* rng) const {
  const std::string p = "vocab." + std::to_string(vocab) + ".";
  VocabTables<T> v;
  v.tokens = make_param<T>(p + "tokens", ParameterRole::token_embedding(vocab),
                           {size, config_.d_model});
  v.positions = make_param<T>(p + "positions", ParameterRole::positional_embedding(vocab),
                              {config_.max_seq_len, config_.d_model});
  v.out_bias = make_param<T>(p + "out_bias", ParameterRole::token_embedding(vocab), {size});
  init_normal(v.tokens, rng);
  init_normal(v.positions, rng);
  return v;
}

template <typename T>
std::vector<std::string> BasicXmodModel<T>::languages() const {
  std::vector<std::string> out;
  for (const auto& [lang, _] : languages_) out.push_back(lang);
  return out;
}

template <typename T>
bool BasicXmodModel<T>::has_language(const std::string& lang) const {
  return languages_.count(lang) > 0;
}

template <typename T>
int BasicXmodModel<T>::vocab_of(const std::string& lang) const {
  auto it = languages_.find(lang);
  if (it == languages_.end()) throw RegistryError("unknown language '" + lang + "'");
  return it->second;
}

template <typename T>
std::size_t BasicXmodModel<T>::vocab_size(int vocab) const {
  return vocab_tables(vocab).tokens.value.dim(0);
}

template <typename T>
std::vector<int> BasicXmodModel<T>::vocab_ids() const {
  std::vector<int> out;
  for (const auto& [id, _] : vocabs_) out.push_back(id);
  return out;
}

template <typename T>
const VocabTables<T>& BasicXmodModel<T>::vocab_tables(int vocab) const {
  auto it = vocabs_.find(vocab);
  if (it == vocabs_.end()) throw RegistryError("unknown vocabulary " + std::to_string(vocab));
  return it->second;
}

template <typename T>
void BasicXmodModel<T>::register_language(const std::string& lang, int vocab) {
  if (lang.empty() || lang == kSharedModuleKey) {
    throw RegistryError("invalid language id '" + lang + "'");
  }
  if (!languages_.emplace(lang, vocab).second) {
    throw RegistryError("language '" + lang + "' is already registered");
  }
}

template <typename T>
VocabTables<T>& BasicXmodModel<T>::ensure_vocab(int vocab, std::size_t size) {
  auto it = vocabs_.find(vocab);
  if (it == vocabs_.end()) it = vocabs_.emplace(vocab, make_vocab(vocab, size, nullptr)).first;
  return it->second;
}

template <typename T>
Bottleneck<T>& BasicXmodModel<T>::ensure_module(std::size_t layer, const std::string& key) {
  auto& mods = layers_.at(layer).modules;
  auto it = mods.find(key);
  if (it == mods.end()) {
    it = mods.emplace(key, make_bottleneck(layer, layer_prefix(layer) + "module." + key + ".",
                                           ParameterRole::module(key), nullptr))
             .first;
  }
  return it->second;
}

template <typename T>
Bottleneck<T>& BasicXmodModel<T>::ensure_adapter(std::size_t layer, const std::string& key) {
  auto& mods = layers_.at(layer).adapters;
  auto it = mods.find(key);
  if (it == mods.end()) {
    it = mods.emplace(key, make_bottleneck(layer, layer_prefix(layer) + "adapter." + key + ".",
                                           ParameterRole::post_hoc_adapter(key), nullptr))
             .first;
  }
  return it->second;
}

template <typename T>
TaskHead<T>& BasicXmodModel<T>::ensure_head(HeadKind kind, std::size_t n_out) {
  if (!head_ || head_->kind != kind || head_->n_out != n_out) {
    TaskHead<T> h;
    h.kind = kind;
    h.n_out = n_out;
    h.w = make_param<T>("head.w", ParameterRole::task_head(), {config_.d_model, n_out});
    h.b = make_param<T>("head.b", ParameterRole::task_head(), {n_out});
    head_ = std::move(h);
  }
  return *head_;
}

template <typename T>
void BasicXmodModel<T>::add_language(const std::string& lang, std::size_t vocab_size,
                                     std::span<const InitPair> init_pairs,
                                     std::uint64_t seed) {
  if (has_language(lang)) throw RegistryError("language '" + lang + "' is already registered");
  if (vocab_size < 5) throw ConfigError("new vocabulary must cover the special tokens");
  const VocabTables<T>& old = vocab_tables(0);
  const std::size_t old_size = old.tokens.value.dim(0);
  for (const InitPair& p : init_pairs) {
    if (p.new_id < 0 || static_cast<std::size_t>(p.new_id) >= vocab_size ||
        p.old_id < 0 || static_cast<std::size_t>(p.old_id) >= old_size) {
      throw IndexError("init pair (" + std::to_string(p.new_id) + " <- " +
                       std::to_string(p.old_id) + ") out of range for vocabularies of " +
                       std::to_string(vocab_size) + " and " + std::to_string(old_size));
    }
  }
  const int vocab = vocabs_.rbegin()->first + 1;
  Rng root = Rng(seed).split("add_language").split(lang);
  VocabTables<T> tables = make_vocab(vocab, vocab_size, &root);
  const std::size_t d = config_.d_model;
  for (const InitPair& p : init_pairs) {
    std::copy_n(old.tokens.value.data().begin() + static_cast<std::size_t>(p.old_id) * d, d,
                tables.tokens.value.data().begin() + static_cast<std::size_t>(p.new_id) * d);
    tables.out_bias.value[static_cast<std::size_t>(p.new_id)] =
        old.out_bias.value[static_cast<std::size_t>(p.old_id)];
  }
  tables.positions.value = old.positions.value;
  vocabs_.emplace(vocab, std::move(tables));
  register_language(lang, vocab);
  if (config_.variant == Variant::kXmod) {
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      layers_[i].modules.emplace(
          lang, make_bottleneck(i, layer_prefix(i) + "module." + lang + ".",
                                ParameterRole::module(lang), &root));
    }
  }
}

template <typename T>
void BasicXmodModel<T>::add_adapter(const std::string& lang, std::uint64_t seed) {
  if (config_.variant != Variant::kSharedNm) {
    throw ConfigError("post-hoc adapters require the shared_nm variant, model is " +
                      to_string(config_.variant));
  }
  if (!has_language(lang)) throw RegistryError("unknown language '" + lang + "'");
  if (has_adapter(lang)) throw RegistryError("adapter for '" + lang + "' already exists");
  Rng root = Rng(seed).split("add_adapter").split(lang);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i].adapters.emplace(
        lang, make_bottleneck(i, layer_prefix(i) + "adapter." + lang + ".",
                              ParameterRole::post_hoc_adapter(lang), &root));
  }
}

template <typename T>
bool BasicXmodModel<T>::has_adapter(const std::string& lang) const {
  return !layers_.empty() && layers_.front().adapters.count(lang) > 0;
}

template <typename T>
void BasicXmodModel<T>::attach_head(HeadKind kind, std::size_t n_out, std::uint64_t seed) {
  if (n_out == 0) throw ConfigError("task head needs at least one output");
  head_.reset();
  TaskHead<T>& h = ensure_head(kind, n_out);
  Rng root = Rng(seed).split("head");
  init_normal(h.w, &root);
}


template <typename T>
std::vector<Param<T>*> BasicXmodModel<T>::parameters() {
  std::vector<Param<T>*> out;
  for (auto& [id, v] : vocabs_) {
    out.push_back(&v.tokens);
    out.push_back(&v.positions);
    out.push_back(&v.out_bias);
  }
  out.push_back(&emb_ln_g_);
  out.push_back(&emb_ln_b_);
  for (auto& l : layers_) {
    for (auto* p : {&l.q_w, &l.q_b, &l.k_w, &l.k_b, &l.v_w, &l.v_b, &l.o_w, &l.o_b,
                    &l.ln_att_g, &l.ln_att_b, &l.ff1_w, &l.ff1_b, &l.ff2_w, &l.ff2_b,
                    &l.ln_ff_g, &l.ln_ff_b})
      out.push_back(p);
    for (auto& [k, mod] : l.modules)
      for (auto* p : {&mod.down_w, &mod.down_b, &mod.up_w, &mod.up_b}) out.push_back(p);
    for (auto& [k, mod] : l.adapters)
      for (auto* p : {&mod.down_w, &mod.down_b, &mod.up_w, &mod.up_b}) out.push_back(p);
  }
  if (head_) {
    out.push_back(&head_->w);
    out.push_back(&head_->b);
  }
  return out;
}

template <typename T>
std::vector<const Param<T>*> BasicXmodModel<T>::parameters() const {
  auto mut = const_cast<BasicXmodModel<T>*>(this)->parameters();
  return std::vector<const Param<T>*>(mut.begin(), mut.end());
}

template <typename T>
template <typename U>
BasicXmodModel<U> BasicXmodModel<T>::cast() const {
  BasicXmodModel<U> out(config_);
  auto conv = [](const Param<T>& p) {
    return Param<U>{p.name, p.role, p.value.template cast<U>()};
  };
  for (const auto& [id, v] : vocabs_) {
    out.vocabs_.emplace(id, VocabTables<U>{conv(v.tokens), conv(v.positions), conv(v.out_bias)});
  }
  out.emb_ln_g_ = conv(emb_ln_g_);
  out.emb_ln_b_ = conv(emb_ln_b_);
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto& s = layers_[i];
    auto& d = out.layers_[i];
    d.q_w = conv(s.q_w); d.q_b = conv(s.q_b);
    d.k_w = conv(s.k_w); d.k_b = conv(s.k_b);
    d.v_w = conv(s.v_w); d.v_b = conv(s.v_b);
    d.o_w = conv(s.o_w); d.o_b = conv(s.o_b);
    d.ln_att_g = conv(s.ln_att_g); d.ln_att_b = conv(s.ln_att_b);
    d.ff1_w = conv(s.ff1_w); d.ff1_b = conv(s.ff1_b);
    d.ff2_w = conv(s.ff2_w); d.ff2_b = conv(s.ff2_b);
    d.ln_ff_g = conv(s.ln_ff_g); d.ln_ff_b = conv(s.ln_ff_b);
    for (const auto& [k, m] : s.modules)
      d.modules.emplace(k, Bottleneck<U>{conv(m.down_w), conv(m.down_b), conv(m.up_w), conv(m.up_b)});
    for (const auto& [k, m] : s.adapters)
      d.adapters.emplace(k, Bottleneck<U>{conv(m.down_w), conv(m.down_b), conv(m.up_w), conv(m.up_b)});
  }
  if (head_) out.head_ = TaskHead<U>{head_->kind, head_->n_out, conv(head_->w), conv(head_->b)};
  out.languages_ = languages_;
  return out;
}

// ---------------------------------------------------------------------------
// Routing and binding.

template <typename T>
std::string ModelView<T>::resolve(const std::string& lang) const {
  auto it = routing.find(lang);
  return it == routing.end() ? lang : it->second;
}

template <typename T>
ModelView<T> swap_language(ModelView<T> view, const std::string& from, const std::string& to) {
  for (const auto* l : {&from, &to}) {
    if (!view.model->has_language(*l)) throw RegistryError("unknown language '" + *l + "'");
  }
  if (from == to) {
    view.routing.erase(from);
  } else {
    view.routing[from] = to;
  }
  return view;
}

TokenBatch make_token_batch(std::span<const std::vector<int>> sequences,
                            std::span<const std::string> langs) {
  if (sequences.size() != langs.size()) {
    throw DimensionError("batch has " + std::to_string(sequences.size()) +
                         " sequences but " + std::to_string(langs.size()) + " languages");
  }
  if (sequences.empty()) throw DimensionError("empty batch");
  TokenBatch b;
  b.batch = sequences.size();
  for (const auto& s : sequences) b.seq_len = std::max(b.seq_len, s.size());
  if (b.seq_len == 0) throw DimensionError("batch of empty sequences");
  b.ids.assign(b.batch * b.seq_len, kPadId);
  b.valid.assign(b.batch * b.seq_len, 0);
  for (std::size_t r = 0; r < b.batch; ++r) {
    std::copy(sequences[r].begin(), sequences[r].end(), b.ids.begin() + r * b.seq_len);
    std::fill_n(b.valid.begin() + r * b.seq_len, sequences[r].size(), 1);
  }
  b.langs.assign(langs.begin(), langs.end());
  return b;
}

template <typename T>
ParamBinder<T>::ParamBinder(ComputationRecord<T>& record, BasicXmodModel<T>& model,
                            RoleFilter trainable)
    : record_(&record) {
  for (Param<T>* p : model.parameters()) {
    if (trainable(p->role)) mutable_.emplace(p, p);
  }
}

template <typename T>
Var<T> ParamBinder<T>::operator()(const Param<T>& p) {
  auto it = cache_.find(&p);
  if (it != cache_.end()) return it->second;
  auto mit = mutable_.find(&p);
  std::vector<T>* sink = mit == mutable_.end() ? nullptr : &mit->second->value.grad_storage();
  Var<T> v = record_->parameter(p.value, sink);
  cache_.emplace(&p, v);
  return v;
}

// ---------------------------------------------------------------------------
// Forward passes.

namespace {

template <typename T>
Var<T> bottleneck_forward(const Bottleneck<T>& m, ParamBinder<T>& bind, Var<T> z) {
  Var<T> h = gelu(linear(z, bind(m.down_w), bind(m.down_b)));
  return linear(h, bind(m.up_w), bind(m.up_b));
}

template <typename T>
Var<T> maybe_dropout(Var<T> x, const ForwardOptions& opts, double rate) {
  if (!opts.train || rate <= 0.0) return x;
  if (!opts.dropout_rng) throw ConfigError("training forward needs a dropout rng");
  return dropout(x, rate, *opts.dropout_rng);
}

struct Routing {
  std::vector<int> row_vocab;              // per batch row
  std::map<int, std::vector<std::size_t>> vocab_rows;  // vocab -> batch rows
  RowGroups module_rows;                   // module key -> flattened rows
};

template <typename T>
Routing route_batch(const ModelView<T>& view, const TokenBatch& batch) {
  const BasicXmodModel<T>& model = *view.model;
  const ModelConfig& cfg = model.config();
  if (batch.langs.size() != batch.batch || batch.ids.size() != batch.batch * batch.seq_len ||
      batch.valid.size() != batch.ids.size()) {
    throw DimensionError("inconsistent token batch");
  }
  if (batch.seq_len > cfg.max_seq_len) {
    throw DimensionError("sequence length " + std::to_string(batch.seq_len) +
                         " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
  }
  Routing r;
  r.row_vocab.resize(batch.batch);
  const bool has_modules = !model.layers().empty();
  for (std::size_t b = 0; b < batch.batch; ++b) {
    const std::string lang = view.resolve(batch.langs[b]);
    const int vocab = model.vocab_of(lang);
    r.row_vocab[b] = vocab;
    r.vocab_rows[vocab].push_back(b);
    std::string key;
    switch (cfg.variant) {
      case Variant::kXmod:
        if (has_modules && !model.layers().front().modules.count(lang)) {
          throw RegistryError("no module registered for language '" + lang + "'");
        }
        key = lang;
        break;
      case Variant::kShared: key = kSharedModuleKey; break;
      case Variant::kSharedNm:
        if (model.has_adapter(lang)) key = lang;
        break;
    }
    if (key.empty()) continue;
    auto& rows = r.module_rows[key];
    for (std::size_t t = 0; t < batch.seq_len; ++t) rows.push_back(b * batch.seq_len + t);
  }
  return r;
}

template <typename T>
Var<T> encode_routed(const ModelView<T>& view, ParamBinder<T>& bind, const TokenBatch& batch,
                     const Routing& routing, const ForwardOptions& opts) {
  const BasicXmodModel<T>& model = *view.model;
  const ModelConfig& cfg = model.config();
  const std::size_t T_ = batch.seq_len, d = cfg.d_model;
  ComputationRecord<T>& rec = bind.record();
  Var<T> x = rec.constant(BasicTensor<T>(Shape{batch.batch * T_, d}));
  for (const auto& [vocab, rows] : routing.vocab_rows) {
    const VocabTables<T>& tables = model.vocab_tables(vocab);
    std::vector<int> ids, pos;
    std::vector<std::size_t> flat;
    ids.reserve(rows.size() * T_);
    for (std::size_t b : rows) {
      for (std::size_t t = 0; t < T_; ++t) {
        ids.push_back(batch.ids[b * T_ + t]);
        pos.push_back(static_cast<int>(t));
        flat.push_back(b * T_ + t);
      }
    }
    Var<T> e = add(embedding_lookup(bind(tables.tokens), std::span<const int>(ids)),
                   embedding_lookup(bind(tables.positions), std::span<const int>(pos)));
    x = index_add_rows(x, e, std::span<const std::size_t>(flat));
  }
  x = layer_norm(x, bind(model.emb_ln_gamma()), bind(model.emb_ln_beta()), cfg.layernorm_eps);
  x = maybe_dropout(x, opts, cfg.dropout);
  const AttentionShape shape{batch.batch, T_, cfg.n_heads};
  const bool adapters = cfg.variant == Variant::kSharedNm;
  for (const auto& layer : model.layers()) {
    x = layer_forward(layer, cfg, bind, x, shape, std::span<const std::uint8_t>(batch.valid),
                      routing.module_rows, adapters, opts);
  }
  return x;
}

}  // namespace

template <typename T>
Var<T> layer_forward(const XmodLayer<T>& layer, const ModelConfig& config, ParamBinder<T>& bind,
                     Var<T> x, AttentionShape shape, std::span<const std::uint8_t> key_valid,
                     const RowGroups& module_rows, bool use_adapters,
                     const ForwardOptions& opts) {
  const double eps = config.layernorm_eps;
  Var<T> q = linear(x, bind(layer.q_w), bind(layer.q_b));
  Var<T> k = linear(x, bind(layer.k_w), bind(layer.k_b));
  Var<T> v = linear(x, bind(layer.v_w), bind(layer.v_b));
  Var<T> att = linear(attention(q, k, v, shape, key_valid), bind(layer.o_w), bind(layer.o_b));
  att = maybe_dropout(att, opts, config.dropout);
  Var<T> a = layer_norm(add(x, att), bind(layer.ln_att_g), bind(layer.ln_att_b), eps);
  Var<T> ff = linear(gelu(linear(a, bind(layer.ff1_w), bind(layer.ff1_b))), bind(layer.ff2_w),
                     bind(layer.ff2_b));
  ff = maybe_dropout(ff, opts, config.dropout);
  Var<T> f = layer_norm(add(a, ff), bind(layer.ln_ff_g), bind(layer.ln_ff_b), eps);
  Var<T> out = f;
  const auto& registry = use_adapters ? layer.adapters : layer.modules;
  for (const auto& [key, rows] : module_rows) {
    auto it = registry.find(key);
    if (it == registry.end()) throw RegistryError("no module registered for '" + key + "'");
    const std::span<const std::size_t> idx(rows);
    Var<T> z = layer_norm(gather_rows(f, idx), bind(layer.ln_ff_g), bind(layer.ln_ff_b), eps);
    out = index_add_rows(out, bottleneck_forward(it->second, bind, z), idx);
  }
  return out;
}

template <typename T>
Var<T> layer_forward(const BasicXmodModel<T>& model, std::size_t layer_index,
                     ParamBinder<T>& bind, Var<T> x, const std::string& lang,
                     std::span<const std::uint8_t> pad_mask) {
  const ModelConfig& cfg = model.config();
  const std::size_t T_ = x.value().rows();
  if (pad_mask.size() != T_) throw DimensionError("pad mask length does not match input rows");
  RowGroups groups;
  std::string key;
  if (cfg.variant == Variant::kXmod) {
    if (!model.has_language(lang)) throw RegistryError("unknown language '" + lang + "'");
    key = lang;
  } else if (cfg.variant == Variant::kShared) {
    key = kSharedModuleKey;
  } else if (model.has_adapter(lang)) {
    key = lang;
  }
  if (!key.empty()) {
    auto& rows = groups[key];
    for (std::size_t t = 0; t < T_; ++t) rows.push_back(t);
  }
  return layer_forward(model.layers().at(layer_index), cfg, bind, x, AttentionShape{1, T_, cfg.n_heads},
                       pad_mask, groups, cfg.variant == Variant::kSharedNm, ForwardOptions{});
}

template <typename T>
Var<T> encode(const ModelView<T>& view, ParamBinder<T>& bind, const TokenBatch& batch,
              const ForwardOptions& opts) {
  return encode_routed(view, bind, batch, route_batch(view, batch), opts);
}

template <typename T>
std::vector<BasicTensor<T>> forward_mlm_batch(const ModelView<T>& view, const TokenBatch& batch) {
  ComputationRecord<T> rec;
  ParamBinder<T> bind(rec);
  const Routing routing = route_batch(view, batch);
  Var<T> h = encode_routed(view, bind, batch, routing, ForwardOptions{});
  std::vector<BasicTensor<T>> out;
  for (std::size_t b = 0; b < batch.batch; ++b) {
    std::vector<std::size_t> rows;
    for (std::size_t t = 0; t < batch.seq_len; ++t)
      if (batch.valid[b * batch.seq_len + t]) rows.push_back(b * batch.seq_len + t);
    const VocabTables<T>& tables = view.model->vocab_tables(routing.row_vocab[b]);
    Var<T> hb = gather_rows(h, std::span<const std::size_t>(rows));
    Var<T> logits = add_bias(matmul_transposed(hb, bind(tables.tokens)), bind(tables.out_bias));
    out.push_back(logits.value());
  }
  return out;
}

template <typename T>
BasicTensor<T> forward_mlm(const ModelView<T>& view, std::span<const int> ids,
                           const std::string& lang) {
  std::vector<std::vector<int>> seqs{std::vector<int>(ids.begin(), ids.end())};
  std::vector<std::string> langs{lang};
  return forward_mlm_batch(view, make_token_batch(seqs, langs)).front();
}

template <typename T>
Var<T> task_logits(const ModelView<T>& view, ParamBinder<T>& bind, const TokenBatch& batch,
                   const ForwardOptions& opts) {
  const auto& head = view.model->head();
  if (!head) throw RegistryError("no task head attached");
  Var<T> h = encode(view, bind, batch, opts);
  if (head->kind == HeadKind::kSeqCls) {
    std::vector<std::size_t> first(batch.batch);
    for (std::size_t b = 0; b < batch.batch; ++b) first[b] = b * batch.seq_len;
    h = gather_rows(h, std::span<const std::size_t>(first));
  }
  return linear(h, bind(head->w), bind(head->b));
}

template <typename T>
BasicTensor<T> forward_task(const ModelView<T>& view, std::span<const int> ids,
                            const std::string& lang, HeadKind kind) {
  const auto& head = view.model->head();
  if (!head) throw RegistryError("no task head attached");
  if (head->kind != kind) {
    throw RegistryError("attached head is " + to_string(head->kind) + ", requested " +
                        to_string(kind));
  }
  std::vector<std::vector<int>> seqs{std::vector<int>(ids.begin(), ids.end())};
  std::vector<std::string> langs{lang};
  ComputationRecord<T> rec;
  ParamBinder<T> bind(rec);
  BasicTensor<T> out = task_logits(view, bind, make_token_batch(seqs, langs), ForwardOptions{}).value();
  if (kind == HeadKind::kSeqCls) out.reshape(Shape{head->n_out});
  return out;
}

template <typename T>
Var<T> mlm_loss(const ModelView<T>& view, ParamBinder<T>& bind, const TokenBatch& batch,
                std::span<const int> labels, const ForwardOptions& opts, LossStats* stats) {
  if (labels.size() != batch.ids.size()) {
    throw DimensionError("mlm labels have " + std::to_string(labels.size()) +
                         " entries, batch has " + std::to_string(batch.ids.size()));
  }
  const Routing routing = route_batch(view, batch);
  ComputationRecord<T>& rec = bind.record();
  std::size_t count = 0;
  for (int l : labels) count += l != kIgnoreIndex;
  if (stats) stats->targets = count;
  if (count == 0) return rec.constant(BasicTensor<T>::scalar(T(0)));
  Var<T> h = encode_routed(view, bind, batch, routing, opts);
  std::optional<Var<T>> total;
  for (const auto& [vocab, rows] : routing.vocab_rows) {
    std::vector<std::size_t> picked;
    std::vector<int> targets;
    for (std::size_t b : rows) {
      for (std::size_t t = 0; t < batch.seq_len; ++t) {
        const std::size_t i = b * batch.seq_len + t;
        if (labels[i] == kIgnoreIndex) continue;
        picked.push_back(i);
        targets.push_back(labels[i]);
      }
    }
    if (picked.empty()) continue;
    const VocabTables<T>& tables = view.model->vocab_tables(vocab);
    Var<T> hv = gather_rows(h, std::span<const std::size_t>(picked));
    Var<T> logits = add_bias(matmul_transposed(hv, bind(tables.tokens)), bind(tables.out_bias));
    Var<T> part = cross_entropy(logits, std::span<const int>(targets), Reduction::kSum);
    total = total ? add(*total, part) : part;
  }
  return scale(*total, T(1) / static_cast<T>(count));
}

template <typename T>
Var<T> task_loss(const ModelView<T>& view, ParamBinder<T>& bind, const TokenBatch& batch,
                 std::span<const int> labels, const ForwardOptions& opts) {
  Var<T> logits = task_logits(view, bind, batch, opts);
  return cross_entropy(logits, labels, Reduction::kMean);
}

// ---------------------------------------------------------------------------
// Accounting.

template <typename T>
std::size_t count_params(const BasicXmodModel<T>& model, const RoleFilter& filter) {
  std::size_t n = 0;
  for (const Param<T>* p : model.parameters())
    if (filter(p->role)) n += p->value.numel();
  return n;
}

std::size_t count_params(const ModelConfig& config, std::span<const std::string> languages,
                         const RoleFilter& filter) {
  config.validate();
  const std::size_t d = config.d_model, V = config.vocab_size, b = config.d_bottleneck;
  std::size_t n = 0;
  auto take = [&](const ParameterRole& role, std::size_t count) {
    if (filter(role)) n += count;
  };
  take(ParameterRole::token_embedding(0), V * d + V);
  take(ParameterRole::positional_embedding(0), config.max_seq_len * d);
  take(ParameterRole::shared_body(), 2 * d);
  const std::size_t per_layer_body = 4 * (d * d + d) + 4 * d + (d * config.d_ff + config.d_ff) +
                                     (config.d_ff * d + d);
  const std::size_t per_module = d * b + b + b * d + d;
  take(ParameterRole::shared_body(), config.n_layers * per_layer_body);
  if (config.variant == Variant::kXmod) {
    for (const auto& lang : languages) take(ParameterRole::module(lang), config.n_layers * per_module);
  } else if (config.variant == Variant::kShared) {
    take(ParameterRole::module(kSharedModuleKey), config.n_layers * per_module);
  }
  return n;
}

std::uint64_t count_flops(const ModelConfig& config, std::size_t seq_len) {
  const std::uint64_t T_ = seq_len, d = config.d_model, ff = config.d_ff,
                      b = config.d_bottleneck, V = config.vocab_size;
  std::uint64_t per_layer = 4 * (2 * T_ * d * d)  // q, k, v, o projections
                            + 2 * (2 * T_ * T_ * d)  // scores and weighted values
                            + 2 * (2 * T_ * d * ff);  // feed-forward
  if (config.variant != Variant::kSharedNm) per_layer += 2 * (2 * T_ * d * b);
  return config.n_layers * per_layer + 2 * T_ * d * V;
}

template <typename T>
std::uint64_t parameter_hash(const BasicXmodModel<T>& model, const RoleFilter& filter) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto feed = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const Param<T>* p : model.parameters()) {
    if (!filter(p->role)) continue;
    feed(p->name.data(), p->name.size());
    feed(p->value.data().data(), p->value.numel() * sizeof(T));
  }
  return h;
}

// ---------------------------------------------------------------------------

#define XMODLAB_INSTANTIATE_MODEL(T)                                                        \
  template class BasicXmodModel<T>;                                                          \
  template struct ModelView<T>;                                                              \
  template class ParamBinder<T>;                                                             \
  template ModelView<T> swap_language<T>(ModelView<T>, const std::string&, const std::string&); \
  template Var<T> layer_forward<T>(const XmodLayer<T>&, const ModelConfig&, ParamBinder<T>&,  \
                                   Var<T>, AttentionShape, std::span<const std::uint8_t>,     \
                                   const RowGroups&, bool, const ForwardOptions&);            \
  template Var<T> layer_forward<T>(const BasicXmodModel<T>&, std::size_t, ParamBinder<T>&,    \
                                   Var<T>, const std::string&, std::span<const std::uint8_t>); \
  template Var<T> encode<T>(const ModelView<T>&, ParamBinder<T>&, const TokenBatch&,         \
                            const ForwardOptions&);                                          \
  template BasicTensor<T> forward_mlm<T>(const ModelView<T>&, std::span<const int>,          \
                                         const std::string&);                                \
  template std::vector<BasicTensor<T>> forward_mlm_batch<T>(const ModelView<T>&,             \
                                                            const TokenBatch&);              \
  template BasicTensor<T> forward_task<T>(const ModelView<T>&, std::span<const int>,         \
                                          const std::string&, HeadKind);                     \
  template Var<T> task_logits<T>(const ModelView<T>&, ParamBinder<T>&, const TokenBatch&,    \
                                 const ForwardOptions&);                                     \
  template Var<T> mlm_loss<T>(const ModelView<T>&, ParamBinder<T>&, const TokenBatch&,       \
                              std::span<const int>, const ForwardOptions&, LossStats*);      \
  template Var<T> task_loss<T>(const ModelView<T>&, ParamBinder<T>&, const TokenBatch&,      \
                               std::span<const int>, const ForwardOptions&);                 \
  template std::size_t count_params<T>(const BasicXmodModel<T>&, const RoleFilter&);         \
  template std::uint64_t parameter_hash<T>(const BasicXmodModel<T>&, const RoleFilter&);

XMODLAB_INSTANTIATE_MODEL(float)
XMODLAB_INSTANTIATE_MODEL(double)

template BasicXmodModel<double> BasicXmodModel<float>::cast<double>() const;
template BasicXmodModel<float> BasicXmodModel<double>::cast<float>() const;

#undef XMODLAB_INSTANTIATE_MODEL

}  // namespace xmodlab
