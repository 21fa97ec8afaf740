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

#ifndef XMODLAB_MODEL_HPP_
#define XMODLAB_MODEL_HPP_

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "xmodlab/autodiff.hpp"
#include "xmodlab/ops.hpp"
#include "xmodlab/rng.hpp"
#include "xmodlab/tensor.hpp"

namespace xmodlab {

enum class Variant { kXmod, kShared, kSharedNm };

std::string to_string(Variant v);
Variant parse_variant(const std::string& s);

// Every parameter carries exactly one role; freezing contracts are stated in
// terms of roles only.
enum class RoleKind {
  kSharedBody,
  kTokenEmbedding,
  kPositionalEmbedding,
  kModule,
  kTaskHead,
  kPostHocAdapter,
};

struct ParameterRole {
  RoleKind kind = RoleKind::kSharedBody;
  std::string lang;  // kModule / kPostHocAdapter
  int vocab = -1;    // kTokenEmbedding / kPositionalEmbedding

  static ParameterRole shared_body() { return {RoleKind::kSharedBody, {}, -1}; }
  static ParameterRole token_embedding(int vocab) {
    return {RoleKind::kTokenEmbedding, {}, vocab};
  }
  static ParameterRole positional_embedding(int vocab) {
    return {RoleKind::kPositionalEmbedding, {}, vocab};
  }
  static ParameterRole module(std::string lang) {
    return {RoleKind::kModule, std::move(lang), -1};
  }
  static ParameterRole task_head() { return {RoleKind::kTaskHead, {}, -1}; }
  static ParameterRole post_hoc_adapter(std::string lang) {
    return {RoleKind::kPostHocAdapter, std::move(lang), -1};
  }

  friend bool operator==(const ParameterRole&, const ParameterRole&) = default;
  friend auto operator<=>(const ParameterRole&, const ParameterRole&) = default;
};

std::string to_string(RoleKind k);
RoleKind parse_role_kind(const std::string& s);
std::string to_string(const ParameterRole& r);

using RoleFilter = std::function<bool(const ParameterRole&)>;

// Filter accepting exactly the given roles.
RoleFilter roles_in(std::vector<ParameterRole> roles);
RoleFilter role_kind_is(RoleKind kind);
inline RoleFilter all_roles() {
  return [](const ParameterRole&) { return true; };
}

struct ModelConfig {
  Variant variant = Variant::kXmod;
  std::size_t n_layers = 4;
  std::size_t d_model = 64;
  std::size_t n_heads = 4;
  std::size_t d_ff = 128;
  std::size_t d_bottleneck = 32;
  std::size_t vocab_size = 64;  // pre-training vocabulary
  std::size_t max_seq_len = 32;
  double dropout = 0.1;
  double layernorm_eps = 1e-5;
  std::string ff_activation = "gelu";
  std::string module_activation = "gelu";

  // Throws ConfigError naming the first violated invariant.
  void validate() const;
};

// The base-size configuration the accounting claims refer to (12 layers,
// width 768, bottleneck 384, 250,002 tokens, 514 positions).
ModelConfig base_size_config();

template <typename T>
struct Param {
  std::string name;
  ParameterRole role;
  BasicTensor<T> value;
};

// down: d_model -> d_bottleneck, up: d_bottleneck -> d_model.
template <typename T>
struct Bottleneck {
  Param<T> down_w, down_b, up_w, up_b;
};

template <typename T>
struct XmodLayer {
  Param<T> q_w, q_b, k_w, k_b, v_w, v_b, o_w, o_b;
  Param<T> ln_att_g, ln_att_b;
  Param<T> ff1_w, ff1_b, ff2_w, ff2_b;
  Param<T> ln_ff_g, ln_ff_b;
  std::map<std::string, Bottleneck<T>> modules;   // keyed by language id
  std::map<std::string, Bottleneck<T>> adapters;  // post-hoc, SHARED_NM only
};

// Token embeddings, positional embeddings and MLM output bias of one
// vocabulary. The MLM head is tied to `tokens`.
template <typename T>
struct VocabTables {
  Param<T> tokens;
  Param<T> positions;
  Param<T> out_bias;
};

enum class HeadKind { kSeqCls, kTokCls };

std::string to_string(HeadKind k);
HeadKind parse_head_kind(const std::string& s);

template <typename T>
struct TaskHead {
  HeadKind kind = HeadKind::kSeqCls;
  std::size_t n_out = 0;
  Param<T> w, b;
};

// Key of the single module used by every language in the SHARED variant.
inline constexpr const char* kSharedModuleKey = "*";

// New-vocabulary row initialised from an old-vocabulary row.
struct InitPair {
  int new_id;
  int old_id;
  friend bool operator==(const InitPair&, const InitPair&) = default;
};

template <typename T>
class BasicXmodModel {
 public:
  // Empty shell used by checkpoint loading.
  explicit BasicXmodModel(ModelConfig config);

  // Fresh model: vocabulary 0 of config.vocab_size tokens shared by all
  // `languages`; one module per language and layer for XMOD, a single shared
  // module for SHARED, none for SHARED_NM.
  BasicXmodModel(ModelConfig config, const std::vector<std::string>& languages,
                 std::uint64_t seed);

  const ModelConfig& config() const { return config_; }

  std::vector<std::string> languages() const;
  bool has_language(const std::string& lang) const;
  int vocab_of(const std::string& lang) const;
  std::size_t vocab_size(int vocab) const;
  std::vector<int> vocab_ids() const;

  // Post-hoc extension: new vocabulary (rows in `init_pairs` copied from
  // vocabulary 0, the rest random), positional table copied from vocabulary 0,
  // fresh modules for XMOD. Existing parameters are untouched.
  void add_language(const std::string& lang, std::size_t vocab_size,
                    std::span<const InitPair> init_pairs, std::uint64_t seed);

  // Post-hoc bottleneck adapter for a registered language (SHARED_NM only).
  void add_adapter(const std::string& lang, std::uint64_t seed);
  bool has_adapter(const std::string& lang) const;

  void attach_head(HeadKind kind, std::size_t n_out, std::uint64_t seed);
  void detach_head() { head_.reset(); }
  const std::optional<TaskHead<T>>& head() const { return head_; }

  // All parameters in a fixed order (embeddings, body, modules, head).
  std::vector<Param<T>*> parameters();
  std::vector<const Param<T>*> parameters() const;

  const VocabTables<T>& vocab_tables(int vocab) const;
  const std::vector<XmodLayer<T>>& layers() const { return layers_; }
  const Param<T>& emb_ln_gamma() const { return emb_ln_g_; }
  const Param<T>& emb_ln_beta() const { return emb_ln_b_; }

  // Structural mutation used by checkpoint loading and pack attachment.
  void register_language(const std::string& lang, int vocab);
  VocabTables<T>& ensure_vocab(int vocab, std::size_t size);
  Bottleneck<T>& ensure_module(std::size_t layer, const std::string& key);
  Bottleneck<T>& ensure_adapter(std::size_t layer, const std::string& key);
  TaskHead<T>& ensure_head(HeadKind kind, std::size_t n_out);
  std::vector<XmodLayer<T>>& mutable_layers() { return layers_; }

  template <typename U>
  BasicXmodModel<U> cast() const;

 private:
  template <typename U>
  friend class BasicXmodModel;

  Bottleneck<T> make_bottleneck(std::size_t layer, const std::string& prefix,
                                const ParameterRole& role, Rng* rng) const;
  VocabTables<T> make_vocab(int vocab, std::size_t size, Rng* rng) const;

  ModelConfig config_;
  std::map<int, VocabTables<T>> vocabs_;
  Param<T> emb_ln_g_, emb_ln_b_;
  std::vector<XmodLayer<T>> layers_;
  std::optional<TaskHead<T>> head_;
  std::map<std::string, int> languages_;
};

using XmodModel = BasicXmodModel<float>;

// Read-only routing view. Rows tagged with language `from` are routed
// through the modules and embeddings of routing[from].
template <typename T>
struct ModelView {
  const BasicXmodModel<T>* model = nullptr;
  std::map<std::string, std::string> routing;

  ModelView(const BasicXmodModel<T>& m) : model(&m) {}  // NOLINT
  std::string resolve(const std::string& lang) const;
};

// Routes `from` through `to`; no parameter is copied or modified.
template <typename T>
ModelView<T> swap_language(ModelView<T> view, const std::string& from,
                           const std::string& to);

// Padded batch of token sequences, row-major [batch x seq_len].
struct TokenBatch {
  std::size_t batch = 0;
  std::size_t seq_len = 0;
  std::vector<int> ids;
  std::vector<std::uint8_t> valid;
  std::vector<std::string> langs;
};

inline constexpr int kPadId = 0;

TokenBatch make_token_batch(std::span<const std::vector<int>> sequences,
                            std::span<const std::string> langs);

// Binds model parameters to leaves of a computation record. Without a model
// reference every parameter is a constant; otherwise parameters accepted by
// `trainable` accumulate their gradient into their tensor's grad buffer.
template <typename T>
class ParamBinder {
 public:
  explicit ParamBinder(ComputationRecord<T>& record) : record_(&record) {}
  ParamBinder(ComputationRecord<T>& record, BasicXmodModel<T>& model,
              RoleFilter trainable);

  Var<T> operator()(const Param<T>& p);
  ComputationRecord<T>& record() { return *record_; }

 private:
  ComputationRecord<T>* record_;
  std::unordered_map<const Param<T>*, Param<T>*> mutable_;
  std::unordered_map<const Param<T>*, Var<T>> cache_;
};

// Forward-pass options. Dropout is active only when `train` is set.
struct ForwardOptions {
  bool train = false;
  Rng* dropout_rng = nullptr;
};

// Row groups of a flattened [batch*seq_len] activation keyed by module key.
using RowGroups = std::map<std::string, std::vector<std::size_t>>;

// One transformer layer over a flattened batch:
//   a   = LN_att(x + Drop(MHA(x)))
//   f   = LN_ff(a + Drop(FF(a)))
//   out = f + Up(act(Down(LN_ff(f))))   for rows routed to a module
// The pre-module norm reuses LN_ff's parameters.
template <typename T>
Var<T> layer_forward(const XmodLayer<T>& layer, const ModelConfig& config,
                     ParamBinder<T>& bind, Var<T> x, AttentionShape shape,
                     std::span<const std::uint8_t> key_valid,
                     const RowGroups& module_rows, bool use_adapters,
                     const ForwardOptions& opts);

// Single-sequence convenience wrapper: routes every row through `lang`'s
// module according to the model variant.
template <typename T>
Var<T> layer_forward(const BasicXmodModel<T>& model, std::size_t layer_index,
                     ParamBinder<T>& bind, Var<T> x, const std::string& lang,
                     std::span<const std::uint8_t> pad_mask);

// Final hidden states [batch*seq_len x d_model].
template <typename T>
Var<T> encode(const ModelView<T>& view, ParamBinder<T>& bind,
              const TokenBatch& batch, const ForwardOptions& opts);

// Eval-mode MLM logits [T x V] for one sequence.
template <typename T>
BasicTensor<T> forward_mlm(const ModelView<T>& view, std::span<const int> ids,
                           const std::string& lang);

// Eval-mode MLM logits for each row of a (possibly mixed-language) batch,
// trimmed to the row's valid length.
template <typename T>
std::vector<BasicTensor<T>> forward_mlm_batch(const ModelView<T>& view,
                                              const TokenBatch& batch);

// Eval-mode task logits: [n_classes] for SEQ_CLS, [T x n_tags] for TOK_CLS.
template <typename T>
BasicTensor<T> forward_task(const ModelView<T>& view, std::span<const int> ids,
                            const std::string& lang, HeadKind kind);

// Task logits for a batch: [batch x n] for SEQ_CLS, [batch*seq_len x n] for
// TOK_CLS.
template <typename T>
Var<T> task_logits(const ModelView<T>& view, ParamBinder<T>& bind,
                   const TokenBatch& batch, const ForwardOptions& opts);

struct LossStats {
  std::size_t targets = 0;  // non-ignored positions
};

// Mean masked-token cross-entropy over a batch. `labels` is [batch*seq_len]
// with kIgnoreIndex at unmasked positions.
template <typename T>
Var<T> mlm_loss(const ModelView<T>& view, ParamBinder<T>& bind,
                const TokenBatch& batch, std::span<const int> labels,
                const ForwardOptions& opts, LossStats* stats = nullptr);

// Mean task cross-entropy. SEQ_CLS: one label per row; TOK_CLS: one label
// per position (kIgnoreIndex at padding).
template <typename T>
Var<T> task_loss(const ModelView<T>& view, ParamBinder<T>& bind,
                 const TokenBatch& batch, std::span<const int> labels,
                 const ForwardOptions& opts);

// Exact number of scalars whose role passes `filter`.
template <typename T>
std::size_t count_params(const BasicXmodModel<T>& model, const RoleFilter& filter);

// Same count computed from shapes alone, for a freshly constructed model
// (no added languages, adapters or head).
std::size_t count_params(const ModelConfig& config,
                         std::span<const std::string> languages,
                         const RoleFilter& filter);

// Floating-point operations (2 per multiply-accumulate) of the matrix
// products in one forward pass over one sequence, counting exactly one
// module per layer for XMOD and SHARED and none for SHARED_NM.
std::uint64_t count_flops(const ModelConfig& config, std::size_t seq_len);

// Order-sensitive FNV-1a hash over the bytes of every parameter passing
// `filter`; used to assert freezing contracts.
template <typename T>
std::uint64_t parameter_hash(const BasicXmodModel<T>& model, const RoleFilter& filter);

}  // namespace xmodlab

#endif  // XMODLAB_MODEL_HPP_
