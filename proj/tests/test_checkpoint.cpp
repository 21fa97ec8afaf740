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

#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <limits>
#include <sstream>

#include "support/toy_setup.hpp"
#include "xmodlab/checkpoint.hpp"
#include "xmodlab/error.hpp"

namespace xmodlab {
namespace {

using testing::mlm_batches;
using testing::ToyWorld;

std::filesystem::path scratch(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("xmodlab_ckpt_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

std::string bytes_of(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void put_bytes(const std::filesystem::path& p, const std::string& s) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

// Bitwise comparison of eval forwards over a mixed batch.
void expect_same_forwards(const XmodModel& a, const XmodModel& b,
                          const std::vector<std::vector<int>>& rows,
                          const std::vector<std::string>& langs) {
  auto x = forward_mlm_batch(ModelView<float>(a), make_token_batch(rows, langs));
  auto y = forward_mlm_batch(ModelView<float>(b), make_token_batch(rows, langs));
  ASSERT_EQ(x.size(), y.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    ASSERT_EQ(x[i].shape(), y[i].shape());
    EXPECT_EQ(std::memcmp(x[i].data().data(), y[i].data().data(), x[i].numel() * sizeof(float)), 0)
        << "row " << i;
  }
}

// A model exercising every structural feature of its variant.
XmodModel rich_model(const ToyWorld& w, Variant v) {
  XmodModel m(w.config(v), {"ta", "tb"}, 7);
  std::vector<InitPair> pairs;
  for (const auto& p : overlap_init_pairs(w.vocab, w.vocab))
    if (p.new_id + 3 < static_cast<int>(w.vocab.size())) pairs.push_back(p);
  m.add_language("tc", w.vocab.size() - 3, pairs, 8);
  if (v == Variant::kSharedNm) m.add_adapter("tb", 9);
  m.attach_head(HeadKind::kTokCls, 4, 10);
  Rng rng(3);
  for (auto* p : m.parameters())
    for (auto& x : p->value.data()) x += static_cast<float>(0.01 * rng.normal());
  return m;
}

std::vector<std::vector<int>> sample_rows(const ToyWorld& w) {
  std::vector<std::vector<int>> rows;
  for (std::size_t l = 0; l < 3; ++l)
    for (std::size_t i = 0; i < 3; ++i) {
      auto ids = w.vocab.encode(w.held[l][i].tokens);
      for (auto& id : ids) id = std::min<int>(id, static_cast<int>(w.vocab.size()) - 4);
      rows.push_back(ids);
    }
  return rows;
}

const std::vector<std::string> kRowLangs{"ta", "ta", "ta", "tb", "tb", "tb", "tc", "tc", "tc"};

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  ToyWorld w(3, 10, 1);
  for (Variant v : {Variant::kXmod, Variant::kShared, Variant::kSharedNm}) {
    auto dir = scratch("rt_" + to_string(v));
    XmodModel m = rich_model(w, v);
    auto man = save_checkpoint(m, dir / "a");
    XmodModel back = load_checkpoint(dir / "a");
    save_checkpoint(back, dir / "b");
    EXPECT_EQ(bytes_of(blob_path(dir / "a")), bytes_of(blob_path(dir / "b")));
    EXPECT_EQ(bytes_of(manifest_path(dir / "a")), bytes_of(manifest_path(dir / "b")));
    EXPECT_EQ(parameter_hash(back, all_roles()), parameter_hash(m, all_roles()));
    EXPECT_EQ(back.languages(), m.languages());
    ASSERT_TRUE(back.head().has_value());
    EXPECT_EQ(back.head()->kind, HeadKind::kTokCls);
    expect_same_forwards(m, back, sample_rows(w), kRowLangs);

    std::uint64_t total = 0, expect_offset = 0;
    for (const auto& e : man.entries) {
      EXPECT_EQ(e.offset, expect_offset);
      expect_offset += e.length;
      total += e.length;
    }
    EXPECT_EQ(total, std::filesystem::file_size(blob_path(dir / "a")));
    EXPECT_EQ(man.entries.size(), m.parameters().size());
  }
}

TEST(Checkpoint, ManifestIsJsonWithRoles) {
  ToyWorld w(3, 10, 1);
  auto dir = scratch("json");
  XmodModel m = rich_model(w, Variant::kXmod);
  save_checkpoint(m, dir / "m");
  auto j = nlohmann::json::parse(bytes_of(manifest_path(dir / "m")));
  EXPECT_EQ(j["format"], "xmodlab-v1");
  EXPECT_EQ(j["config"]["d_model"], m.config().d_model);
  bool saw_module = false;
  for (const auto& e : j["entries"]) {
    EXPECT_EQ(e["dtype"], "float32");
    if (e["role"]["kind"] == to_string(RoleKind::kModule)) {
      saw_module = true;
      EXPECT_TRUE(e["role"]["lang"].is_string());
      EXPECT_TRUE(e["role"]["vocab"].is_null());
    }
  }
  EXPECT_TRUE(saw_module);
}

TEST(Checkpoint, EveryCorruptedByteIsNamed) {
  ToyWorld w(3, 10, 1);
  auto dir = scratch("corrupt");
  XmodModel m = rich_model(w, Variant::kXmod);
  auto man = save_checkpoint(m, dir / "m");
  const std::string clean = bytes_of(blob_path(dir / "m"));
  Rng rng(5);
  for (int trial = 0; trial < 25; ++trial) {
    const std::size_t pos = rng.below(clean.size());
    std::string bad = clean;
    bad[pos] = static_cast<char>(bad[pos] ^ (1 << rng.below(8)));
    put_bytes(blob_path(dir / "m"), bad);
    std::string owner;
    for (const auto& e : man.entries)
      if (pos >= e.offset && pos < e.offset + e.length) owner = e.name;
    try {
      load_checkpoint(dir / "m");
      FAIL() << "corruption at byte " << pos << " went unnoticed";
    } catch (const ChecksumError& e) {
      EXPECT_NE(std::string(e.what()).find("'" + owner + "'"), std::string::npos)
          << e.what() << " vs " << owner;
    }
  }
  put_bytes(blob_path(dir / "m"), clean);
  EXPECT_NO_THROW(load_checkpoint(dir / "m"));
  put_bytes(blob_path(dir / "m"), clean.substr(0, clean.size() - 4));
  EXPECT_THROW(load_checkpoint(dir / "m"), IoError);
}

TEST(Checkpoint, VersionMismatchRejected) {
  ToyWorld w(2, 10, 1);
  auto dir = scratch("version");
  save_checkpoint(XmodModel(w.config(Variant::kXmod), w.langs(), 1), dir / "m");
  auto text = bytes_of(manifest_path(dir / "m"));
  text.replace(text.find("xmodlab-v1"), 10, "xmodlab-v9");
  put_bytes(manifest_path(dir / "m"), text);
  try {
    load_checkpoint(dir / "m");
    FAIL();
  } catch (const IoError& e) {
    EXPECT_NE(std::string(e.what()).find("xmodlab-v9"), std::string::npos);
  }
}

TEST(Checkpoint, NonFiniteValuesRejectedByName) {
  ToyWorld w(2, 10, 1);
  auto dir = scratch("nan");
  XmodModel m(w.config(Variant::kXmod), w.langs(), 1);
  m.mutable_layers()[1].ff2_b.value.data()[3] = std::numeric_limits<float>::infinity();
  try {
    save_checkpoint(m, dir / "m");
    FAIL();
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("layer.1.ff.2.b"), std::string::npos) << e.what();
  }
  EXPECT_FALSE(std::filesystem::exists(manifest_path(dir / "m")));
}

TEST(Checkpoint, PartialPackIsNotAFullModel) {
  ToyWorld w(2, 10, 1);
  auto dir = scratch("partial");
  XmodModel m(w.config(Variant::kXmod), w.langs(), 1);
  save_checkpoint(m, dir / "p", roles_in({ParameterRole::module("ta")}));
  EXPECT_THROW(load_checkpoint(dir / "p"), IoError);
  auto pack = load_pack(dir / "p");
  for (const auto& p : pack.params) EXPECT_EQ(p.role, ParameterRole::module("ta"));
  EXPECT_EQ(pack.params.size(), 4 * m.config().n_layers);
}

TEST(Checkpoint, ModulePackOnSameBodyKeepsForwards) {
  ToyWorld w(3, 10, 1);
  auto dir = scratch("samebody");
  XmodModel m = rich_model(w, Variant::kXmod);
  save_checkpoint(m, dir / "tb", roles_in({ParameterRole::module("tb")}));
  XmodModel other = m;
  attach_pack(other, load_pack(dir / "tb"));
  expect_same_forwards(m, other, sample_rows(w), kRowLangs);
}

// Body from run A plus a language pack trained in run B on the same frozen
// body reproduces run B's composite bitwise.
TEST(Checkpoint, ExtensionPackComposesAcrossProcesses) {
  ToyWorld w(3, 60, 2);
  auto dir = scratch("compose");
  XmodModel a(w.config(Variant::kXmod), {"ta", "tb"}, 4);
  auto sampler = w.sampler(8, 1);
  BatchFn pre = [&](std::uint64_t step) {
    auto b = sampler.batch(step);
    for (auto& l : b.tokens.langs)
      if (l == "tc") l = "tb";
    return TrainBatch{b.tokens, b.labels};
  };
  run_regime(a, pretrain_regime(a, {1e-3, 0.06, 4}), pre, 1);
  save_checkpoint(a, dir / "body");

  XmodModel b = load_checkpoint(dir / "body");
  b.add_language("tc", w.vocab.size(), overlap_init_pairs(w.vocab, w.vocab), 5);
  BatchFn ext = [&](std::uint64_t step) {
    auto batch = sampler.batch(step);
    for (auto& l : batch.tokens.langs) l = "tc";
    return TrainBatch{batch.tokens, batch.labels};
  };
  run_regime(b, extend_regime(b, {"tc"}, {1e-4, 0.06, 4}), ext, 2);
  const int v = b.vocab_of("tc");
  save_checkpoint(b, dir / "tc",
                  roles_in({ParameterRole::module("tc"), ParameterRole::token_embedding(v),
                            ParameterRole::positional_embedding(v)}));

  XmodModel composed = load_checkpoint(dir / "body");
  attach_pack(composed, load_pack(dir / "tc"));
  ASSERT_TRUE(composed.has_language("tc"));
  EXPECT_EQ(parameter_hash(composed, all_roles()), parameter_hash(b, all_roles()));
  expect_same_forwards(composed, b, sample_rows(w), kRowLangs);
}

TEST(Checkpoint, IncompatiblePackNamesBothValues) {
  ToyWorld w(2, 10, 1);
  auto dir = scratch("incompat");
  auto cfg = w.config(Variant::kXmod);
  XmodModel m(cfg, w.langs(), 1);
  save_checkpoint(m, dir / "m", roles_in({ParameterRole::module("ta")}));
  auto other_cfg = cfg;
  other_cfg.d_bottleneck = cfg.d_bottleneck * 2;
  other_cfg.n_layers = cfg.n_layers + 1;
  XmodModel other(other_cfg, w.langs(), 1);
  try {
    attach_pack(other, load_pack(dir / "m"));
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("d_bottleneck: model has " + std::to_string(other_cfg.d_bottleneck) +
                       ", pack has " + std::to_string(cfg.d_bottleneck)),
              std::string::npos)
        << msg;
    EXPECT_NE(msg.find("n_layers"), std::string::npos) << msg;
  }
  EXPECT_TRUE(config_mismatches(cfg, cfg).empty());
}

}  // namespace
}  // namespace xmodlab
