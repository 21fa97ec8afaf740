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

#include "xmodlab/checkpoint.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "xmodlab/error.hpp"

namespace xmodlab {

using nlohmann::json;

std::filesystem::path manifest_path(const std::filesystem::path& prefix) {
  return prefix.string() + ".manifest.json";
}

std::filesystem::path blob_path(const std::filesystem::path& prefix) {
  return prefix.string() + ".params.bin";
}

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

std::uint32_t crc_of(const char* data, std::size_t n) {
  return static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(data), static_cast<uInt>(n)));
}

void put_f32_le(std::string& out, float v) {
  const auto u = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((u >> (8 * i)) & 0xffu));
}

float get_f32_le(const char* p) {
  std::uint32_t u = 0;
  for (int i = 0; i < 4; ++i) u |= static_cast<std::uint32_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<float>(u);
}

json role_json(const ParameterRole& r) {
  json j{{"kind", to_string(r.kind)}};
  j["lang"] = r.lang.empty() ? json(nullptr) : json(r.lang);
  j["vocab"] = r.vocab < 0 ? json(nullptr) : json(r.vocab);
  return j;
}

ParameterRole role_from_json(const json& j) {
  ParameterRole r;
  r.kind = parse_role_kind(j.at("kind").get<std::string>());
  if (!j.at("lang").is_null()) r.lang = j.at("lang").get<std::string>();
  if (!j.at("vocab").is_null()) r.vocab = j.at("vocab").get<int>();
  return r;
}

json config_json(const ModelConfig& c) {
  return json{{"variant", to_string(c.variant)},
              {"n_layers", c.n_layers},
              {"d_model", c.d_model},
              {"n_heads", c.n_heads},
              {"d_ff", c.d_ff},
              {"d_bottleneck", c.d_bottleneck},
              {"vocab_size", c.vocab_size},
              {"max_seq_len", c.max_seq_len},
              {"dropout", c.dropout},
              {"layernorm_eps", c.layernorm_eps},
              {"ff_activation", c.ff_activation},
              {"module_activation", c.module_activation}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig c;
  c.variant = parse_variant(j.at("variant").get<std::string>());
  c.n_layers = j.at("n_layers").get<std::size_t>();
  c.d_model = j.at("d_model").get<std::size_t>();
  c.n_heads = j.at("n_heads").get<std::size_t>();
  c.d_ff = j.at("d_ff").get<std::size_t>();
  c.d_bottleneck = j.at("d_bottleneck").get<std::size_t>();
  c.vocab_size = j.at("vocab_size").get<std::size_t>();
  c.max_seq_len = j.at("max_seq_len").get<std::size_t>();
  c.dropout = j.at("dropout").get<double>();
  c.layernorm_eps = j.at("layernorm_eps").get<double>();
  c.ff_activation = j.at("ff_activation").get<std::string>();
  c.module_activation = j.at("module_activation").get<std::string>();
  c.validate();
  return c;
}

void write_atomic(const std::filesystem::path& path, const std::string& bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write " + tmp.string());
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    f.flush();
    if (!f) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot rename " + tmp.string() + " to " + path.string() + ": " + ec.message());
}

std::string read_all(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot read " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

}  // namespace

std::string config_to_json(const ModelConfig& c) { return config_json(c).dump(); }

CheckpointManifest save_checkpoint(const XmodModel& model, const std::filesystem::path& prefix,
                                   const RoleFilter& filter) {
  CheckpointManifest m;
  m.config = model.config();
  for (const auto& lang : model.languages()) m.languages[lang] = model.vocab_of(lang);
  for (int v : model.vocab_ids()) m.vocabs[v] = model.vocab_size(v);
  if (model.head()) m.head = std::make_pair(model.head()->kind, model.head()->n_out);
  std::string blob;
  for (const Param<float>* p : model.parameters()) {
    if (!filter(p->role)) continue;
    ManifestEntry e;
    e.name = p->name;
    e.role = p->role;
    e.shape = p->value.shape();
    e.offset = blob.size();
    for (float v : p->value.data()) {
      if (!std::isfinite(v)) throw NumericError("parameter '" + p->name + "' holds a non-finite value");
      put_f32_le(blob, v);
    }
    e.length = blob.size() - e.offset;
    e.crc32 = crc_of(blob.data() + e.offset, e.length);
    m.entries.push_back(std::move(e));
  }
  m.content_hash = hex64(fnv1a(blob));

  json j;
  j["format"] = m.format;
  j["config"] = config_json(m.config);
  j["languages"] = json::object();
  for (const auto& [l, v] : m.languages) j["languages"][l] = v;
  j["vocabs"] = json::object();
  for (const auto& [v, n] : m.vocabs) j["vocabs"][std::to_string(v)] = n;
  j["head"] = m.head ? json{{"kind", to_string(m.head->first)}, {"n_out", m.head->second}}
                     : json(nullptr);
  j["entries"] = json::array();
  for (const auto& e : m.entries) {
    j["entries"].push_back(json{{"name", e.name},
                                {"role", role_json(e.role)},
                                {"shape", e.shape},
                                {"dtype", "float32"},
                                {"offset", e.offset},
                                {"length", e.length},
                                {"crc32", e.crc32}});
  }
  j["content_hash"] = m.content_hash;
  // Blob first: a reader that sees the new manifest always finds its blob.
  write_atomic(blob_path(prefix), blob);
  write_atomic(manifest_path(prefix), j.dump(1) + "\n");
  return m;
}

LoadedPack load_pack(const std::filesystem::path& prefix, const RoleFilter& filter) {
  const auto mpath = manifest_path(prefix);
  LoadedPack pack;
  CheckpointManifest& m = pack.manifest;
  json j;
  try {
    j = json::parse(read_all(mpath));
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }
  try {
    m.format = j.at("format").get<std::string>();
    if (m.format != kCheckpointFormat) {
      throw IoError("checkpoint format '" + m.format + "' is not supported (expected '" +
                    std::string(kCheckpointFormat) + "')");
    }
    m.config = config_from_json(j.at("config"));
    for (const auto& [l, v] : j.at("languages").items()) m.languages[l] = v.get<int>();
    for (const auto& [k, v] : j.at("vocabs").items()) m.vocabs[std::stoi(k)] = v.get<std::size_t>();
    if (!j.at("head").is_null()) {
      m.head = std::make_pair(parse_head_kind(j["head"].at("kind").get<std::string>()),
                              j["head"].at("n_out").get<std::size_t>());
    }
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.name = je.at("name").get<std::string>();
      e.role = role_from_json(je.at("role"));
      e.shape = je.at("shape").get<Shape>();
      if (je.at("dtype").get<std::string>() != "float32") {
        throw IoError("entry '" + e.name + "' has unsupported dtype");
      }
      e.offset = je.at("offset").get<std::uint64_t>();
      e.length = je.at("length").get<std::uint64_t>();
      e.crc32 = je.at("crc32").get<std::uint32_t>();
      m.entries.push_back(std::move(e));
    }
    m.content_hash = j.at("content_hash").get<std::string>();
  } catch (const json::exception& e) {
    throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
  }

  const std::string blob = read_all(blob_path(prefix));
  std::uint64_t expect = 0;
  std::vector<std::string> names;
  for (const auto& e : m.entries) {
    if (e.offset != expect) {
      throw IoError("entry '" + e.name + "' is not contiguous (offset " + std::to_string(e.offset) +
                    ", expected " + std::to_string(expect) + ")");
    }
    if (e.length != shape_numel(e.shape) * 4) {
      throw IoError("entry '" + e.name + "' length does not match shape " + shape_string(e.shape));
    }
    expect += e.length;
    names.push_back(e.name);
  }
  if (expect != blob.size()) {
    throw IoError("blob holds " + std::to_string(blob.size()) + " bytes, manifest describes " +
                  std::to_string(expect));
  }
  std::sort(names.begin(), names.end());
  if (std::adjacent_find(names.begin(), names.end()) != names.end()) {
    throw IoError("manifest repeats an entry name");
  }
  for (const auto& e : m.entries) {
    const std::uint32_t crc = crc_of(blob.data() + e.offset, e.length);
    if (crc != e.crc32) {
      char buf[64];
      std::snprintf(buf, sizeof buf, "stored %08x, computed %08x", e.crc32, crc);
      throw ChecksumError(e.name, "checksum mismatch in entry '" + e.name + "' (" + buf + ")");
    }
  }
  if (hex64(fnv1a(blob)) != m.content_hash) throw IoError("blob content hash mismatch");

  std::vector<ManifestEntry> kept;
  for (const auto& e : m.entries) {
    if (!filter(e.role)) continue;
    Param<float> p{e.name, e.role, Tensor(e.shape)};
    auto data = p.value.data();
    for (std::size_t i = 0; i < data.size(); ++i) data[i] = get_f32_le(blob.data() + e.offset + 4 * i);
    pack.params.push_back(std::move(p));
    kept.push_back(e);
  }
  m.entries = std::move(kept);
  return pack;
}

std::vector<std::string> config_mismatches(const ModelConfig& have, const ModelConfig& pack) {
  std::vector<std::string> out;
  auto cmp = [&](const char* field, auto a, auto b) {
    if (a != b) {
      std::ostringstream ss;
      ss << field << ": model has " << a << ", pack has " << b;
      out.push_back(ss.str());
    }
  };
  cmp("variant", to_string(have.variant), to_string(pack.variant));
  cmp("n_layers", have.n_layers, pack.n_layers);
  cmp("d_model", have.d_model, pack.d_model);
  cmp("n_heads", have.n_heads, pack.n_heads);
  cmp("d_ff", have.d_ff, pack.d_ff);
  cmp("d_bottleneck", have.d_bottleneck, pack.d_bottleneck);
  cmp("vocab_size", have.vocab_size, pack.vocab_size);
  cmp("max_seq_len", have.max_seq_len, pack.max_seq_len);
  cmp("layernorm_eps", have.layernorm_eps, pack.layernorm_eps);
  cmp("ff_activation", have.ff_activation, pack.ff_activation);
  cmp("module_activation", have.module_activation, pack.module_activation);
  return out;
}

namespace {

std::vector<std::string> split_name(const std::string& name) {
  std::vector<std::string> parts;
  std::stringstream ss(name);
  for (std::string s; std::getline(ss, s, '.');) parts.push_back(s);
  return parts;
}

Param<float>& bottleneck_field(Bottleneck<float>& b, const std::string& which, const std::string& wb,
                               const std::string& name) {
  if (which == "down" && wb == "w") return b.down_w;
  if (which == "down" && wb == "b") return b.down_b;
  if (which == "up" && wb == "w") return b.up_w;
  if (which == "up" && wb == "b") return b.up_b;
  throw IoError("unknown bottleneck parameter '" + name + "'");
}

Param<float>& resolve(XmodModel& model, const CheckpointManifest& m, const std::string& name) {
  const auto parts = split_name(name);
  auto bad = [&]() -> Param<float>& { throw IoError("unknown parameter name '" + name + "'"); };
  if (parts.size() == 3 && parts[0] == "vocab") {
    const int v = std::stoi(parts[1]);
    auto it = m.vocabs.find(v);
    if (it == m.vocabs.end()) throw IoError("manifest lacks the size of vocabulary " + parts[1]);
    VocabTables<float>& t = model.ensure_vocab(v, it->second);
    if (t.tokens.value.dim(0) != it->second) {
      throw ConfigError("vocabulary " + parts[1] + ": model has " +
                        std::to_string(t.tokens.value.dim(0)) + " tokens, pack has " +
                        std::to_string(it->second));
    }
    if (parts[2] == "tokens") return t.tokens;
    if (parts[2] == "positions") return t.positions;
    if (parts[2] == "out_bias") return t.out_bias;
    return bad();
  }
  if (parts.size() == 2 && parts[0] == "head") {
    if (!m.head) throw IoError("manifest has head parameters but no head description");
    TaskHead<float>& h = model.ensure_head(m.head->first, m.head->second);
    if (parts[1] == "w") return h.w;
    if (parts[1] == "b") return h.b;
    return bad();
  }
  if (parts.size() == 6 && parts[0] == "layer" && (parts[2] == "module" || parts[2] == "adapter")) {
    const std::size_t layer = std::stoul(parts[1]);
    if (layer >= model.layers().size()) return bad();
    Bottleneck<float>& b = parts[2] == "module" ? model.ensure_module(layer, parts[3])
                                                : model.ensure_adapter(layer, parts[3]);
    return bottleneck_field(b, parts[4], parts[5], name);
  }
  for (Param<float>* p : model.parameters())
    if (p->name == name) return *p;
  return bad();
}

}  // namespace

void attach_pack(XmodModel& model, const LoadedPack& pack) {
  const auto diffs = config_mismatches(model.config(), pack.manifest.config);
  if (!diffs.empty()) {
    std::string msg = "incompatible pack:";
    for (const auto& d : diffs) msg += " " + d + ";";
    throw ConfigError(msg);
  }
  for (const auto& p : pack.params) {
    Param<float>* target = nullptr;
    try {
      target = &resolve(model, pack.manifest, p.name);
    } catch (const std::invalid_argument&) {
      throw IoError("unknown parameter name '" + p.name + "'");
    }
    if (!(target->role == p.role)) {
      throw ConfigError("parameter '" + p.name + "': model role " + to_string(target->role) +
                        ", pack role " + to_string(p.role));
    }
    if (target->value.shape() != p.value.shape()) {
      throw ConfigError("parameter '" + p.name + "': model shape " +
                        shape_string(target->value.shape()) + ", pack shape " +
                        shape_string(p.value.shape()));
    }
    target->value = p.value;
  }
  const auto present = model.vocab_ids();
  for (const auto& [lang, vocab] : pack.manifest.languages) {
    if (model.has_language(lang)) {
      if (model.vocab_of(lang) != vocab) {
        throw RegistryError("language '" + lang + "' uses vocabulary " +
                            std::to_string(model.vocab_of(lang)) + " in the model and " +
                            std::to_string(vocab) + " in the pack");
      }
      continue;
    }
    if (std::find(present.begin(), present.end(), vocab) != present.end()) {
      model.register_language(lang, vocab);
    }
  }
}

XmodModel load_checkpoint(const std::filesystem::path& prefix) {
  LoadedPack pack = load_pack(prefix);
  XmodModel model(pack.manifest.config);
  attach_pack(model, pack);
  const auto& ps = model.parameters();
  if (ps.size() != pack.params.size()) {
    throw IoError("checkpoint " + prefix.string() + " is a partial pack (" +
                  std::to_string(pack.params.size()) + " of " + std::to_string(ps.size()) +
                  " parameters); use load_pack and attach_pack");
  }
  return model;
}

}  // namespace xmodlab
