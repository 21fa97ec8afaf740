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

#ifndef XMODLAB_CHECKPOINT_HPP_
#define XMODLAB_CHECKPOINT_HPP_

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "xmodlab/model.hpp"

namespace xmodlab {

inline constexpr const char* kCheckpointFormat = "xmodlab-v1";

// A checkpoint at `prefix` is the pair prefix.manifest.json + prefix.params.bin.
std::filesystem::path manifest_path(const std::filesystem::path& prefix);
std::filesystem::path blob_path(const std::filesystem::path& prefix);

struct ManifestEntry {
  std::string name;
  ParameterRole role;
  Shape shape;
  std::uint64_t offset = 0;  // bytes into the blob
  std::uint64_t length = 0;  // bytes
  std::uint32_t crc32 = 0;
};

struct CheckpointManifest {
  std::string format = kCheckpointFormat;
  ModelConfig config;
  std::map<std::string, int> languages;  // language -> vocabulary id
  std::map<int, std::size_t> vocabs;     // vocabulary id -> size
  std::optional<std::pair<HeadKind, std::size_t>> head;
  std::vector<ManifestEntry> entries;
  std::string content_hash;  // FNV-1a 64 of the blob, hex
};

// Writes the parameters passing `filter` (little-endian float32, manifest
// order) atomically. Rejects non-finite values naming the parameter.
CheckpointManifest save_checkpoint(const XmodModel& model, const std::filesystem::path& prefix,
                                   const RoleFilter& filter = all_roles());

// Reads and verifies a manifest and its blob: version, layout, per-entry
// CRC32 (ChecksumError names the entry) and the global hash.
struct LoadedPack {
  CheckpointManifest manifest;
  std::vector<Param<float>> params;
};
LoadedPack load_pack(const std::filesystem::path& prefix, const RoleFilter& filter = all_roles());

// Full model reconstruction from a checkpoint saved without a filter.
XmodModel load_checkpoint(const std::filesystem::path& prefix);

// Copies a pack's parameters into `model`, creating missing modules,
// adapters, vocabularies and languages. Config fields that decide shapes
// must agree; every mismatching field is reported with both values.
void attach_pack(XmodModel& model, const LoadedPack& pack);

// Field-by-field differences between two configs that make packs incompatible.
std::vector<std::string> config_mismatches(const ModelConfig& have, const ModelConfig& pack);

std::string config_to_json(const ModelConfig& c);

}  // namespace xmodlab

#endif  // XMODLAB_CHECKPOINT_HPP_
