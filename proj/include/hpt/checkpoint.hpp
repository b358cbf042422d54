// Copyright (c) 2026, The HPT Lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"

#include "hpt/moco.hpp"

namespace hpt {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Full engine state plus free-form metadata (stage history, rng state,
/// seed, config hash, flags).
struct Checkpoint {
  MoCoState state;
  nlohmann::ordered_json metadata = nlohmann::ordered_json::object();
};

/// Binary layout:
///   "HPTCKPT1" | u32 version | u64 tensor count |
///   per tensor: u32 name length, name bytes, u8 dtype (1 = f64), u32 ndim,
///               u64 dims..., raw little-endian data |
///   u64 metadata length | metadata JSON (UTF-8).
std::vector<std::uint8_t> serialize(const Checkpoint& c);
Checkpoint deserialize(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path);
/// Throws MissingFileError, or CheckpointError on a bad magic, version or layout.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// FNV-1a digest of the serialized bytes.
std::uint64_t checkpoint_hash(const Checkpoint& c);
std::string hex64(std::uint64_t v);

/// Rejects a checkpoint whose encoder differs from cfg (names or shapes).
void check_compatible(const Checkpoint& c, const EncoderConfig& cfg);

nlohmann::ordered_json to_json(const EncoderConfig& c);
nlohmann::ordered_json to_json(const MoCoConfig& c);
EncoderConfig encoder_config_from_json(const nlohmann::json& j);
MoCoConfig moco_config_from_json(const nlohmann::json& j);

}  // namespace hpt
