// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

#include "irene/model.hpp"
#include "irene/renderer.hpp"

namespace irene {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Edit state carried by a session container.
struct EditDelta {
  EditOverlay overlay;
  std::vector<std::uint8_t> freeze_mask;  // 64 entries, 1 = view-dependent (frozen)
  Tensor2<float> profile;                 // 64×Q angular profile, empty when not profiled
};

/// On-disk layout (little-endian):
///   "IRNE" | u32 version | u64 manifest length | manifest JSON | payload | SHA-256(manifest ‖ payload)
/// The manifest indexes every tensor (name, dtype, shape, offset, nbytes) and
/// holds the config snapshot.
struct Checkpoint {
  FieldModel<float> model;
  nlohmann::json config = nlohmann::json::object();
  std::optional<EditDelta> edit;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck);
/// Throws FormatError on a bad magic, version, manifest, tensor list or hash.
Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Hex SHA-256 stored in the trailer (the container's content hash). Does not verify.
std::string container_hash(std::span<const std::uint8_t> bytes);
/// Tensor names the container always holds.
std::vector<std::string> required_tensor_names();

nlohmann::json model_config_to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace irene
