// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <mutex>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace irene {

/// 26-character Crockford base32 ULID (48-bit millisecond time + 80 random bits).
std::string make_ulid();

std::string base64_encode(std::span<const std::uint8_t> bytes);
/// Throws UsageError on malformed input.
std::vector<std::uint8_t> base64_decode(const std::string& text);

/// Data directory layout:
///   checkpoints/<sha256>.irne   content-addressed containers
///   sessions.jsonl              append-only journal, one full record per line
///   sessions/<id>/...           per-session blobs
class Storage {
 public:
  explicit Storage(std::filesystem::path root);

  const std::filesystem::path& root() const { return root_; }
  std::filesystem::path checkpoint_path(const std::string& id) const;
  std::filesystem::path session_dir(const std::string& id) const;

  bool has_checkpoint(const std::string& id) const;
  /// Writes the container under its hash; the caller verifies it first.
  void put_checkpoint(const std::string& id, std::span<const std::uint8_t> bytes);
  std::vector<std::string> checkpoint_ids() const;

  void append_session(const nlohmann::json& record);
  /// Latest record per session id, in first-seen order. A torn last line is ignored.
  std::vector<nlohmann::json> replay_sessions() const;

 private:
  std::filesystem::path root_;
  mutable std::mutex journal_mu_;
};

}  // namespace irene
