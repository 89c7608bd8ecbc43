// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/storage.hpp"

#include <openssl/evp.h>
#include <openssl/rand.h>

#include <algorithm>
#include <chrono>
#include <fstream>
#include <map>

#include "irene/checkpoint.hpp"
#include "irene/error.hpp"

namespace irene {

namespace fs = std::filesystem;
using json = nlohmann::json;

std::string make_ulid() {
  static constexpr char kAlphabet[] = "0123456789ABCDEFGHJKMNPQRSTVWXYZ";
  const auto ms = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::system_clock::now().time_since_epoch())
          .count());
  std::uint8_t bytes[16];
  for (int i = 0; i < 6; ++i) bytes[i] = static_cast<std::uint8_t>(ms >> (8 * (5 - i)));
  if (RAND_bytes(bytes + 6, 10) != 1) throw Error("ulid: random source failed");
  // 128 bits → 26 base32 digits, most significant first (2 leading pad bits)
  std::string out(26, '0');
  unsigned __int128 v = 0;
  for (auto b : bytes) v = (v << 8) | b;
  for (int i = 25; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = kAlphabet[static_cast<unsigned>(v & 31u)];
    v >>= 5;
  }
  return out;
}

std::string base64_encode(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3), '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
  std::string clean;
  for (char c : text)
    if (!std::isspace(static_cast<unsigned char>(c))) clean.push_back(c);
  if (clean.size() % 4 != 0) throw UsageError("base64: length is not a multiple of 4");
  std::vector<std::uint8_t> out(3 * clean.size() / 4);
  const int n = EVP_DecodeBlock(out.data(), reinterpret_cast<const unsigned char*>(clean.data()),
                                static_cast<int>(clean.size()));
  if (n < 0) throw UsageError("base64: malformed input");
  std::size_t pad = 0;
  if (!clean.empty() && clean.back() == '=') ++pad;
  if (clean.size() > 1 && clean[clean.size() - 2] == '=') ++pad;
  out.resize(static_cast<std::size_t>(n) - pad);
  return out;
}

Storage::Storage(fs::path root) : root_(std::move(root)) {
  fs::create_directories(root_ / "checkpoints");
  fs::create_directories(root_ / "sessions");
}

fs::path Storage::checkpoint_path(const std::string& id) const { return root_ / "checkpoints" / (id + ".irne"); }

fs::path Storage::session_dir(const std::string& id) const { return root_ / "sessions" / id; }

bool Storage::has_checkpoint(const std::string& id) const { return fs::exists(checkpoint_path(id)); }

void Storage::put_checkpoint(const std::string& id, std::span<const std::uint8_t> bytes) {
  write_file_bytes(checkpoint_path(id), bytes);
}

std::vector<std::string> Storage::checkpoint_ids() const {
  std::vector<std::string> ids;
  for (const auto& e : fs::directory_iterator(root_ / "checkpoints")) {
    if (e.path().extension() == ".irne") ids.push_back(e.path().stem().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

void Storage::append_session(const json& record) {
  std::lock_guard lock(journal_mu_);
  std::ofstream f(root_ / "sessions.jsonl", std::ios::app);
  if (!f) throw IoError("cannot open session journal in " + root_.string());
  f << record.dump() << '\n';
  f.flush();
  if (!f) throw IoError("session journal write failed");
}

std::vector<json> Storage::replay_sessions() const {
  std::lock_guard lock(journal_mu_);
  std::vector<json> order;
  std::map<std::string, std::size_t> index;
  std::ifstream f(root_ / "sessions.jsonl");
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    json rec;
    try {
      rec = json::parse(line);
    } catch (const json::exception&) {
      continue;  // torn write at the tail
    }
    const auto id = rec.at("id").get<std::string>();
    auto it = index.find(id);
    if (it == index.end()) {
      index[id] = order.size();
      order.push_back(rec);
    } else {
      order[it->second] = rec;
    }
  }
  return order;
}

}  // namespace irene
