// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <condition_variable>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"

#include "irene/checkpoint.hpp"
#include "irene/edit.hpp"
#include "irene/error.hpp"
#include "irene/storage.hpp"

namespace httplib {
class Server;
}

namespace irene {

class NotFoundError : public Error {
 public:
  using Error::Error;
};
class ConflictError : public Error {
 public:
  using Error::Error;
};

enum class SessionStatus { Created, Profiled, Fitted, Failed };
std::string to_string(SessionStatus s);
SessionStatus parse_status(const std::string& s);

struct SessionRecord {
  std::string id;
  std::string checkpoint_id;
  std::string mode;  // edited-image | mask+hsv
  std::array<double, 3> hsv{0, 0, 0};
  EditConfig config;
  SessionStatus status = SessionStatus::Created;
  nlohmann::json metrics = nlohmann::json::object();
  std::string error;
  std::string created_at;
  std::string updated_at;

  nlohmann::json to_json() const;
  static SessionRecord from_json(const nlohmann::json& j);
};

/// Edit sessions over stored checkpoints. Thread-safe; one fit at a time per
/// session; renders read the last published snapshot.
class Service {
 public:
  explicit Service(std::filesystem::path data_dir);
  ~Service();
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Verifies and stores a container; returns its id (the content hash).
  /// FormatError for a bad container, ConflictError for a duplicate.
  std::string add_checkpoint(std::span<const std::uint8_t> bytes);
  nlohmann::json list_checkpoints() const;

  /// Body: {checkpoint_id, mode, payload: {image} | {mask, hsv}, config}.
  SessionRecord create_session(const nlohmann::json& body);
  SessionRecord get_session(const std::string& id) const;
  std::vector<SessionRecord> list_sessions() const;
  std::vector<std::uint8_t> edit_png(const std::string& id) const;

  /// Starts a background fit; ConflictError when one is running or the session is finished.
  void start_fit(const std::string& id, const std::string& variant);
  /// Blocks until no fit is running for the session.
  void wait_fit(const std::string& id);

  /// Progress events from index `from`; blocks up to `timeout_ms` for new ones.
  /// Returns the events and whether the fit has finished.
  std::pair<std::vector<std::string>, bool> events(const std::string& id, std::size_t from, int timeout_ms) const;

  std::vector<std::uint8_t> render_png(const std::string& id, const std::array<double, 12>& pose, int width,
                                       int height, bool edited) const;
  nlohmann::json neurons(const std::string& id) const;

  /// Registers the HTTP routes.
  void bind(httplib::Server& server);

 private:
  struct Session;
  std::shared_ptr<Session> find(const std::string& id) const;
  std::shared_ptr<const Checkpoint> checkpoint(const std::string& id) const;
  void persist(const SessionRecord& rec);
  void run_fit(std::shared_ptr<Session> s, EditVariant variant);

  Storage storage_;
  mutable std::mutex mu_;
  std::map<std::string, std::shared_ptr<Session>> sessions_;
  std::vector<std::string> order_;
  mutable std::map<std::string, std::shared_ptr<const Checkpoint>> checkpoints_;
};

/// Blocking HTTP server on host:port (port 0 picks one; `on_ready` receives it).
void serve(const std::filesystem::path& data_dir, const std::string& host, int port,
           const std::function<void(int)>& on_ready = {});

}  // namespace irene
