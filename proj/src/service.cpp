// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/service.hpp"

#include <chrono>
#include <ctime>
#include <fstream>

#include "httplib.h"

#include "irene/trainer.hpp"

namespace irene {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string now_iso8601() {
  const auto t = std::chrono::system_clock::now();
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  const auto ms =
      std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count() % 1000;
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[40];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%S", &tm);
  char out[48];
  std::snprintf(out, sizeof out, "%s.%03dZ", buf, static_cast<int>(ms));
  return out;
}

bool transition_allowed(SessionStatus from, SessionStatus to) {
  if (to == SessionStatus::Failed) return from != SessionStatus::Fitted && from != SessionStatus::Failed;
  if (from == SessionStatus::Created) return to == SessionStatus::Profiled || to == SessionStatus::Fitted;
  if (from == SessionStatus::Profiled) return to == SessionStatus::Fitted;
  return false;
}

}  // namespace

std::string to_string(SessionStatus s) {
  switch (s) {
    case SessionStatus::Created: return "created";
    case SessionStatus::Profiled: return "profiled";
    case SessionStatus::Fitted: return "fitted";
    case SessionStatus::Failed: return "failed";
  }
  return "unknown";
}

SessionStatus parse_status(const std::string& s) {
  if (s == "created") return SessionStatus::Created;
  if (s == "profiled") return SessionStatus::Profiled;
  if (s == "fitted") return SessionStatus::Fitted;
  if (s == "failed") return SessionStatus::Failed;
  throw FormatError("unknown session status '" + s + "'");
}

json SessionRecord::to_json() const {
  return json{{"id", id},
              {"checkpoint_id", checkpoint_id},
              {"mode", mode},
              {"hsv", hsv},
              {"config", edit_config_to_json(config)},
              {"status", to_string(status)},
              {"metrics", metrics},
              {"error", error},
              {"created_at", created_at},
              {"updated_at", updated_at}};
}

SessionRecord SessionRecord::from_json(const json& j) {
  SessionRecord r;
  r.id = j.at("id").get<std::string>();
  r.checkpoint_id = j.at("checkpoint_id").get<std::string>();
  r.mode = j.at("mode").get<std::string>();
  r.hsv = j.at("hsv").get<std::array<double, 3>>();
  r.config = edit_config_from_json(j.at("config"));
  r.status = parse_status(j.at("status").get<std::string>());
  r.metrics = j.value("metrics", json::object());
  r.error = j.value("error", "");
  r.created_at = j.value("created_at", "");
  r.updated_at = j.value("updated_at", "");
  return r;
}

struct Service::Session {
  mutable std::mutex mu;
  mutable std::condition_variable cv;
  SessionRecord rec;
  std::shared_ptr<const Checkpoint> base;
  std::vector<std::uint8_t> edit_png;
  std::shared_ptr<const json> neurons;         // labels + stats once profiled
  std::shared_ptr<const EditOverlay> snapshot; // last published edit
  std::vector<std::string> events;
  bool running = false;
  std::thread worker;
};

Service::Service(fs::path data_dir) : storage_(std::move(data_dir)) {
  for (const auto& j : storage_.replay_sessions()) {
    auto s = std::make_shared<Session>();
    s->rec = SessionRecord::from_json(j);
    const fs::path dir = storage_.session_dir(s->rec.id);
    s->edit_png = read_file_bytes(dir / "edit.png");
    if (fs::exists(dir / "labels.json")) {
      std::ifstream f(dir / "labels.json");
      s->neurons = std::make_shared<const json>(json::parse(f));
    }
    if (s->rec.status == SessionStatus::Fitted) {
      const Checkpoint ck = load_checkpoint(dir / "result.irne");
      if (!ck.edit) throw FormatError("session " + s->rec.id + ": result container holds no edit");
      s->snapshot = std::make_shared<const EditOverlay>(ck.edit->overlay);
    }
    order_.push_back(s->rec.id);
    sessions_[s->rec.id] = std::move(s);
  }
}

Service::~Service() {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mu_);
    for (auto& [id, s] : sessions_) all.push_back(s);
  }
  for (auto& s : all)
    if (s->worker.joinable()) s->worker.join();
}

std::shared_ptr<Service::Session> Service::find(const std::string& id) const {
  std::lock_guard lock(mu_);
  auto it = sessions_.find(id);
  if (it == sessions_.end()) throw NotFoundError("unknown session '" + id + "'");
  return it->second;
}

std::shared_ptr<const Checkpoint> Service::checkpoint(const std::string& id) const {
  {
    std::lock_guard lock(mu_);
    auto it = checkpoints_.find(id);
    if (it != checkpoints_.end()) return it->second;
  }
  if (!storage_.has_checkpoint(id)) throw NotFoundError("unknown checkpoint '" + id + "'");
  auto ck = std::make_shared<const Checkpoint>(load_checkpoint(storage_.checkpoint_path(id)));
  std::lock_guard lock(mu_);
  return checkpoints_.emplace(id, ck).first->second;
}

void Service::persist(const SessionRecord& rec) { storage_.append_session(rec.to_json()); }

std::string Service::add_checkpoint(std::span<const std::uint8_t> bytes) {
  const Checkpoint ck = decode_checkpoint(bytes);  // verifies the hash and tensor list
  const std::string id = container_hash(bytes);
  std::lock_guard lock(mu_);
  if (storage_.has_checkpoint(id)) throw ConflictError("checkpoint " + id + " already stored");
  storage_.put_checkpoint(id, bytes);
  checkpoints_[id] = std::make_shared<const Checkpoint>(ck);
  return id;
}

json Service::list_checkpoints() const {
  json out = json::array();
  for (const auto& id : storage_.checkpoint_ids()) {
    out.push_back({{"id", id}, {"hash", id}, {"bytes", fs::file_size(storage_.checkpoint_path(id))}});
  }
  return out;
}

SessionRecord Service::create_session(const json& body) {
  if (!body.is_object()) throw UsageError("session body must be a JSON object");
  SessionRecord rec;
  std::vector<std::uint8_t> png;
  std::shared_ptr<const Checkpoint> base;
  try {
    rec.checkpoint_id = body.at("checkpoint_id").get<std::string>();
    base = checkpoint(rec.checkpoint_id);
    rec.mode = body.at("mode").get<std::string>();
    const json& payload = body.at("payload");
    rec.config = edit_config_from_json(body.value("config", json::object()));
    const Camera cam = edit_camera_from(base->config);
    if (rec.mode == "edited-image") {
      png = base64_decode(payload.at("image").get<std::string>());
      const Image img = decode_png(png);
      if (img.width != cam.width || img.height != cam.height || img.channels != 3) {
        throw DimensionError("edited image is " + std::to_string(img.width) + "x" + std::to_string(img.height) +
                             ", edit camera is " + std::to_string(cam.width) + "x" + std::to_string(cam.height));
      }
    } else if (rec.mode == "mask+hsv") {
      const Image mask = decode_png(base64_decode(payload.at("mask").get<std::string>()));
      if (mask.width != cam.width || mask.height != cam.height) {
        throw DimensionError("mask is " + std::to_string(mask.width) + "x" + std::to_string(mask.height) +
                             ", edit camera is " + std::to_string(cam.width) + "x" + std::to_string(cam.height));
      }
      rec.hsv = payload.at("hsv").get<std::array<double, 3>>();
      const Image base_img = render_image(base->model, cam, render_options_from(base->config)).image();
      png = encode_png(synthesize_edit(base_img, mask_bits(mask), rec.hsv[0], rec.hsv[1], rec.hsv[2]));
    } else {
      throw UsageError("mode must be 'edited-image' or 'mask+hsv'");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("malformed session body: ") + e.what());
  }
  rec.id = make_ulid();
  rec.created_at = rec.updated_at = now_iso8601();
  write_file_bytes(storage_.session_dir(rec.id) / "edit.png", png);
  auto s = std::make_shared<Session>();
  s->rec = rec;
  s->base = base;
  s->edit_png = std::move(png);
  persist(rec);
  std::lock_guard lock(mu_);
  order_.push_back(rec.id);
  sessions_[rec.id] = s;
  return rec;
}

SessionRecord Service::get_session(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return s->rec;
}

std::vector<SessionRecord> Service::list_sessions() const {
  std::vector<std::shared_ptr<Session>> all;
  {
    std::lock_guard lock(mu_);
    for (const auto& id : order_) all.push_back(sessions_.at(id));
  }
  std::vector<SessionRecord> out;
  for (const auto& s : all) {
    std::lock_guard lock(s->mu);
    out.push_back(s->rec);
  }
  return out;
}

std::vector<std::uint8_t> Service::edit_png(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  return s->edit_png;
}

void Service::start_fit(const std::string& id, const std::string& variant_name) {
  const EditVariant variant = parse_variant(variant_name);
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (s->running) throw ConflictError("a fit is already running for session " + id);
  if (s->rec.status == SessionStatus::Fitted || s->rec.status == SessionStatus::Failed) {
    throw ConflictError("session " + id + " is already " + to_string(s->rec.status));
  }
  if (s->worker.joinable()) s->worker.join();
  s->running = true;
  s->events.clear();
  s->worker = std::thread([this, s, variant] { run_fit(s, variant); });
}

void Service::wait_fit(const std::string& id) {
  auto s = find(id);
  std::unique_lock lock(s->mu);
  s->cv.wait(lock, [&] { return !s->running; });
}

void Service::run_fit(std::shared_ptr<Session> s, EditVariant variant) {
  auto set_status = [&](SessionStatus to, json metrics, std::string error) {
    std::lock_guard lock(s->mu);
    if (!transition_allowed(s->rec.status, to)) return;
    s->rec.status = to;
    if (!metrics.is_null()) s->rec.metrics = std::move(metrics);
    s->rec.error = std::move(error);
    s->rec.updated_at = now_iso8601();
    persist(s->rec);
  };
  const fs::path dir = storage_.session_dir(s->rec.id);
  try {
    std::shared_ptr<const Checkpoint> base;
    EditConfig cfg;
    std::vector<std::uint8_t> png;
    {
      std::lock_guard lock(s->mu);
      if (!s->base) s->base = checkpoint(s->rec.checkpoint_id);
      base = s->base;
      cfg = s->rec.config;
      cfg.variant = variant;
      png = s->edit_png;
    }
    const Image target = decode_png(png);
    const Camera cam = edit_camera_from(base->config);
    const FitCache cache = build_fit_cache(base->model, cam, render_options_from(base->config));

    std::vector<std::uint8_t> mask;
    Tensor2<float> profile_a;
    if (variant == EditVariant::Irene) {
      const bool ff = base->config.at("scene").value("family", "orbit") == "forward-facing";
      const NeuronProfile prof = profile_neurons(base->model, cache, cfg.q, sweep_step_deg(cfg.q, ff));
      const Classification cls = classify_neurons(prof, cfg.tau1, cfg.tau2, cfg.invert_condition1);
      write_profile_csv(dir / "profile.csv", prof);
      const json labels = labels_json(prof, cls, cfg.tau1, cfg.tau2, cfg.invert_condition1);
      {
        std::ofstream f(dir / "labels.json");
        f << labels.dump(2) << '\n';
      }
      {
        std::lock_guard lock(s->mu);
        s->neurons = std::make_shared<const json>(labels);
      }
      mask = cls.freeze_mask;
      profile_a = prof.a;
      set_status(SessionStatus::Profiled, nullptr, "");
    }

    FitCallbacks cb;
    cb.progress = [&](const FitProgress& p) {
      std::lock_guard lock(s->mu);
      s->events.push_back("event: progress\ndata: " + json{{"iter", p.iter}, {"loss", p.loss}}.dump() + "\n\n");
      s->cv.notify_all();
    };
    cb.publish = [&](const EditOverlay& o) {
      auto snap = std::make_shared<const EditOverlay>(o);
      std::lock_guard lock(s->mu);
      s->snapshot = std::move(snap);
    };
    const FitResult fit = fit_edit(base->model, cache, target, cfg, mask, cb);
    if (fit.failed) throw NanError(fit.error);

    Checkpoint out;
    out.model = base->model;
    out.config = base->config;
    out.config["edit_config"] = edit_config_to_json(cfg);
    out.edit = EditDelta{fit.overlay, fit.freeze_mask, profile_a};
    save_checkpoint(dir / "result.irne", out);
    const json metrics{{"variant", to_string(variant)},
                       {"iterations", cfg.iterations},
                       {"final_loss", fit.losses.empty() ? 0.0 : fit.losses.back()},
                       {"fit_seconds", fit.seconds},
                       {"trainable_params", fit.trainable_params},
                       {"frozen_neurons", std::count(fit.freeze_mask.begin(), fit.freeze_mask.end(), 1)}};
    {
      std::lock_guard lock(s->mu);
      s->snapshot = std::make_shared<const EditOverlay>(fit.overlay);
    }
    set_status(SessionStatus::Fitted, metrics, "");
  } catch (const std::exception& e) {
    set_status(SessionStatus::Failed, json{{"variant", to_string(variant)}}, e.what());
  }
  std::lock_guard lock(s->mu);
  s->events.push_back("event: status\ndata: " + json{{"status", to_string(s->rec.status)}}.dump() + "\n\n");
  s->running = false;
  s->cv.notify_all();
}

std::pair<std::vector<std::string>, bool> Service::events(const std::string& id, std::size_t from,
                                                          int timeout_ms) const {
  auto s = find(id);
  std::unique_lock lock(s->mu);
  s->cv.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                 [&] { return s->events.size() > from || !s->running; });
  std::vector<std::string> out;
  for (std::size_t i = from; i < s->events.size(); ++i) out.push_back(s->events[i]);
  return {out, !s->running};
}

std::vector<std::uint8_t> Service::render_png(const std::string& id, const std::array<double, 12>& pose, int width,
                                              int height, bool edited) const {
  auto s = find(id);
  std::shared_ptr<const Checkpoint> base;
  std::shared_ptr<const EditOverlay> snap;
  {
    std::lock_guard lock(s->mu);
    snap = s->snapshot;
    base = s->base;
    if (edited && !snap) throw ConflictError("session " + id + " is not fitted");
  }
  if (!base) {
    base = checkpoint(s->rec.checkpoint_id);
    std::lock_guard lock(s->mu);
    s->base = base;
  }
  if (width < 1 || height < 1 || width > 4096 || height > 4096) throw UsageError("render size out of range");
  const Camera edit_cam = edit_camera_from(base->config);
  Camera cam = edit_cam.with_pose(pose);
  const double sx = static_cast<double>(width) / edit_cam.width, sy = static_cast<double>(height) / edit_cam.height;
  cam.width = width;
  cam.height = height;
  cam.fx *= sx;
  cam.cx *= sx;
  cam.fy *= sy;
  cam.cy *= sy;
  return encode_png(render_image(base->model, cam, render_options_from(base->config), edited ? snap.get() : nullptr)
                        .image());
}

json Service::neurons(const std::string& id) const {
  auto s = find(id);
  std::lock_guard lock(s->mu);
  if (!s->neurons) throw ConflictError("session " + id + " is not profiled");
  return *s->neurons;
}

// ---------------------------------------------------------------------------

namespace {

void send_error(httplib::Response& res, int code, const std::string& msg) {
  res.status = code;
  res.set_content(json{{"error", msg}}.dump(), "application/json");
}

template <class Fn>
httplib::Server::Handler guarded(Fn fn) {
  return [fn](const httplib::Request& req, httplib::Response& res) {
    try {
      fn(req, res);
    } catch (const NotFoundError& e) {
      send_error(res, 404, e.what());
    } catch (const ConflictError& e) {
      send_error(res, 409, e.what());
    } catch (const FormatError& e) {
      send_error(res, 400, e.what());
    } catch (const UsageError& e) {
      send_error(res, 400, e.what());
    } catch (const json::exception& e) {
      send_error(res, 400, e.what());
    } catch (const std::exception& e) {
      send_error(res, 500, e.what());
    }
  };
}

json parse_body(const httplib::Request& req) {
  try {
    return req.body.empty() ? json::object() : json::parse(req.body);
  } catch (const json::exception& e) {
    throw UsageError(std::string("request body is not JSON: ") + e.what());
  }
}

int int_param(const httplib::Request& req, const char* key, int fallback) {
  if (!req.has_param(key)) return fallback;
  try {
    std::size_t used = 0;
    const std::string v = req.get_param_value(key);
    const int out = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return out;
  } catch (const std::exception&) {
    throw UsageError(std::string("query parameter '") + key + "' must be an integer");
  }
}

}  // namespace

void Service::bind(httplib::Server& svr) {
  svr.Post("/checkpoints", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const std::string id = add_checkpoint(
                 std::span<const std::uint8_t>(reinterpret_cast<const std::uint8_t*>(req.body.data()), req.body.size()));
             res.status = 201;
             res.set_content(json{{"id", id}, {"hash", id}}.dump(), "application/json");
           }));
  svr.Get("/checkpoints", guarded([this](const httplib::Request&, httplib::Response& res) {
            res.set_content(json{{"checkpoints", list_checkpoints()}}.dump(), "application/json");
          }));
  svr.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
             res.status = 201;
             res.set_content(create_session(parse_body(req)).to_json().dump(), "application/json");
           }));
  svr.Get("/sessions", guarded([this](const httplib::Request&, httplib::Response& res) {
            json all = json::array();
            for (const auto& r : list_sessions()) all.push_back(r.to_json());
            res.set_content(json{{"sessions", all}}.dump(), "application/json");
          }));
  svr.Get("/sessions/:id", guarded([this](const httplib::Request& req, httplib::Response& res) {
            res.set_content(get_session(req.path_params.at("id")).to_json().dump(), "application/json");
          }));
  svr.Get("/sessions/:id/edit.png", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const auto png = edit_png(req.path_params.at("id"));
            res.set_content(std::string(png.begin(), png.end()), "image/png");
          }));
  svr.Post("/sessions/:id/fit", guarded([this](const httplib::Request& req, httplib::Response& res) {
             const json body = parse_body(req);
             const std::string id = req.path_params.at("id");
             start_fit(id, body.value("variant", std::string("irene")));
             res.status = 202;
             res.set_content(json{{"id", id}, {"accepted", true}}.dump(), "application/json");
           }));
  svr.Get("/sessions/:id/events", guarded([this](const httplib::Request& req, httplib::Response& res) {
            const std::string id = req.path_params.at("id");
            find(id);
            res.set_header("Cache-Control", "no-cache");
            res.set_chunked_content_provider(
                "text/event-stream", [this, id, next = std::size_t{0}](std::size_t, httplib::DataSink& sink) mutable {
                  auto [evs, done] = events(id, next, 1000);
                  for (const auto& e : evs) {
                    if (!sink.write(e.data(), e.size())) return false;
                  }
                  next += evs.size();
                  if (done && evs.empty()) sink.done();
                  return true;
                });
          }));
  svr.Get("/sessions/:id/render", guarded([this](const httplib::Request& req, httplib::Response& res) {
            if (!req.has_param("pose")) throw UsageError("missing pose");
            const auto pose = parse_pose(req.get_param_value("pose"));
            const std::string id = req.path_params.at("id");
            const Camera cam = edit_camera_from(checkpoint(get_session(id).checkpoint_id)->config);
            const std::string edited = req.has_param("edited") ? req.get_param_value("edited") : "true";
            if (edited != "true" && edited != "false") throw UsageError("edited must be true or false");
            const auto png = render_png(id, pose, int_param(req, "w", cam.width), int_param(req, "h", cam.height),
                                        edited == "true");
            res.set_content(std::string(png.begin(), png.end()), "image/png");
          }));
  svr.Get("/sessions/:id/neurons", guarded([this](const httplib::Request& req, httplib::Response& res) {
            res.set_content(neurons(req.path_params.at("id")).dump(), "application/json");
          }));
}

void serve(const fs::path& data_dir, const std::string& host, int port, const std::function<void(int)>& on_ready) {
  Service service(data_dir);
  httplib::Server svr;
  svr.new_task_queue = [] { return new httplib::ThreadPool(8); };
  service.bind(svr);
  int bound = port;
  if (port == 0) {
    bound = svr.bind_to_any_port(host);
  } else if (!svr.bind_to_port(host, port)) {
    bound = -1;
  }
  if (bound < 0) throw IoError("cannot listen on " + host + ":" + std::to_string(port));
  if (on_ready) on_ready(bound);
  svr.listen_after_bind();
}

}  // namespace irene
