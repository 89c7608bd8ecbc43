// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <iomanip>
#include <set>
#include <sstream>
#include <thread>

#include "doctest.h"

#include "../common/fixtures.hpp"
#include "irene/eval.hpp"
#include "irene/service.hpp"
#include "irene/trainer.hpp"

// after Eigen: <resolv.h> defines _res
#include "httplib.h"

using namespace irene;
using nlohmann::json;

namespace {

std::string pose_string(const Camera& c) {
  std::ostringstream os;
  os << std::setprecision(17);
  for (std::size_t i = 0; i < 12; ++i) os << (i ? "," : "") << c.cam_to_world[i];
  return os.str();
}

struct LiveServer {
  httplib::Server svr;
  std::unique_ptr<Service> service;
  std::thread thread;
  int port = 0;

  explicit LiveServer(const std::filesystem::path& dir) : service(std::make_unique<Service>(dir)) {
    service->bind(svr);
    port = svr.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { svr.listen_after_bind(); });
    svr.wait_until_ready();
  }
  ~LiveServer() {
    svr.stop();
    thread.join();
  }
  httplib::Client client() const {
    httplib::Client c("127.0.0.1", port);
    c.set_read_timeout(120, 0);
    return c;
  }
};

json session_body(const std::string& ckpt, const Image& edit, int iterations = 20) {
  return {{"checkpoint_id", ckpt},
          {"mode", "edited-image"},
          {"payload", {{"image", base64_encode(encode_png(edit))}}},
          // thresholds that leave columns trainable on this random model
          {"config", {{"iterations", iterations}, {"lr", 0.05}, {"tau1", 1e-9}, {"tau2", -1.0}}}};
}

Image base_render(const Checkpoint& ck) {
  return render_image(ck.model, edit_camera_from(ck.config), render_options_from(ck.config)).image();
}

}  // namespace

TEST_CASE("ulid and base64") {
  std::set<std::string> ids;
  for (int i = 0; i < 200; ++i) {
    const auto id = make_ulid();
    CHECK(id.size() == 26);
    ids.insert(id);
  }
  CHECK(ids.size() == 200);
  const std::vector<std::uint8_t> raw{0, 1, 2, 250, 251, 255, 'a'};
  for (std::size_t n = 0; n <= raw.size(); ++n) {
    std::vector<std::uint8_t> part(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(n));
    CHECK(base64_decode(base64_encode(part)) == part);
  }
  CHECK(base64_encode(std::vector<std::uint8_t>{'M', 'a', 'n'}) == "TWFu");
  CHECK_THROWS(base64_decode("@@@@"));
}

TEST_CASE("service over HTTP: lifecycle, errors, determinism, persistence") {
  const auto dir = test::scratch_dir("service");
  const Checkpoint ck = test::tiny_checkpoint(21, 16);
  const auto bytes = encode_checkpoint(ck);
  const Camera cam = edit_camera_from(ck.config);
  const Image base = base_render(ck);
  Image edit = base;
  for (int y = 4; y < 12; ++y)
    for (int x = 4; x < 12; ++x) edit.at(x, y, 0) = 0.1f;
  edit = quantize8(edit);

  std::string ckpt_id, sid;
  std::string render_fitted;
  {
    LiveServer live(dir);
    auto cli = live.client();
    const std::string body(bytes.begin(), bytes.end());
    auto r = cli.Post("/checkpoints", body, "application/octet-stream");
    REQUIRE(r);
    CHECK(r->status == 201);
    ckpt_id = json::parse(r->body).at("id").get<std::string>();
    CHECK(ckpt_id == container_hash(bytes));
    r = cli.Post("/checkpoints", body, "application/octet-stream");
    CHECK(r->status == 409);
    std::string corrupt = body;
    corrupt[corrupt.size() / 2] ^= 0x10;
    r = cli.Post("/checkpoints", corrupt, "application/octet-stream");
    CHECK(r->status == 400);
    CHECK(json::parse(r->body).contains("error"));
    r = cli.Get("/checkpoints");
    CHECK(json::parse(r->body).at("checkpoints").size() == 1);

    // bad sessions
    r = cli.Post("/sessions", session_body("nope", edit).dump(), "application/json");
    CHECK(r->status == 404);
    r = cli.Post("/sessions", session_body(ckpt_id, Image(8, 8)).dump(), "application/json");
    CHECK(r->status == 400);
    r = cli.Post("/sessions", "{not json", "application/json");
    CHECK(r->status == 400);
    r = cli.Post("/sessions", json{{"checkpoint_id", ckpt_id}, {"mode", "paint"}, {"payload", json::object()}}.dump(),
                 "application/json");
    CHECK(r->status == 400);

    r = cli.Post("/sessions", session_body(ckpt_id, edit).dump(), "application/json");
    REQUIRE(r->status == 201);
    const json created = json::parse(r->body);
    sid = created.at("id").get<std::string>();
    CHECK(created.at("status") == "created");
    r = cli.Get("/sessions/" + sid + "/edit.png");
    CHECK(r->status == 200);
    CHECK(decode_png(std::vector<std::uint8_t>(r->body.begin(), r->body.end())).data == edit.data);
    CHECK(cli.Get("/sessions/UNKNOWN")->status == 404);

    const std::string render_q = "/sessions/" + sid + "/render?pose=" + pose_string(cam);
    CHECK(cli.Get(render_q)->status == 409);
    CHECK(cli.Get("/sessions/" + sid + "/neurons")->status == 409);
    CHECK(cli.Get("/sessions/" + sid + "/render?pose=1,2,3")->status == 400);

    // unedited render equals the offline renderer byte for byte
    r = cli.Get(render_q + "&edited=false");
    REQUIRE(r->status == 200);
    const auto offline = encode_png(base);
    CHECK(std::vector<std::uint8_t>(r->body.begin(), r->body.end()) == offline);

    r = cli.Post("/sessions/" + sid + "/fit", json{{"variant", "irene"}}.dump(), "application/json");
    CHECK(r->status == 202);
    const auto second = cli.Post("/sessions/" + sid + "/fit", "{}", "application/json");
    const bool running_or_done = second->status == 409;
    CHECK(running_or_done);

    // SSE stream until the fit finishes
    std::string stream;
    auto ev = cli.Get("/sessions/" + sid + "/events", [&](const char* data, std::size_t n) {
      stream.append(data, n);
      return true;
    });
    REQUIRE(ev);
    CHECK(ev->get_header_value("Content-Type").find("text/event-stream") != std::string::npos);
    CHECK(stream.find("event: progress") != std::string::npos);
    CHECK(stream.find("\"iter\":20") != std::string::npos);
    CHECK(stream.find("event: status") != std::string::npos);
    live.service->wait_fit(sid);

    r = cli.Get("/sessions/" + sid);
    const json fitted = json::parse(r->body);
    CHECK(fitted.at("status") == "fitted");
    CHECK(fitted.at("metrics").at("iterations") == 20);
    CHECK(fitted.at("metrics").at("frozen_neurons") < 64);
    CHECK(cli.Post("/sessions/" + sid + "/fit", "{}", "application/json")->status == 409);
    const json neurons = json::parse(cli.Get("/sessions/" + sid + "/neurons")->body);
    CHECK(neurons.dump().find("view-dependent") != std::string::npos);

    r = cli.Get(render_q);
    REQUIRE(r->status == 200);
    render_fitted = r->body;
    CHECK(cli.Get(render_q)->body == render_fitted);
    CHECK(render_fitted != std::string(offline.begin(), offline.end()));
    r = cli.Get(render_q + "&w=8&h=8");
    CHECK(decode_png(std::vector<std::uint8_t>(r->body.begin(), r->body.end())).width == 8);
    CHECK(cli.Get(render_q + "&w=0")->status == 400);
    CHECK(cli.Get(render_q + "&edited=maybe")->status == 400);
  }

  // restart: sessions and fitted renders survive
  {
    LiveServer live(dir);
    auto cli = live.client();
    auto r = cli.Get("/sessions/" + sid);
    REQUIRE(r->status == 200);
    CHECK(json::parse(r->body).at("status") == "fitted");
    r = cli.Get("/sessions/" + sid + "/render?pose=" + pose_string(cam));
    REQUIRE(r->status == 200);
    CHECK(r->body == render_fitted);
    CHECK(json::parse(cli.Get("/checkpoints")->body).at("checkpoints").size() == 1);
    CHECK(json::parse(cli.Get("/sessions")->body).dump().find(sid) != std::string::npos);
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("mask+hsv sessions synthesize the edit from the base render") {
  const auto dir = test::scratch_dir("service_hsv");
  const Checkpoint ck = test::tiny_checkpoint(22, 16);
  Service svc(dir);
  const std::string id = svc.add_checkpoint(encode_checkpoint(ck));
  std::vector<std::uint8_t> mask(256, 0);
  for (std::size_t i = 0; i < 128; ++i) mask[i] = 1;
  const auto mask_png = base64_encode(encode_png(mask_image(mask, 16, 16)));
  const Image base = base_render(ck);

  auto zero = svc.create_session(
      {{"checkpoint_id", id}, {"mode", "mask+hsv"}, {"payload", {{"mask", mask_png}, {"hsv", {0, 0, 0}}}}});
  CHECK(zero.mode == "mask+hsv");
  CHECK(decode_png(svc.edit_png(zero.id)).data == quantize8(base).data);

  auto shifted = svc.create_session(
      {{"checkpoint_id", id}, {"mode", "mask+hsv"}, {"payload", {{"mask", mask_png}, {"hsv", {120, 0, 0}}}}});
  const Image e = decode_png(svc.edit_png(shifted.id));
  const Image expect = quantize8(synthesize_edit(base, mask, 120, 0, 0));
  CHECK(e.data == expect.data);
  CHECK_THROWS_AS(svc.start_fit(shifted.id, "sparkle"), UsageError);
  svc.start_fit(shifted.id, "last-layer");
  svc.wait_fit(shifted.id);
  CHECK(svc.get_session(shifted.id).status == SessionStatus::Fitted);
  CHECK_THROWS_AS(svc.neurons(shifted.id), ConflictError);
  CHECK_THROWS_AS(svc.get_session("missing"), NotFoundError);
  CHECK(svc.list_sessions().size() == 2);
  std::filesystem::remove_all(dir);
}
