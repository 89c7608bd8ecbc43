// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "doctest.h"

#include "../common/fixtures.hpp"
#include "irene/edit.hpp"
#include "irene/error.hpp"
#include "irene/eval.hpp"

using namespace irene;

namespace {

NeuronProfile profile_of(const std::vector<std::vector<float>>& rows) {
  NeuronProfile p;
  p.q = static_cast<int>(rows.front().size());
  p.a = Tensor2<float>(rows.size(), rows.front().size());
  for (std::size_t k = 0; k < rows.size(); ++k) std::copy(rows[k].begin(), rows[k].end(), p.a.row(k).begin());
  p.stats = profile_stats(p.a);
  return p;
}

std::vector<float> alternating(float lo, float hi, int q) {
  std::vector<float> v(static_cast<std::size_t>(q));
  for (int i = 0; i < q; ++i) v[static_cast<std::size_t>(i)] = i % 2 ? hi : lo;
  return v;
}

RenderOptions tiny_opt() {
  RenderOptions o;
  o.samples_per_ray = 32;
  return o;
}

Camera tiny_cam(int size = 24) { return Camera::look_at({2.6, 0.4, 1.2}, {0, 0, 0}, size, size, 45); }

}  // namespace

TEST_CASE("classification: the three criterion cases with tau2 = 100") {
  constexpr double kTau1 = 0.5, kTau2 = kTau2Published;
  const auto p = profile_of({std::vector<float>(30, 300.0f), alternating(50, 900, 30), alternating(120, 480, 30),
                             std::vector<float>(30, 0.0f)});
  // constant positive: std/mean = 0 < 0.5
  CHECK(p.stats[0].std == 0.0);
  CHECK(classify_neuron(p.stats[0], kTau1, kTau2) == NeuronLabel::ViewDependent);
  // min = 50 ≤ 100 regardless of the ratio
  CHECK(p.stats[1].std / p.stats[1].mean >= kTau1);
  CHECK(classify_neuron(p.stats[1], kTau1, kTau2) == NeuronLabel::ViewDependent);
  // {120, 480}: μ 300, population std 180, ratio 0.6, min 120 > 100
  CHECK(p.stats[2].mean == 300.0);
  CHECK(p.stats[2].std == 180.0);
  CHECK(p.stats[2].min == 120.0);
  CHECK(classify_neuron(p.stats[2], kTau1, kTau2) == NeuronLabel::Diffuse);
  // dead neuron: condition 2 with min 0
  CHECK(classify_neuron(p.stats[3], kTau1, kTau2) == NeuronLabel::ViewDependent);
  const Classification c = classify_neurons(p, kTau1, kTau2);
  CHECK(c.freeze_mask == std::vector<std::uint8_t>{1, 1, 0, 1});
}

TEST_CASE("classification: inverted condition 1") {
  const auto p = profile_of({std::vector<float>(30, 300.0f), alternating(120, 480, 30)});
  CHECK(classify_neuron(p.stats[0], 0.5, 100, true) == NeuronLabel::Diffuse);
  CHECK(classify_neuron(p.stats[1], 0.5, 100, true) == NeuronLabel::ViewDependent);
  // condition 2 is unaffected by the flag
  CHECK(classify_neuron(p.stats[0], 0.5, 400, true) == NeuronLabel::ViewDependent);
}

TEST_CASE("classification: condition 1 is scale-covariant, condition 2 is not") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<float> u(100, 900);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> row(30);
    for (auto& v : row) v = u(rng);
    std::vector<float> scaled = row;
    for (auto& v : scaled) v *= 4.0f;  // exact in binary
    const auto p = profile_of({row, scaled});
    CHECK(p.stats[1].std / p.stats[1].mean == doctest::Approx(p.stats[0].std / p.stats[0].mean).epsilon(1e-12));
    // τ2 large enough to catch only the original row
    const double tau2 = p.stats[0].min * 2;
    const bool c1 = p.stats[0].std / p.stats[0].mean < 0.5;
    CHECK(classify_neuron(p.stats[0], 0.5, tau2) == NeuronLabel::ViewDependent);
    CHECK((classify_neuron(p.stats[1], 0.5, tau2) == NeuronLabel::ViewDependent) == (c1 || p.stats[1].min <= tau2));
  }
  // the same row scaled below τ2 flips to view-dependent
  const auto p = profile_of({alternating(120, 480, 30), alternating(60, 240, 30)});
  CHECK(classify_neuron(p.stats[0], 0.5, 100) == NeuronLabel::Diffuse);
  CHECK(classify_neuron(p.stats[1], 0.5, 100) == NeuronLabel::ViewDependent);
}

TEST_CASE("population std") {
  const auto s = profile_stats(Tensor2<float>(1, 4, std::vector<float>{2, 4, 4, 6}));
  CHECK(s[0].mean == 4.0);
  CHECK(s[0].std == doctest::Approx(std::sqrt(2.0)));
  CHECK(s[0].min == 2.0);
}

TEST_CASE("classification is invariant to the sweep order") {
  std::mt19937_64 rng(9);
  std::uniform_real_distribution<float> u(0, 1);
  std::vector<std::vector<float>> rows(64, std::vector<float>(30));
  for (auto& r : rows)
    for (auto& v : r) v = u(rng);
  const auto p = profile_of(rows);
  std::vector<std::size_t> perm(30);
  std::iota(perm.begin(), perm.end(), 0);
  std::shuffle(perm.begin(), perm.end(), rng);
  auto shuffled = rows;
  for (std::size_t k = 0; k < 64; ++k)
    for (std::size_t q = 0; q < 30; ++q) shuffled[k][q] = rows[k][perm[q]];
  const auto ps = profile_of(shuffled);
  for (std::size_t k = 0; k < 64; ++k) {
    CHECK(ps.stats[k].mean == doctest::Approx(p.stats[k].mean).epsilon(1e-12));
    CHECK(ps.stats[k].std == doctest::Approx(p.stats[k].std).epsilon(1e-9));
    CHECK(ps.stats[k].min == p.stats[k].min);
  }
  const double tau2 = calibrate_tau2(p, 0.5);
  CHECK(classify_neurons(ps, 0.3, tau2).freeze_mask == classify_neurons(p, 0.3, tau2).freeze_mask);
}

TEST_CASE("blend") {
  const std::array<float, 3> base{0.2f, 0.4f, 0.6f}, edit{0.6f, 0.4f, 0.2f};
  CHECK(blend(0.0f, edit, base) == base);
  CHECK(blend(1.0f, edit, base) == edit);
  const auto mid = blend(0.5f, edit, base);
  for (float v : mid) CHECK(v == doctest::Approx(0.4f));
  BlendDiagnostics diag;
  CHECK(blend(1.7f, edit, base, &diag) == edit);
  CHECK(blend(-0.2f, edit, base, &diag) == base);
  CHECK(blend(std::nanf(""), edit, base, &diag) == base);
  CHECK(diag.clamped.load() == 3);
}

TEST_CASE("edit config json") {
  EditConfig c;
  c.tau2 = 0.125;
  c.variant = EditVariant::SoftSeg;
  c.invert_condition1 = true;
  c.iterations = 7;
  const EditConfig back = edit_config_from_json(edit_config_to_json(c));
  CHECK(back.tau2 == 0.125);
  CHECK(back.variant == EditVariant::SoftSeg);
  CHECK(back.invert_condition1);
  CHECK(back.iterations == 7);
  CHECK(edit_config_to_json(back) == edit_config_to_json(c));
  CHECK_THROWS_AS(edit_config_from_json({{"tau3", 1}}), UsageError);
  CHECK(edit_config_from_json({{"q", 12}}).tau1 == 0.5);
  CHECK_THROWS_AS(edit_config_from_json({{"q", 1}}).validate(), UsageError);
  CHECK_THROWS_AS(edit_config_from_json({{"tau1", 0}}).validate(), UsageError);
}

TEST_CASE("sweep geometry") {
  CHECK(sweep_step_deg(30, false) == 12.0);
  CHECK(sweep_step_deg(30, true) == 6.0);
  const Camera cam = tiny_cam();
  const auto d0 = swept_direction(cam, 0), d90 = swept_direction(cam, 90), d360 = swept_direction(cam, 360);
  const auto [az, el] = view_angles(cam);
  CHECK(std::hypot(d0[0], d0[1], d0[2]) == doctest::Approx(1.0));
  // rotation about +z keeps elevation and turns the xy projection by 90°
  CHECK(d90[2] == doctest::Approx(d0[2]));
  CHECK(d0[0] * d90[0] + d0[1] * d90[1] == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(d0[0] * d90[1] - d0[1] * d90[0] > 0);
  for (int i = 0; i < 3; ++i) CHECK(d360[i] == doctest::Approx(d0[i]).epsilon(1e-5));
  CHECK(std::sin(el) == doctest::Approx(d0[2]).epsilon(1e-5));
  CHECK(std::cos(az) * std::cos(el) == doctest::Approx(d0[0]).epsilon(1e-5));
}

TEST_CASE("profile shape and direction-blind model") {
  auto model = test::tiny_model<float>(4);
  const auto prof = profile_neurons(model, tiny_cam(16), 30, 12.0, tiny_opt());
  CHECK(prof.a.rows() == 64);
  CHECK(prof.a.cols() == 30);
  CHECK(prof.stats.size() == 64);
  CHECK_THROWS_AS(profile_neurons(model, tiny_cam(16), 1, 12.0, tiny_opt()), UsageError);

  // zero the γ(θ) inputs of the first color layer (columns 15..30)
  auto& w = model.color.l0.weight.value;
  for (std::size_t r = 0; r < w.rows(); ++r)
    for (std::size_t c = 15; c < w.cols(); ++c) w(r, c) = 0.0f;
  const auto blind = profile_neurons(model, tiny_cam(16), 30, 12.0, tiny_opt());
  for (std::size_t k = 0; k < 64; ++k) {
    for (std::size_t q = 1; q < 30; ++q) CHECK(blind.a(k, q) == blind.a(k, 0));
  }
  const auto c = classify_neurons(blind, 0.5, kTau2Default);
  CHECK(std::count(c.freeze_mask.begin(), c.freeze_mask.end(), 1) == 64);
  // with τ2 below every live neuron the labels come from condition 1 alone
  const auto c1 = classify_neurons(blind, 0.5, -1.0);
  for (std::size_t k = 0; k < 64; ++k)
    if (blind.stats[k].mean > 0) CHECK(c1.labels[k] == NeuronLabel::ViewDependent);

  const Image a = render_neuron_activation(model, tiny_cam(16), 3, swept_direction(tiny_cam(16), 0), tiny_opt());
  const Image b = render_neuron_activation(model, tiny_cam(16), 3, swept_direction(tiny_cam(16), 77), tiny_opt());
  CHECK(a.data == b.data);
  CHECK_THROWS_AS(render_neuron_activation(model, tiny_cam(16), 64), UsageError);
}

TEST_CASE("calibrate_tau2 is a fraction of the median mean") {
  std::vector<std::vector<float>> rows;
  for (int k = 0; k < 5; ++k) rows.push_back(std::vector<float>(4, static_cast<float>(k + 1)));
  for (int k = 0; k < 4; ++k) rows.push_back(std::vector<float>(4, 0.0f));  // dead, ignored
  CHECK(calibrate_tau2(profile_of(rows), 0.5) == 1.5);
  CHECK_THROWS_AS(calibrate_tau2(profile_of({std::vector<float>(4, 0.0f)}), 0.5), UsageError);
}

TEST_CASE("fit_edit: freeze soundness, parameter budgets, progress") {
  const auto model = test::tiny_model<float>(5);
  const auto cache = build_fit_cache(model, tiny_cam(16), tiny_opt());
  // target: base render with a hue shift on the left half
  Image base(16, 16);
  for (std::size_t px = 0; px < cache.pixels(); ++px) {
    std::array<double, 3> acc{};
    for (auto s = cache.begin[px]; s < cache.begin[px + 1]; ++s)
      for (std::size_t c = 0; c < 3; ++c) acc[c] += cache.weight[s] * cache.rgb(s, c);
    for (std::size_t c = 0; c < 3; ++c)
      base.data[3 * px + c] = static_cast<float>(acc[c] + cache.offset(px, c));
  }
  std::vector<std::uint8_t> mask(256, 0);
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 8; ++x) mask[static_cast<std::size_t>(y * 16 + x)] = 1;
  const Image target = hsv_shift_image(base, mask, 120, 0, 0);

  std::vector<std::uint8_t> freeze(64, 0);
  for (std::size_t k = 0; k < 64; k += 3) freeze[k] = 1;
  EditConfig cfg;
  cfg.iterations = 40;
  cfg.lr = 0.05;
  int progress_calls = 0, publish_calls = 0;
  FitCallbacks cb;
  cb.progress = [&](const FitProgress&) { ++progress_calls; };
  cb.publish = [&](const EditOverlay&) { ++publish_calls; };
  const FitResult fit = fit_edit(model, cache, target, cfg, freeze, cb);
  REQUIRE_FALSE(fit.failed);
  CHECK(progress_calls == 2);
  CHECK(publish_calls == 2);
  CHECK(fit.losses.size() == 40);
  CHECK(fit.losses.back() < fit.losses.front());
  const auto& w0 = model.color.last.weight.value;
  const auto& w1 = fit.overlay.last_weight;
  bool free_moved = false;
  for (std::size_t r = 0; r < 3; ++r)
    for (std::size_t k = 0; k < 64; ++k) {
      if (freeze[k]) CHECK(w1(r, k) == w0(r, k));
      else free_moved = free_moved || w1(r, k) != w0(r, k);
    }
  CHECK(free_moved);
  CHECK(fit.overlay.last_bias.storage() == model.color.last.bias.value.storage());

  const std::size_t seg_params = 32 * 64 + 64 + 64 + 1;
  const auto count = [&](EditVariant v) {
    EditConfig c = cfg;
    c.variant = v;
    c.iterations = 1;
    return fit_edit(model, cache, target, c, freeze).trainable_params;
  };
  const std::size_t full = count(EditVariant::FullMlp), last = count(EditVariant::LastLayer),
                    soft = count(EditVariant::SoftSeg);
  CHECK(fit.trainable_params == 3 * (64 - 22) + seg_params);
  CHECK(last == 64 * 3);  // the output bias stays frozen
  CHECK(soft == 64 * 3 + seg_params);
  CHECK(fit.trainable_params <= 64 * 3 + seg_params);
  CHECK(full > soft);
  CHECK_THROWS_AS(fit_edit(model, cache, Image(8, 8), cfg, freeze), DimensionError);
}

TEST_CASE("fit_edit with zero iterations leaves renders unchanged") {
  const auto model = test::tiny_model<float>(6);
  const Camera cam = tiny_cam(16);
  const auto cache = build_fit_cache(model, cam, tiny_opt());
  const Image base = render_image(model, cam, tiny_opt()).image();
  for (auto v : {EditVariant::FullMlp, EditVariant::LastLayer, EditVariant::SoftSeg, EditVariant::Irene}) {
    EditConfig cfg;
    cfg.variant = v;
    cfg.iterations = 0;
    const FitResult fit = fit_edit(model, cache, base, cfg, std::vector<std::uint8_t>(64, 0));
    const Image r = render_image(model, cam, tiny_opt(), &fit.overlay).image();
    double worst = 0;
    for (std::size_t i = 0; i < r.data.size(); ++i) worst = std::max(worst, double(std::abs(r.data[i] - base.data[i])));
    CHECK(worst <= 1e-6);
  }
}

TEST_CASE("synthesize_edit applies the shift inside the mask only") {
  Image img(4, 1);
  for (int x = 0; x < 4; ++x) img.at(x, 0, 0) = 1.0f;  // red
  const std::vector<std::uint8_t> mask{1, 0, 1, 0};
  const Image out = synthesize_edit(img, mask, 120, 0, 0);
  CHECK(out.at(0, 0, 1) == doctest::Approx(1.0f));
  CHECK(out.at(1, 0, 0) == 1.0f);
  CHECK(out.at(1, 0, 1) == 0.0f);
}

TEST_CASE("the tau2 default matches the recorded calibration") {
  std::ifstream in(std::string(IRENE_SOURCE_DIR) + "/fixtures/calibration.json");
  REQUIRE(in);
  const auto j = nlohmann::json::parse(in);
  CHECK(j.at("tau2").at("value").get<double>() == kTau2Default);
  CHECK(j.at("tau2").at("published").get<double>() == kTau2Published);
  CHECK(EditConfig{}.tau2 == kTau2Default);
}

TEST_CASE("fit cache reproduces the base render") {
  const auto model = test::tiny_model<float>(7);
  const Camera cam = tiny_cam(16);
  const auto cache = build_fit_cache(model, cam, tiny_opt());
  const Image ref = render_image(model, cam, tiny_opt()).image();
  double worst = 0;
  for (std::size_t px = 0; px < cache.pixels(); ++px) {
    for (std::size_t c = 0; c < 3; ++c) {
      double v = cache.offset(px, c);
      for (auto s = cache.begin[px]; s < cache.begin[px + 1]; ++s) v += cache.weight[s] * cache.rgb(s, c);
      worst = std::max(worst, std::abs(v - ref.data[3 * px + c]));
    }
  }
  CHECK(worst <= 1e-5);
  for (float w : cache.weight) CHECK(w >= kFitMinWeight);
  CHECK(cache.pruned_weight_max < 0.01);
}
