// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/trainer.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <random>

#include "irene/adam.hpp"
#include "irene/eval.hpp"
#include "irene/parallel.hpp"

namespace irene {

namespace {

using json = nlohmann::json;
using Tape = GradTape<float>;

constexpr std::size_t kTrainChunk = 256;
constexpr int kOccupancyWarmup = 128;
constexpr int kOccupancyEvery = 16;

struct ChunkStats {
  double loss_sum = 0;
};

/// Forward + backward for one chunk of rays; parameter gradients accumulate
/// into the model's Param::grad buffers (scaled by 1/total_rays).
ChunkStats train_chunk(FieldModel<float>& model, std::span<const Ray> rays, std::span<const std::uint32_t> ids,
                       std::span<const float> targets, const RenderOptions& opt, std::uint64_t iteration,
                       std::size_t total_rays, Tensor2<float>& table_grad) {
  const SampleBatch batch = sample_rays(model, rays, ids, opt, iteration);
  const std::size_t n = batch.positions.rows();
  ChunkStats st;
  const auto& bg = opt.background;
  const float inv_total = 1.0f / static_cast<float>(total_rays);
  if (n == 0) {
    for (std::size_t r = 0; r < rays.size(); ++r)
      for (std::size_t c = 0; c < 3; ++c) {
        const double d = bg[c] - targets[3 * r + c];
        st.loss_sum += d * d;
      }
    return st;
  }

  Tape tape;
  const auto f = tape.leaf(model.grid.encode_batch(batch.positions), true);
  const auto d0 = tape.relu(model.density.l0.record(tape, f));
  const auto d1 = model.density.l1.record(tape, d0);
  const auto sig = tape.exp_clamped(tape.slice(d1, 0, 1), -kDensityClamp, kDensityClamp);
  const auto h = tape.slice(d1, 1, 1 + kGeoFeatures);
  const Tensor2<float>& sigma = tape.value(sig);

  // live prefix per ray
  std::vector<std::uint32_t> live;
  std::vector<std::uint32_t> live_begin(rays.size() + 1, 0);
  std::vector<float> residual(rays.size(), 1.0f);
  std::vector<float> w(static_cast<std::size_t>(opt.samples_per_ray));
  for (std::size_t r = 0; r < rays.size(); ++r) {
    live_begin[r] = static_cast<std::uint32_t>(live.size());
    const std::size_t b0 = batch.ray_begin[r], cnt = batch.ray_begin[r + 1] - b0;
    if (cnt == 0) continue;
    const std::size_t used = transmittance_walk<float>(std::span<const float>(sigma.data() + b0, cnt),
                                                       std::span<const float>(batch.delta.data() + b0, cnt),
                                                       opt.termination, w, residual[r]);
    for (std::size_t s = 0; s < used; ++s) live.push_back(static_cast<std::uint32_t>(b0 + s));
  }
  live_begin[rays.size()] = static_cast<std::uint32_t>(live.size());

  Tensor2<float> sh(live.size(), kShCoeffs);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto coeffs = sh_encode<float>(std::span<const float, 3>(rays[r].dir.data(), 3));
    for (std::size_t i = live_begin[r]; i < live_begin[r + 1]; ++i) std::copy(coeffs.begin(), coeffs.end(), sh.row(i).data());
  }
  const auto hl = tape.gather_rows(h, live);
  const auto x = tape.concat(hl, tape.leaf(std::move(sh)));
  const auto c0 = tape.relu(model.color.l0.record(tape, x));
  const auto c1 = tape.relu(model.color.l1.record(tape, c0));
  const auto rgb = tape.sigmoid(model.color.last.record(tape, c1));
  const Tensor2<float>& colors = tape.value(rgb);

  Tensor2<float> g_sigma(n, 1), g_rgb(live.size(), 3);
  std::vector<float> s_pref, d_pref, c_pref, gs, gc;
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const std::size_t b0 = batch.ray_begin[r];
    const std::size_t l0 = live_begin[r], cnt = live_begin[r + 1] - l0;
    s_pref.assign(sigma.data() + b0, sigma.data() + b0 + cnt);
    d_pref.assign(batch.delta.data() + b0, batch.delta.data() + b0 + cnt);
    c_pref.assign(colors.data() + 3 * l0, colors.data() + 3 * (l0 + cnt));
    const auto comp = composite<float>(s_pref, c_pref, d_pref, bg);
    std::array<float, 3> g{};
    for (std::size_t c = 0; c < 3; ++c) {
      const float d = comp.rgb[c] - targets[3 * r + c];
      st.loss_sum += static_cast<double>(d) * d;
      g[c] = 2.0f * d * inv_total;
    }
    if (cnt == 0) continue;
    gs.assign(cnt, 0.0f);
    gc.assign(3 * cnt, 0.0f);
    composite_backward<float>(s_pref, c_pref, d_pref, bg, g, gs, gc);
    for (std::size_t s = 0; s < cnt; ++s) {
      g_sigma(b0 + s, 0) = gs[s];
      for (std::size_t c = 0; c < 3; ++c) g_rgb(l0 + s, c) = gc[3 * s + c];
    }
  }
  if (!std::isfinite(st.loss_sum)) throw NanError("non-finite training loss");

  const Tape::Seed seeds[] = {{sig, &g_sigma}, {rgb, &g_rgb}};
  tape.backward(seeds);
  const Tensor2<float>& gf = tape.grad(f);
  if (!gf.empty()) model.grid.encode_backward_batch(batch.positions, gf, table_grad);
  return st;
}

}  // namespace

RenderOptions render_options_from(const json& config) {
  RenderOptions opt;
  if (config.contains("render")) {
    const auto& r = config.at("render");
    opt.samples_per_ray = r.value("samples_per_ray", kDefaultSamplesPerRay);
    if (r.contains("background")) opt.background = r.at("background").get<std::array<float, 3>>();
  }
  return opt;
}

Camera edit_camera_from(const json& config) {
  if (!config.contains("edit_camera")) throw FormatError("checkpoint config has no edit camera");
  return camera_from_json(config.at("edit_camera"));
}

json bundle_config(const DatasetBundle& bundle, const PretrainConfig& cfg) {
  const auto& m = bundle.manifest;
  return json{{"render",
               {{"samples_per_ray", cfg.samples_per_ray},
                {"background", {bundle.background[0], bundle.background[1], bundle.background[2]}}}},
              {"edit_view", bundle.edited_view},
              {"edit_camera", camera_to_json(bundle.view(bundle.edited_view).camera)},
              {"scene",
               {{"name", m.at("scene").at("name")},
                {"family", m.at("scene").at("family")},
                {"scene_hash", m.at("scene_hash")}}},
              {"pretrain",
               {{"iterations", cfg.iterations},
                {"batch_rays", cfg.batch_rays},
                {"lr", cfg.lr},
                {"seed", cfg.seed},
                {"samples_per_ray", cfg.samples_per_ray}}}};
}

PretrainResult pretrain(const DatasetBundle& bundle, const PretrainConfig& cfg, const TrainProgress& progress) {
  if (cfg.iterations < 0) throw UsageError("pretrain: iterations must be >= 0");
  if (cfg.batch_rays < 1) throw UsageError("pretrain: batch_rays must be >= 1");
  if (!(cfg.lr > 0)) throw UsageError("pretrain: lr must be positive");
  if (bundle.train.empty()) throw UsageError("pretrain: bundle has no training views");
  const auto t_start = std::chrono::steady_clock::now();
  retain_heap_memory();

  ModelConfig mc;
  mc.grid = cfg.grid;
  mc.bounds = bundle.bounds;
  mc.seed = cfg.seed;
  PretrainResult res;
  res.checkpoint.model = FieldModel<float>(mc);
  FieldModel<float>& model = res.checkpoint.model;
  model.initialize();
  res.checkpoint.config = bundle_config(bundle, cfg);

  std::vector<Image> images;
  images.reserve(bundle.train.size());
  for (const auto& v : bundle.train) images.push_back(bundle.rgb(v.name));
  std::vector<Image> eval_images;
  if (cfg.eval_every > 0)
    for (const auto& v : bundle.eval) eval_images.push_back(bundle.rgb(v.name));

  RenderOptions opt = render_options_from(res.checkpoint.config);
  opt.jitter = true;
  opt.jitter_seed = cfg.seed;

  auto params = model.backbone_params();
  std::vector<AdamState<float>> states;
  for (auto* p : params) states.emplace_back(p->value.size(), AdamOptions{cfg.lr, 0.9, 0.99, 1e-15});

  std::mt19937_64 rng(cfg.seed ^ 0xA5A5A5A5ull);
  const auto n_views = images.size();
  std::vector<Ray> rays(static_cast<std::size_t>(cfg.batch_rays));
  std::vector<std::uint32_t> ids(rays.size());
  std::vector<float> targets(3 * rays.size());
  double window_loss = 0;
  int window_n = 0;

  for (int it = 0; it < cfg.iterations; ++it) {
    double lr = cfg.lr;
    if (it >= cfg.iterations / 2) lr *= 0.33;
    if (it >= (cfg.iterations * 3) / 4) lr *= 0.33;
    for (auto& s : states) s.options.lr = lr;

    for (std::size_t r = 0; r < rays.size(); ++r) {
      const auto v = static_cast<std::size_t>(rng() % n_views);
      const auto& cam = bundle.train[v].camera;
      const auto npix = static_cast<std::uint64_t>(cam.width) * static_cast<std::uint64_t>(cam.height);
      const auto p = static_cast<std::size_t>(rng() % npix);
      rays[r] = pixel_ray(cam, static_cast<int>(p % static_cast<std::size_t>(cam.width)),
                          static_cast<int>(p / static_cast<std::size_t>(cam.width)));
      ids[r] = static_cast<std::uint32_t>(v * npix + p);
      std::copy_n(images[v].data.data() + 3 * p, 3, targets.data() + 3 * r);
    }

    for (auto* p : params) p->zero_grad();
    Tensor2<float> table_grad(model.grid.tables().value.rows(), model.grid.tables().value.cols());
    double loss_sum = 0;
    try {
      for (std::size_t c0 = 0; c0 < rays.size(); c0 += kTrainChunk) {
        const std::size_t cn = std::min(kTrainChunk, rays.size() - c0);
        loss_sum += train_chunk(model, std::span<const Ray>(rays).subspan(c0, cn),
                                std::span<const std::uint32_t>(ids).subspan(c0, cn),
                                std::span<const float>(targets).subspan(3 * c0, 3 * cn), opt,
                                static_cast<std::uint64_t>(it), rays.size(), table_grad)
                        .loss_sum;
      }
      model.grid.tables().grad = std::move(table_grad);
      // verify every block before touching any parameter
      for (auto* p : params) {
        if (p->has_grad() && !p->grad.all_finite()) throw NanError("non-finite gradient in parameter block '" + p->name + "'");
      }
    } catch (const NanError& e) {
      res.diverged = true;
      res.error = std::string(e.what()) + " at iteration " + std::to_string(it);
      break;
    }
    for (std::size_t i = 0; i < params.size(); ++i) adam_step(*params[i], states[i]);
    if (it + 1 >= kOccupancyWarmup && (it + 1) % kOccupancyEvery == 0) {
      refresh_occupancy(model, cfg.seed ^ static_cast<std::uint64_t>(it + 1));
    }

    const double loss = loss_sum / static_cast<double>(rays.size());
    window_loss += loss;
    ++window_n;
    const bool last = it + 1 == cfg.iterations;
    const bool do_eval = cfg.eval_every > 0 && ((it + 1) % cfg.eval_every == 0 || last);
    if ((cfg.log_every > 0 && (it + 1) % cfg.log_every == 0) || last || do_eval) {
      TrainLogRow row;
      row.iter = it + 1;
      row.loss = window_loss / window_n;
      row.psnr = -10.0 * std::log10(std::max(row.loss / 3.0, 1e-10));
      if (do_eval) {
        double acc = 0;
        for (const auto& s : evaluate(model, bundle.eval, eval_images, render_options_from(res.checkpoint.config)))
          acc += s.psnr;
        row.eval_psnr = acc / static_cast<double>(bundle.eval.size());
      }
      res.log.push_back(row);
      if (progress) progress(row);
      window_loss = 0;
      window_n = 0;
    }
  }
  for (auto* p : params) p->zero_grad();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "iter,loss,psnr,eval_psnr\n";
  for (const auto& r : log) f << r.iter << ',' << r.loss << ',' << r.psnr << ',' << r.eval_psnr << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

std::vector<ViewScore> evaluate(const FieldModel<float>& model, const std::vector<ViewRecord>& views,
                                const std::vector<Image>& targets, const RenderOptions& opt,
                                const EditOverlay* overlay) {
  if (views.size() != targets.size()) throw DimensionError("evaluate: one target image per view");
  std::vector<ViewScore> out;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const Image img = render_image(model, views[i].camera, opt, overlay).image();
    out.push_back({views[i].name, psnr(img, targets[i]), ssim(img, targets[i])});
  }
  return out;
}

std::vector<ViewScore> evaluate(const Checkpoint& ck, const DatasetBundle& bundle) {
  std::vector<Image> targets;
  for (const auto& v : bundle.eval) targets.push_back(bundle.rgb(v.name));
  return evaluate(ck.model, bundle.eval, targets, render_options_from(ck.config));
}

}  // namespace irene
