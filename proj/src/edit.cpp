// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/edit.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "irene/adam.hpp"
#include "irene/color.hpp"
#include "irene/parallel.hpp"

namespace irene {

namespace {

using json = nlohmann::json;
using Tape = GradTape<float>;

constexpr std::size_t kCacheChunk = 256;
constexpr std::size_t kFitChunkRays = 2048;
constexpr std::size_t kProfileBlock = 1u << 15;

void append_rows(Tensor2<float>& dst, const Tensor2<float>& src) {
  if (src.rows() == 0) return;
  const std::size_t cols = src.cols();
  if (dst.empty()) dst = Tensor2<float>(0, cols);
  auto& v = dst.storage();
  v.insert(v.end(), src.storage().begin(), src.storage().end());
  dst = Tensor2<float>(dst.rows() + src.rows(), cols, std::move(v));
}

Tensor2<float> gather(const Tensor2<float>& src, const std::vector<std::uint32_t>& rows) {
  Tensor2<float> out(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) std::copy_n(src.row(rows[i]).data(), src.cols(), out.row(i).data());
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

void EditConfig::validate() const {
  if (!(tau1 > 0)) throw UsageError("edit config: tau1 must be > 0");
  if (q < 2) throw UsageError("edit config: Q must be >= 2");
  if (iterations < 0) throw UsageError("edit config: iterations must be >= 0");
  if (!(lr > 0)) throw UsageError("edit config: lr must be > 0");
  if (rays_per_iter < 1) throw UsageError("edit config: rays_per_iter must be >= 1");
  if (progress_every < 1) throw UsageError("edit config: progress_every must be >= 1");
}

json edit_config_to_json(const EditConfig& c) {
  return json{{"tau1", c.tau1},
              {"tau2", c.tau2},
              {"tau2_paper", kTau2Published},
              {"q", c.q},
              {"iterations", c.iterations},
              {"lr", c.lr},
              {"rays_per_iter", c.rays_per_iter},
              {"variant", to_string(c.variant)},
              {"invert_condition1", c.invert_condition1},
              {"seg_init_bias", c.seg_init_bias},
              {"seed", c.seed},
              {"progress_every", c.progress_every}};
}

EditConfig edit_config_from_json(const json& j, EditConfig c) {
  if (!j.is_object()) throw UsageError("edit config must be a JSON object");
  try {
    for (const auto& [key, v] : j.items()) {
      if (key == "tau1") c.tau1 = v.get<double>();
      else if (key == "tau2") c.tau2 = v.get<double>();
      else if (key == "tau2_paper") continue;  // informational
      else if (key == "q") c.q = v.get<int>();
      else if (key == "iterations") c.iterations = v.get<int>();
      else if (key == "lr") c.lr = v.get<double>();
      else if (key == "rays_per_iter") c.rays_per_iter = v.get<int>();
      else if (key == "variant") c.variant = parse_variant(v.get<std::string>());
      else if (key == "invert_condition1") c.invert_condition1 = v.get<bool>();
      else if (key == "seg_init_bias") c.seg_init_bias = v.get<double>();
      else if (key == "seed") c.seed = v.get<std::uint64_t>();
      else if (key == "progress_every") c.progress_every = v.get<int>();
      else throw UsageError("edit config: unknown key '" + key + "'");
    }
  } catch (const json::exception& e) {
    throw UsageError(std::string("edit config: ") + e.what());
  }
  c.validate();
  return c;
}

std::string to_string(NeuronLabel l) { return l == NeuronLabel::Diffuse ? "diffuse" : "view-dependent"; }

// ---------------------------------------------------------------------------

std::vector<NeuronStats> profile_stats(const Tensor2<float>& a) {
  std::vector<NeuronStats> out(a.rows());
  const auto q = static_cast<double>(a.cols());
  for (std::size_t k = 0; k < a.rows(); ++k) {
    double sum = 0, mn = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < a.cols(); ++j) {
      sum += a(k, j);
      mn = std::min(mn, static_cast<double>(a(k, j)));
    }
    const double mean = sum / q;
    double var = 0;
    for (std::size_t j = 0; j < a.cols(); ++j) var += (a(k, j) - mean) * (a(k, j) - mean);
    out[k] = {mean, std::sqrt(var / q), mn};
  }
  return out;
}

NeuronLabel classify_neuron(const NeuronStats& s, double tau1, double tau2, bool invert_condition1) {
  if (!std::isfinite(s.mean) || !std::isfinite(s.std) || !std::isfinite(s.min)) {
    throw NanError("classify_neurons: non-finite profile statistics");
  }
  if (s.min <= tau2) return NeuronLabel::ViewDependent;
  if (s.mean <= 0) return NeuronLabel::ViewDependent;
  const double ratio = s.std / s.mean;
  const bool cond1 = invert_condition1 ? ratio >= tau1 : ratio < tau1;
  return cond1 ? NeuronLabel::ViewDependent : NeuronLabel::Diffuse;
}

Classification classify_neurons(const NeuronProfile& p, double tau1, double tau2, bool invert_condition1) {
  Classification c;
  for (const auto& s : p.stats) {
    const NeuronLabel l = classify_neuron(s, tau1, tau2, invert_condition1);
    c.labels.push_back(l);
    c.freeze_mask.push_back(l == NeuronLabel::ViewDependent ? 1 : 0);
  }
  return c;
}

std::array<float, 3> blend(float alpha, const std::array<float, 3>& c_edit, const std::array<float, 3>& c_base,
                           BlendDiagnostics* diag) {
  if (!(alpha >= 0.0f && alpha <= 1.0f)) {
    if (diag) ++diag->clamped;
    alpha = alpha > 1.0f ? 1.0f : 0.0f;
  }
  return {std::lerp(c_base[0], c_edit[0], alpha), std::lerp(c_base[1], c_edit[1], alpha),
          std::lerp(c_base[2], c_edit[2], alpha)};
}

// ---------------------------------------------------------------------------

FitCache build_fit_cache(const FieldModel<float>& model, const Camera& camera, const RenderOptions& opt) {
  camera.validate();
  RenderOptions o = opt;
  o.jitter = false;
  o.direction_override.reset();
  FitCache c;
  c.width = camera.width;
  c.height = camera.height;
  c.camera = camera;
  c.background = o.background;
  const std::size_t n_pix = static_cast<std::size_t>(camera.width) * camera.height;
  c.begin.push_back(0);
  c.ray_sh = Tensor2<float>(n_pix, kShCoeffs);
  c.offset = Tensor2<float>(n_pix, 3);
  for (std::size_t p0 = 0; p0 < n_pix; p0 += kCacheChunk) {
    const std::size_t p1 = std::min(n_pix, p0 + kCacheChunk);
    std::vector<Ray> rays;
    std::vector<std::uint32_t> ids;
    for (std::size_t p = p0; p < p1; ++p) {
      rays.push_back(pixel_ray(camera, static_cast<int>(p % camera.width), static_cast<int>(p / camera.width)));
      ids.push_back(static_cast<std::uint32_t>(p));
      const auto sh = sh_encode<float>(std::span<const float, 3>(rays.back().dir.data(), 3));
      std::copy(sh.begin(), sh.end(), c.ray_sh.row(p).data());
    }
    RayTrace tr = trace_rays(model, rays, ids, o);
    // samples below kFitMinWeight are folded into the pixel's constant at their base color
    std::vector<std::uint32_t> keep;
    for (std::size_t r = 0; r < rays.size(); ++r) {
      const std::size_t p = p0 + r;
      double pruned = 0;
      for (std::uint32_t s = tr.begin[r]; s < tr.begin[r + 1]; ++s) {
        const float w = tr.weight[s];
        if (w >= kFitMinWeight) {
          keep.push_back(s);
          continue;
        }
        pruned += w;
        for (std::size_t ch = 0; ch < 3; ++ch) c.offset(p, ch) += w * tr.rgb(s, ch);
      }
      for (std::size_t ch = 0; ch < 3; ++ch) c.offset(p, ch) += tr.residual[r] * o.background[ch];
      c.pruned_weight_max = std::max(c.pruned_weight_max, pruned);
      c.begin.push_back(static_cast<std::uint32_t>(c.weight.size() + keep.size()));
    }
    for (auto s : keep) c.weight.push_back(tr.weight[s]);
    c.residual.insert(c.residual.end(), tr.residual.begin(), tr.residual.end());
    append_rows(c.features, gather(tr.features, keep));
    append_rows(c.h, gather(tr.h, keep));
    append_rows(c.hbar, gather(tr.hbar, keep));
    append_rows(c.rgb, gather(tr.rgb, keep));
  }
  return c;
}

std::pair<double, double> view_angles(const Camera& camera) {
  const Vec3 f = normalized(camera.forward());
  return {std::atan2(f[1], f[0]), std::asin(std::clamp(f[2], -1.0, 1.0))};
}

double sweep_step_deg(int q, bool forward_facing) {
  if (q < 2) throw UsageError("profile: Q must be >= 2");
  return (forward_facing ? 180.0 : 360.0) / q;
}

std::array<float, 3> swept_direction(const Camera& camera, double deg) {
  const Vec3 f = normalized(camera.forward());
  const double a = deg * std::numbers::pi / 180.0;
  const double ca = std::cos(a), sa = std::sin(a);
  return {static_cast<float>(f[0] * ca - f[1] * sa), static_cast<float>(f[0] * sa + f[1] * ca),
          static_cast<float>(f[2])};
}

NeuronProfile profile_neurons(const FieldModel<float>& model, const FitCache& cache, int q, double psi_deg) {
  if (q < 2) throw UsageError("profile: Q must be >= 2");
  NeuronProfile p;
  p.q = q;
  p.psi_deg = psi_deg;
  std::tie(p.azimuth0_rad, p.elevation_rad) = view_angles(cache.camera);
  p.a = Tensor2<float>(kHiddenWidth, static_cast<std::size_t>(q));

  double opacity = 0;
  for (std::size_t s = 0; s < cache.samples(); ++s) opacity += cache.weight[s];
  const std::size_t n = cache.samples();
  const std::size_t n_pix = cache.pixels();
  // pixel of each sample
  std::vector<std::uint32_t> owner(n);
  for (std::size_t px = 0; px < n_pix; ++px)
    for (std::size_t s = cache.begin[px]; s < cache.begin[px + 1]; ++s) owner[s] = static_cast<std::uint32_t>(px);

  parallel_for(static_cast<std::size_t>(q), [&](std::size_t j, int) {
    const auto dir = swept_direction(cache.camera, static_cast<double>(j) * psi_deg);
    const auto sh = sh_encode<float>(std::span<const float, 3>(dir.data(), 3));
    std::vector<double> pix(n_pix * kHiddenWidth, 0.0);
    for (std::size_t b0 = 0; b0 < n; b0 += kProfileBlock) {
      const std::size_t bn = std::min(kProfileBlock, n - b0);
      Tensor2<float> h(bn, kGeoFeatures), shs(bn, kShCoeffs);
      std::copy_n(cache.h.row(b0).data(), bn * kGeoFeatures, h.data());
      for (std::size_t i = 0; i < bn; ++i) std::copy(sh.begin(), sh.end(), shs.row(i).data());
      const Tensor2<float> hbar = penultimate_forward(model.color, h, shs);
      for (std::size_t i = 0; i < bn; ++i) {
        const double w = cache.weight[b0 + i];
        double* dst = pix.data() + static_cast<std::size_t>(owner[b0 + i]) * kHiddenWidth;
        for (std::size_t k = 0; k < kHiddenWidth; ++k) dst[k] += w * hbar(i, k);
      }
    }
    for (std::size_t k = 0; k < kHiddenWidth; ++k) {
      double acc = 0;
      for (std::size_t px = 0; px < n_pix; ++px) acc += std::abs(pix[px * kHiddenWidth + k]);
      p.a(k, j) = static_cast<float>(opacity > 0 ? acc / opacity : 0.0);
    }
  });
  p.stats = profile_stats(p.a);
  return p;
}

NeuronProfile profile_neurons(const FieldModel<float>& model, const Camera& camera, int q, double psi_deg,
                              const RenderOptions& opt) {
  return profile_neurons(model, build_fit_cache(model, camera, opt), q, psi_deg);
}

void write_profile_csv(const std::filesystem::path& path, const NeuronProfile& p) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "neuron,q,activation\n";
  f.precision(9);
  for (std::size_t k = 0; k < p.a.rows(); ++k)
    for (std::size_t j = 0; j < p.a.cols(); ++j) f << k << ',' << j << ',' << p.a(k, j) << '\n';
  if (!f) throw IoError("write failed: " + path.string());
}

json labels_json(const NeuronProfile& p, const Classification& c, double tau1, double tau2, bool invert_condition1) {
  json neurons = json::array();
  for (std::size_t k = 0; k < p.stats.size(); ++k) {
    neurons.push_back({{"k", k},
                       {"mean", p.stats[k].mean},
                       {"std", p.stats[k].std},
                       {"min", p.stats[k].min},
                       {"label", to_string(c.labels[k])}});
  }
  return json{{"tau1", tau1},
              {"tau2", tau2},
              {"tau2_paper", kTau2Published},
              {"invert_condition1", invert_condition1},
              {"q", p.q},
              {"psi_deg", p.psi_deg},
              {"elevation_rad", p.elevation_rad},
              {"neurons", neurons}};
}

double calibrate_tau2(const NeuronProfile& p, double fraction) {
  if (p.stats.empty()) throw UsageError("calibrate_tau2: empty profile");
  std::vector<double> means;
  for (const auto& s : p.stats)
    if (s.mean > 0) means.push_back(s.mean);
  if (means.empty()) throw UsageError("calibrate_tau2: every neuron is dead");
  std::nth_element(means.begin(), means.begin() + static_cast<std::ptrdiff_t>(means.size() / 2), means.end());
  return fraction * means[means.size() / 2];
}

// ---------------------------------------------------------------------------

FitResult fit_edit(const FieldModel<float>& model, const FitCache& cache, const Image& target, const EditConfig& cfg,
                   const std::vector<std::uint8_t>& freeze_mask, const FitCallbacks& cb) {
  cfg.validate();
  if (target.width != cache.width || target.height != cache.height || target.channels != 3) {
    throw DimensionError("fit_edit: edit image is " + std::to_string(target.width) + "x" +
                         std::to_string(target.height) + ", expected " + std::to_string(cache.width) + "x" +
                         std::to_string(cache.height) + " RGB");
  }
  const bool irene = cfg.variant == EditVariant::Irene;
  if (irene && freeze_mask.size() != kHiddenWidth) {
    throw UsageError("fit_edit: the irene variant needs a 64-entry freeze mask from profiling");
  }
  retain_heap_memory();
  const auto t0 = std::chrono::steady_clock::now();

  FitResult res;
  res.freeze_mask.assign(kHiddenWidth, 0);
  if (irene) res.freeze_mask = freeze_mask;

  const bool full = cfg.variant == EditVariant::FullMlp;
  const bool seg_on = uses_segmentation(cfg.variant);

  LastLayerClone<float> clone = clone_last_layer(model.color);
  DenseLayer<float>& last = clone.trainable;
  ColorMlp<float> color_clone = model.color;
  SegMlp<float> seg;
  std::vector<Param<float>*> params;
  if (full) {
    for (auto* l : {&color_clone.l0, &color_clone.l1, &color_clone.last}) {
      l->weight.name = "edit.color." + l->weight.name.substr(l->weight.name.find('.') + 1);
      l->bias.name = "edit.color." + l->bias.name.substr(l->bias.name.find('.') + 1);
      l->set_frozen(false);
      params.push_back(&l->weight);
      params.push_back(&l->bias);
    }
  } else {
    last.bias.frozen = true;
    if (irene) last.weight.frozen_cols = freeze_mask;
    params.push_back(&last.weight);
  }
  if (seg_on) {
    seg.l0 = DenseLayer<float>("edit.seg.l0", static_cast<std::size_t>(model.grid.output_dim()), kHiddenWidth);
    seg.l1 = DenseLayer<float>("edit.seg.l1", kHiddenWidth, 1);
    std::mt19937_64 rng(cfg.seed ^ 0x5E65EEDull);
    seg.l0.initialize(rng);
    seg.l1.initialize(rng);
    seg.l1.bias.value.fill(static_cast<float>(cfg.seg_init_bias));
    for (auto* l : {&seg.l0, &seg.l1}) {
      params.push_back(&l->weight);
      params.push_back(&l->bias);
    }
  }
  for (const auto* p : params) res.trainable_params += p->trainable_count();

  auto make_overlay = [&]() {
    EditOverlay o;
    o.variant = cfg.variant;
    if (full) {
      o.color_clone = color_clone;
      o.last_weight = color_clone.last.weight.value;
      o.last_bias = color_clone.last.bias.value;
    } else {
      o.last_weight = last.weight.value;
      o.last_bias = last.bias.value;
    }
    if (seg_on) o.seg = seg;
    return o;
  };

  std::vector<AdamState<float>> states;
  for (auto* p : params) states.emplace_back(p->value.size(), AdamOptions{cfg.lr, 0.9, 0.999, 1e-8});

  const std::size_t n_pix = cache.pixels();
  const std::size_t batch = std::min(n_pix, static_cast<std::size_t>(cfg.rays_per_iter));
  std::vector<std::uint32_t> order(n_pix);
  std::iota(order.begin(), order.end(), 0u);
  std::mt19937_64 rng(cfg.seed);

  for (int it = 0; it < cfg.iterations; ++it) {
    if (batch < n_pix) {
      for (std::size_t i = 0; i < batch; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, n_pix - 1);
        std::swap(order[i], order[pick(rng)]);
      }
    }
    for (auto* p : params) p->zero_grad();
    double loss_sum = 0;
    try {
      for (std::size_t c0 = 0; c0 < batch; c0 += kFitChunkRays) {
        const std::size_t cn = std::min(kFitChunkRays, batch - c0);
        std::vector<std::uint32_t> rows, ray_of;
        for (std::size_t r = 0; r < cn; ++r) {
          const std::uint32_t px = order[c0 + r];
          for (std::uint32_t s = cache.begin[px]; s < cache.begin[px + 1]; ++s) {
            rows.push_back(s);
            ray_of.push_back(static_cast<std::uint32_t>(r));
          }
        }
        // composite of the chunk; rays without samples still count towards the loss
        std::vector<double> acc(3 * cn, 0.0);
        Tape tape;
        Tape::Var out = 0;
        const bool any = !rows.empty();
        if (any) {
          Tape::Var edited;
          if (full) {
            Tensor2<float> sh(rows.size(), kShCoeffs);
            for (std::size_t i = 0; i < rows.size(); ++i) {
              std::copy_n(cache.ray_sh.row(order[c0 + ray_of[i]]).data(), kShCoeffs, sh.row(i).data());
            }
            const auto x = tape.concat(tape.leaf(gather(cache.h, rows)), tape.leaf(std::move(sh)));
            const auto a0 = tape.relu(color_clone.l0.record(tape, x));
            const auto a1 = tape.relu(color_clone.l1.record(tape, a0));
            edited = tape.sigmoid(color_clone.last.record(tape, a1));
          } else {
            edited = tape.sigmoid(last.record(tape, tape.leaf(gather(cache.hbar, rows))));
          }
          out = edited;
          if (seg_on) {
            const auto s0 = tape.relu(seg.l0.record(tape, tape.leaf(gather(cache.features, rows))));
            const auto alpha = tape.sigmoid(seg.l1.record(tape, s0));
            out = tape.lerp(tape.leaf(gather(cache.rgb, rows)), edited, alpha);
          }
          const Tensor2<float>& col = tape.value(out);
          for (std::size_t i = 0; i < rows.size(); ++i) {
            const double w = cache.weight[rows[i]];
            for (std::size_t c = 0; c < 3; ++c) acc[3 * ray_of[i] + c] += w * col(i, c);
          }
        }
        std::vector<float> g_ray(3 * cn);
        for (std::size_t r = 0; r < cn; ++r) {
          const std::uint32_t px = order[c0 + r];
          for (std::size_t c = 0; c < 3; ++c) {
            const double pred = acc[3 * r + c] + cache.offset(px, c);
            const double d = pred - target.data[3 * px + c];
            loss_sum += d * d;
            g_ray[3 * r + c] = static_cast<float>(2.0 * d / static_cast<double>(batch));
          }
        }
        if (!std::isfinite(loss_sum)) throw NanError("non-finite edit loss");
        if (any) {
          Tensor2<float> g(rows.size(), 3);
          for (std::size_t i = 0; i < rows.size(); ++i) {
            const float w = cache.weight[rows[i]];
            for (std::size_t c = 0; c < 3; ++c) g(i, c) = w * g_ray[3 * ray_of[i] + c];
          }
          tape.backward(out, g);
        }
      }
      for (auto* p : params) {
        if (p->has_grad() && !p->grad.all_finite()) {
          throw NanError("non-finite gradient in parameter block '" + p->name + "'");
        }
      }
    } catch (const NanError& e) {
      res.failed = true;
      res.error = std::string(e.what()) + " at iteration " + std::to_string(it);
      break;
    }
    for (std::size_t i = 0; i < params.size(); ++i) adam_step(*params[i], states[i]);
    const double loss = loss_sum / static_cast<double>(batch);
    res.losses.push_back(loss);
    if ((it + 1) % cfg.progress_every == 0) {
      if (cb.progress) cb.progress({it + 1, loss});
      if (cb.publish) cb.publish(make_overlay());
    }
  }
  for (auto* p : params) p->zero_grad();
  res.overlay = make_overlay();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

// ---------------------------------------------------------------------------

Image render_neuron_activation(const FieldModel<float>& model, const Camera& camera, int k,
                               std::optional<std::array<float, 3>> direction_override, const RenderOptions& opt) {
  if (k < 0 || k >= kHiddenWidth) throw UsageError("neuron index must be in [0, 64)");
  RenderOptions o = opt;
  o.record_hbar = true;
  o.direction_override = direction_override;
  const RenderedImage r = render_image(model, camera, o);
  Image img(camera.width, camera.height, 1);
  float mx = 0;
  for (std::size_t p = 0; p < img.pixel_count(); ++p) {
    img.data[p] = std::abs(r.hbar[p * kHiddenWidth + static_cast<std::size_t>(k)]);
    mx = std::max(mx, img.data[p]);
  }
  if (mx > 0)
    for (auto& v : img.data) v /= mx;
  return img;
}

Image synthesize_edit(const Image& base_render, const std::vector<std::uint8_t>& mask, double dh, double ds,
                      double dv) {
  return hsv_shift_image(base_render, mask, dh, ds, dv);
}

}  // namespace irene
