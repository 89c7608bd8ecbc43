// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/renderer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "irene/parallel.hpp"

namespace irene {

namespace {

constexpr std::size_t kRaysPerChunk = 256;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

float counter_uniform(std::uint64_t seed, std::uint64_t ray, std::uint64_t iteration, std::uint64_t sample) {
  const std::uint64_t h =
      splitmix64(seed ^ splitmix64(ray * 0x9E3779B97F4A7C15ull ^ splitmix64(iteration + (sample << 40))));
  return static_cast<float>(h >> 40) * (1.0f / 16777216.0f);
}

bool intersect_aabb(const Ray& ray, const Aabb& box, float& t0, float& t1) {
  t0 = 0.0f;
  t1 = std::numeric_limits<float>::max();
  for (int d = 0; d < 3; ++d) {
    const auto du = static_cast<std::size_t>(d);
    const float inv = 1.0f / ray.dir[du];
    float ta = (static_cast<float>(box.min[du]) - ray.origin[du]) * inv;
    float tb = (static_cast<float>(box.max[du]) - ray.origin[du]) * inv;
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  return t1 > t0;
}

}  // namespace

// ---------------------------------------------------------------------------

template <class T>
std::size_t transmittance_walk(std::span<const T> sigma, std::span<const T> delta, T termination,
                               std::span<T> weights, T& residual) {
  T trans = T(1);
  std::size_t s = 0;
  for (; s < sigma.size(); ++s) {
    if (trans < termination) break;
    const T a = T(1) - std::exp(-sigma[s] * delta[s]);
    weights[s] = trans * a;
    trans *= T(1) - a;
  }
  residual = trans;
  return s;
}

template <class T>
CompositeResult<T> composite(std::span<const T> sigma, std::span<const T> rgb, std::span<const T> delta,
                             const std::array<T, 3>& background) {
  const std::size_t n = sigma.size();
  if (rgb.size() != 3 * n || delta.size() != n) throw DimensionError("composite: per-sample array lengths");
  for (T d : delta)
    if (d < T(0)) throw UsageError("composite: negative interval length");
  CompositeResult<T> out;
  out.weights.assign(n, T(0));
  const std::size_t live = transmittance_walk<T>(sigma, delta, T(0), out.weights, out.transmittance);
  for (std::size_t s = 0; s < live; ++s) {
    for (int c = 0; c < 3; ++c) out.rgb[static_cast<std::size_t>(c)] += out.weights[s] * rgb[3 * s + static_cast<std::size_t>(c)];
    out.opacity += out.weights[s];
  }
  for (int c = 0; c < 3; ++c) out.rgb[static_cast<std::size_t>(c)] += out.transmittance * background[static_cast<std::size_t>(c)];
  return out;
}

template <class T>
void composite_backward(std::span<const T> sigma, std::span<const T> rgb, std::span<const T> delta,
                        const std::array<T, 3>& background, const std::array<T, 3>& grad_rgb,
                        std::span<T> grad_sigma, std::span<T> grad_color) {
  const std::size_t n = sigma.size();
  if (rgb.size() != 3 * n || delta.size() != n || grad_sigma.size() != n || grad_color.size() != 3 * n) {
    throw DimensionError("composite_backward: per-sample array lengths");
  }
  std::vector<T> weights(n, T(0)), trans_after(n, T(0));
  T trans = T(1);
  for (std::size_t s = 0; s < n; ++s) {
    const T a = T(1) - std::exp(-sigma[s] * delta[s]);
    weights[s] = trans * a;
    trans *= T(1) - a;
    trans_after[s] = trans;
  }
  // suffix = Σ_{j>s} w_j c_j + T_final·bg, projected on grad_rgb
  T suffix = trans * (grad_rgb[0] * background[0] + grad_rgb[1] * background[1] + grad_rgb[2] * background[2]);
  for (std::size_t s = n; s-- > 0;) {
    const T gc = grad_rgb[0] * rgb[3 * s] + grad_rgb[1] * rgb[3 * s + 1] + grad_rgb[2] * rgb[3 * s + 2];
    grad_sigma[s] = delta[s] * (trans_after[s] * gc - suffix);
    for (std::size_t c = 0; c < 3; ++c) grad_color[3 * s + c] = weights[s] * grad_rgb[c];
    suffix += weights[s] * gc;
  }
}

template std::size_t transmittance_walk<float>(std::span<const float>, std::span<const float>, float,
                                               std::span<float>, float&);
template std::size_t transmittance_walk<double>(std::span<const double>, std::span<const double>, double,
                                                std::span<double>, double&);
template CompositeResult<float> composite<float>(std::span<const float>, std::span<const float>,
                                                 std::span<const float>, const std::array<float, 3>&);
template CompositeResult<double> composite<double>(std::span<const double>, std::span<const double>,
                                                   std::span<const double>, const std::array<double, 3>&);
template void composite_backward<float>(std::span<const float>, std::span<const float>, std::span<const float>,
                                        const std::array<float, 3>&, const std::array<float, 3>&,
                                        std::span<float>, std::span<float>);
template void composite_backward<double>(std::span<const double>, std::span<const double>,
                                         std::span<const double>, const std::array<double, 3>&,
                                         const std::array<double, 3>&, std::span<double>, std::span<double>);

// ---------------------------------------------------------------------------

std::string to_string(EditVariant v) {
  switch (v) {
    case EditVariant::FullMlp: return "full-mlp";
    case EditVariant::LastLayer: return "last-layer";
    case EditVariant::SoftSeg: return "soft-seg";
    case EditVariant::Irene: return "irene";
  }
  return "unknown";
}

EditVariant parse_variant(const std::string& s) {
  if (s == "full-mlp") return EditVariant::FullMlp;
  if (s == "last-layer") return EditVariant::LastLayer;
  if (s == "soft-seg") return EditVariant::SoftSeg;
  if (s == "irene") return EditVariant::Irene;
  throw UsageError("unknown variant '" + s + "' (expected full-mlp, last-layer, soft-seg or irene)");
}

bool uses_segmentation(EditVariant v) { return v == EditVariant::SoftSeg || v == EditVariant::Irene; }

EditOverlay EditOverlay::identity(const FieldModel<float>& model, EditVariant variant) {
  EditOverlay o;
  o.variant = variant;
  o.last_weight = model.color.last.weight.value;
  o.last_bias = model.color.last.bias.value;
  if (variant == EditVariant::FullMlp) o.color_clone = model.color;
  if (uses_segmentation(variant)) o.seg = model.seg;
  return o;
}

// ---------------------------------------------------------------------------

SampleBatch sample_rays(const FieldModel<float>& model, std::span<const Ray> rays,
                        std::span<const std::uint32_t> ray_ids, const RenderOptions& opt, std::uint64_t iteration) {
  if (ray_ids.size() != rays.size()) throw DimensionError("sample_rays: ray id count");
  if (opt.samples_per_ray < 1) throw UsageError("samples_per_ray must be >= 1");
  const auto& box = model.config().bounds;
  const auto spr = static_cast<std::size_t>(opt.samples_per_ray);
  SampleBatch b;
  b.ray_begin.resize(rays.size() + 1, 0);
  float lo[3], inv_ext[3];
  for (std::size_t d = 0; d < 3; ++d) {
    lo[d] = static_cast<float>(box.min[d]);
    inv_ext[d] = 1.0f / static_cast<float>(box.max[d] - box.min[d]);
  }
  const auto& occ = model.occupancy;
  std::vector<float> pos;
  pos.reserve(3 * rays.size() * spr);
  b.delta.reserve(rays.size() * spr);
  for (std::size_t r = 0; r < rays.size(); ++r) {
    b.ray_begin[r] = static_cast<std::uint32_t>(b.delta.size());
    float t0, t1;
    if (!intersect_aabb(rays[r], box, t0, t1)) continue;
    const float step = (t1 - t0) / static_cast<float>(spr);
    for (std::size_t k = 0; k < spr; ++k) {
      const float u = opt.jitter ? counter_uniform(opt.jitter_seed, ray_ids[r], iteration, k) : 0.5f;
      const float t = t0 + (static_cast<float>(k) + u) * step;
      float p[3];
      for (std::size_t d = 0; d < 3; ++d) {
        p[d] = std::clamp((rays[r].origin[d] + t * rays[r].dir[d] - lo[d]) * inv_ext[d], 0.0f, 1.0f);
      }
      if (!occ.occupied(p)) continue;
      pos.insert(pos.end(), p, p + 3);
      b.delta.push_back(step);
    }
  }
  b.ray_begin[rays.size()] = static_cast<std::uint32_t>(b.delta.size());
  b.positions = Tensor2<float>(b.delta.size(), 3);
  std::copy(pos.begin(), pos.end(), b.positions.data());
  return b;
}

void refresh_occupancy(FieldModel<float>& model, std::uint64_t seed, float decay, float threshold) {
  auto& occ = model.occupancy;
  const std::size_t cells = occ.cell_count();
  const auto res = static_cast<std::size_t>(occ.resolution);
  if (occ.density.size() != cells) occ.density.assign(cells, 0.0f);
  constexpr std::size_t kBatch = 1u << 15;
  for (std::size_t c0 = 0; c0 < cells; c0 += kBatch) {
    const std::size_t n = std::min(kBatch, cells - c0);
    Tensor2<float> pos(n, 3);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = c0 + i;
      const std::size_t idx[3] = {c / (res * res), (c / res) % res, c % res};
      for (std::size_t d = 0; d < 3; ++d) {
        pos(i, d) = (static_cast<float>(idx[d]) + counter_uniform(seed, c, 0, d)) / static_cast<float>(res);
      }
    }
    const auto dens = density_forward(model.density, model.grid.encode_batch(pos));
    for (std::size_t i = 0; i < n; ++i) occ.density[c0 + i] = std::max(decay * occ.density[c0 + i], dens.sigma(i, 0));
  }
  std::vector<std::uint8_t> raw(cells);
  for (std::size_t c = 0; c < cells; ++c) raw[c] = occ.density[c] > threshold ? 1 : 0;
  occ.bits.assign(cells, 0);
  const auto r = static_cast<long>(res);
  for (long x = 0; x < r; ++x)
    for (long y = 0; y < r; ++y)
      for (long z = 0; z < r; ++z) {
        if (!raw[static_cast<std::size_t>((x * r + y) * r + z)]) continue;
        for (long dx = std::max(0L, x - 1); dx <= std::min(r - 1, x + 1); ++dx)
          for (long dy = std::max(0L, y - 1); dy <= std::min(r - 1, y + 1); ++dy)
            for (long dz = std::max(0L, z - 1); dz <= std::min(r - 1, z + 1); ++dz)
              occ.bits[static_cast<std::size_t>((dx * r + dy) * r + dz)] = 1;
      }
}

RayTrace trace_rays(const FieldModel<float>& model, std::span<const Ray> rays, std::span<const std::uint32_t> ray_ids,
                    const RenderOptions& opt) {
  const SampleBatch batch = sample_rays(model, rays, ray_ids, opt);
  const Tensor2<float> feats = model.grid.encode_batch(batch.positions);
  const DensityOutput<float> dens = density_forward(model.density, feats);

  RayTrace tr;
  tr.begin.resize(rays.size() + 1, 0);
  tr.residual.resize(rays.size(), 1.0f);
  std::vector<std::uint32_t> live;
  live.reserve(batch.positions.rows());
  std::vector<float> w(static_cast<std::size_t>(opt.samples_per_ray));
  for (std::size_t r = 0; r < rays.size(); ++r) {
    tr.begin[r] = static_cast<std::uint32_t>(live.size());
    const std::size_t b0 = batch.ray_begin[r], n = batch.ray_begin[r + 1] - b0;
    if (n == 0) continue;
    const std::size_t used = transmittance_walk<float>(std::span<const float>(dens.sigma.data() + b0, n),
                                                       std::span<const float>(batch.delta.data() + b0, n),
                                                       opt.termination, w, tr.residual[r]);
    for (std::size_t s = 0; s < used; ++s) {
      live.push_back(static_cast<std::uint32_t>(b0 + s));
      tr.weight.push_back(w[s]);
    }
  }
  tr.begin[rays.size()] = static_cast<std::uint32_t>(live.size());

  const std::size_t n_live = live.size();
  tr.features = Tensor2<float>(n_live, feats.cols());
  tr.h = Tensor2<float>(n_live, kGeoFeatures);
  tr.sh = Tensor2<float>(n_live, kShCoeffs);
  std::array<float, kShCoeffs> sh_override{};
  if (opt.direction_override) {
    sh_override = sh_encode<float>(std::span<const float, 3>(opt.direction_override->data(), 3));
  }
  for (std::size_t r = 0; r < rays.size(); ++r) {
    const auto sh_ray = opt.direction_override ? sh_override
                                               : sh_encode<float>(std::span<const float, 3>(rays[r].dir.data(), 3));
    for (std::size_t i = tr.begin[r]; i < tr.begin[r + 1]; ++i) {
      const std::size_t src = live[i];
      std::copy_n(feats.row(src).data(), feats.cols(), tr.features.row(i).data());
      std::copy_n(dens.h.row(src).data(), kGeoFeatures, tr.h.row(i).data());
      std::copy(sh_ray.begin(), sh_ray.end(), tr.sh.row(i).data());
    }
  }
  ColorOutput<float> col = color_forward(model.color, tr.h, tr.sh);
  tr.hbar = std::move(col.hbar);
  tr.rgb = std::move(col.rgb);
  return tr;
}

Tensor2<float> overlay_colors(const RayTrace& trace, const EditOverlay& overlay, std::vector<float>* alpha_out) {
  Tensor2<float> edited;
  if (overlay.variant == EditVariant::FullMlp) {
    if (!overlay.color_clone) throw UsageError("full-mlp overlay without a cloned color MLP");
    edited = color_forward(*overlay.color_clone, trace.h, trace.sh).rgb;
  } else {
    edited = last_layer_forward(trace.hbar, overlay.last_weight, overlay.last_bias);
  }
  if (!uses_segmentation(overlay.variant)) return edited;
  if (!overlay.seg) throw UsageError("segmentation overlay without a segmentation MLP");
  Tensor2<float> alpha = seg_forward(*overlay.seg, trace.features);
  if (overlay.force_alpha_zero) alpha.fill(0.0f);
  Tensor2<float> out(edited.rows(), 3);
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t c = 0; c < 3; ++c) out(i, c) = std::lerp(trace.rgb(i, c), edited(i, c), alpha(i, 0));
  if (alpha_out) alpha_out->assign(alpha.storage().begin(), alpha.storage().end());
  return out;
}

Image RenderedImage::image() const {
  Image img(width, height, 3);
  img.data = rgb;
  return img;
}

RenderedImage render_image(const FieldModel<float>& model, const Camera& camera, const RenderOptions& opt,
                           const EditOverlay* overlay) {
  camera.validate();
  RenderedImage out;
  out.width = camera.width;
  out.height = camera.height;
  const std::size_t n_pix = static_cast<std::size_t>(camera.width) * camera.height;
  out.rgb.assign(3 * n_pix, 0.0f);
  out.opacity.assign(n_pix, 0.0f);
  if (opt.record_hbar) out.hbar.assign(kHiddenWidth * n_pix, 0.0f);
  if (opt.record_alpha) out.alpha.assign(n_pix, 0.0f);

  const std::size_t n_chunks = (n_pix + kRaysPerChunk - 1) / kRaysPerChunk;
  parallel_for(
      n_chunks,
      [&](std::size_t chunk, int) {
        const std::size_t p0 = chunk * kRaysPerChunk, p1 = std::min(n_pix, p0 + kRaysPerChunk);
        std::vector<Ray> rays;
        std::vector<std::uint32_t> ids;
        for (std::size_t p = p0; p < p1; ++p) {
          rays.push_back(pixel_ray(camera, static_cast<int>(p % camera.width), static_cast<int>(p / camera.width)));
          ids.push_back(static_cast<std::uint32_t>(p));
        }
        const RayTrace tr = trace_rays(model, rays, ids, opt);
        std::vector<float> alpha;
        Tensor2<float> colors;
        const Tensor2<float>* rgb = &tr.rgb;
        if (overlay) {
          colors = overlay_colors(tr, *overlay, opt.record_alpha ? &alpha : nullptr);
          rgb = &colors;
        }
        for (std::size_t r = 0; r < rays.size(); ++r) {
          const std::size_t p = p0 + r;
          float acc[3] = {0, 0, 0}, op = 0, al = 0;
          for (std::size_t i = tr.begin[r]; i < tr.begin[r + 1]; ++i) {
            const float w = tr.weight[i];
            for (std::size_t c = 0; c < 3; ++c) acc[c] += w * (*rgb)(i, c);
            op += w;
            if (!alpha.empty()) al += w * alpha[i];
            if (opt.record_hbar) {
              float* dst = out.hbar.data() + p * kHiddenWidth;
              for (std::size_t k = 0; k < kHiddenWidth; ++k) dst[k] += w * tr.hbar(i, k);
            }
          }
          for (std::size_t c = 0; c < 3; ++c) out.rgb[3 * p + c] = acc[c] + tr.residual[r] * opt.background[c];
          out.opacity[p] = op;
          if (opt.record_alpha) out.alpha[p] = al;
        }
      },
      opt.threads);
  return out;
}

// ---------------------------------------------------------------------------

RgbLoss rgb_loss(const Image& render, const Image& target, std::span<const std::uint32_t> pixels) {
  if (!render.same_shape(target) || render.channels != 3) throw DimensionError("rgb_loss: image shapes differ");
  std::vector<std::uint32_t> all;
  if (pixels.empty()) {
    all.resize(render.pixel_count());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<std::uint32_t>(i);
    pixels = all;
  }
  RgbLoss out;
  out.grad.resize(3 * pixels.size());
  const double inv_n = 1.0 / static_cast<double>(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const std::size_t p = pixels[i];
    if (p >= render.pixel_count()) throw UsageError("rgb_loss: pixel index out of range");
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = static_cast<double>(render.data[3 * p + c]) - static_cast<double>(target.data[3 * p + c]);
      out.sum += d * d;
      out.grad[3 * i + c] = static_cast<float>(2.0 * d * inv_n);
    }
  }
  out.mean = out.sum * inv_n;
  return out;
}

}  // namespace irene
