// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "irene/camera.hpp"
#include "irene/image.hpp"
#include "irene/model.hpp"

namespace irene {

inline constexpr int kDefaultSamplesPerRay = 128;
inline constexpr float kTerminationTransmittance = 1e-4f;

// ---------------------------------------------------------------------------
// Compositing
// ---------------------------------------------------------------------------

template <class T>
struct CompositeResult {
  std::array<T, 3> rgb{};
  T opacity = 0;        // Σ weights
  T transmittance = 1;  // residual transmittance after the last sample
  std::vector<T> weights;
};

/// a_s = 1 − exp(−σ_s δ_s), T_s = Π_{u<s}(1 − a_u), rgb = Σ T_s a_s c_s + T_final·bg.
/// `rgb` holds 3 values per sample. Throws UsageError for a negative δ.
template <class T>
CompositeResult<T> composite(std::span<const T> sigma, std::span<const T> rgb, std::span<const T> delta,
                             const std::array<T, 3>& background);

/// Gradients of the composited color: given dL/dC (3 values), writes dL/dσ_s
/// and dL/dc_s (3 per sample).
template <class T>
void composite_backward(std::span<const T> sigma, std::span<const T> rgb, std::span<const T> delta,
                        const std::array<T, 3>& background, const std::array<T, 3>& grad_rgb,
                        std::span<T> grad_sigma, std::span<T> grad_color);

// ---------------------------------------------------------------------------
// Edit overlay
// ---------------------------------------------------------------------------

enum class EditVariant { FullMlp, LastLayer, SoftSeg, Irene };

std::string to_string(EditVariant v);
/// Accepts full-mlp, last-layer, soft-seg, irene.
EditVariant parse_variant(const std::string& s);
bool uses_segmentation(EditVariant v);

/// Edited parameters applied on top of a frozen base model at render time.
struct EditOverlay {
  EditVariant variant = EditVariant::Irene;
  Tensor2<float> last_weight;  // W′, 3×64
  Tensor2<float> last_bias;    // 1×3
  std::optional<ColorMlp<float>> color_clone;  // full-mlp variant only
  std::optional<SegMlp<float>> seg;            // soft-seg / irene
  bool force_alpha_zero = false;

  /// Overlay whose edited path equals the base model (W′ = W, fresh seg).
  static EditOverlay identity(const FieldModel<float>& model, EditVariant variant);
};

// ---------------------------------------------------------------------------
// Sampling and tracing
// ---------------------------------------------------------------------------

struct RenderOptions {
  int samples_per_ray = kDefaultSamplesPerRay;
  std::array<float, 3> background{1.0f, 1.0f, 1.0f};
  bool jitter = false;
  std::uint64_t jitter_seed = 0;
  float termination = kTerminationTransmittance;
  int threads = 0;  // 0: process default
  bool record_hbar = false;
  bool record_alpha = false;
  /// When set, γ(θ) is evaluated on this direction for every sample.
  std::optional<std::array<float, 3>> direction_override;
};

/// Stratified samples for a set of rays, restricted to the model's AABB.
struct SampleBatch {
  std::vector<std::uint32_t> ray_begin;  // rays+1 offsets
  Tensor2<float> positions;              // N×3, normalized to the unit cube
  std::vector<float> delta;              // interval length, world units
};

/// `ray_ids` feed the per-sample counter RNG (typically the pixel index).
SampleBatch sample_rays(const FieldModel<float>& model, std::span<const Ray> rays,
                        std::span<const std::uint32_t> ray_ids, const RenderOptions& opt,
                        std::uint64_t iteration = 0);

inline constexpr float kOccupancyThreshold = 0.05f;

/// Re-estimates the occupancy grid from the density MLP: one jittered point
/// per cell, running value max(decay·old, σ), cells above `threshold` marked
/// and grown by one cell. Enables the grid on first use.
void refresh_occupancy(FieldModel<float>& model, std::uint64_t seed, float decay = 0.95f,
                       float threshold = kOccupancyThreshold);

/// Front-to-back transmittance walk with early termination. Writes the weights
/// of the processed samples and returns their count; `residual` receives the
/// transmittance left after them.
template <class T>
std::size_t transmittance_walk(std::span<const T> sigma, std::span<const T> delta, T termination,
                               std::span<T> weights, T& residual);

/// Per-sample quantities of the samples that survive early termination.
struct RayTrace {
  std::vector<std::uint32_t> begin;  // rays+1 offsets into the live samples
  std::vector<float> weight;
  std::vector<float> residual;  // per ray
  Tensor2<float> features;      // live×32
  Tensor2<float> h;             // live×15
  Tensor2<float> sh;            // live×16
  Tensor2<float> hbar;          // live×64
  Tensor2<float> rgb;           // live×3 base colors
};

RayTrace trace_rays(const FieldModel<float>& model, std::span<const Ray> rays,
                    std::span<const std::uint32_t> ray_ids, const RenderOptions& opt);

/// Colors of live samples after applying an overlay (per-sample blend for the
/// segmentation variants). Also returns α per sample when the variant has one.
Tensor2<float> overlay_colors(const RayTrace& trace, const EditOverlay& overlay,
                              std::vector<float>* alpha_out = nullptr);

// ---------------------------------------------------------------------------
// Images
// ---------------------------------------------------------------------------

struct RenderedImage {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;      // 3 per pixel
  std::vector<float> opacity;  // 1 per pixel
  std::vector<float> hbar;     // 64 per pixel when recorded
  std::vector<float> alpha;    // 1 per pixel when recorded (α weighted by volume rendering)

  Image image() const;
};

RenderedImage render_image(const FieldModel<float>& model, const Camera& camera, const RenderOptions& opt = {},
                           const EditOverlay* overlay = nullptr);

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

struct RgbLoss {
  double sum = 0;   // Σ ||C − C′||²
  double mean = 0;  // sum / pixel count
  std::vector<float> grad;  // d(mean)/dC, 3 per pixel of the subset
};

/// Squared error over a pixel subset (row-major indices; empty = every pixel).
RgbLoss rgb_loss(const Image& render, const Image& target, std::span<const std::uint32_t> pixels = {});

}  // namespace irene
