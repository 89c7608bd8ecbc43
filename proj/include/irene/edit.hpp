// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <atomic>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"

#include "irene/checkpoint.hpp"
#include "irene/image.hpp"
#include "irene/renderer.hpp"

namespace irene {

/// Condition-2 threshold in the units of our aggregated activations. The
/// published value (kTau2Published) assumes a different backbone scale; this
/// default comes from fixtures/calibration.json (see tools/calibrate_tau2.cpp).
inline constexpr double kTau2Default = 0.0061;
inline constexpr double kTau2Published = 100.0;

struct EditConfig {
  double tau1 = 0.5;
  double tau2 = kTau2Default;
  int q = 30;
  int iterations = 200;
  double lr = 0.01;
  int rays_per_iter = 8192;  // capped at the edit image size
  EditVariant variant = EditVariant::Irene;
  bool invert_condition1 = false;
  /// Initial output bias of the segmentation MLP (α starts at sigmoid of this).
  double seg_init_bias = -3.0;
  std::uint64_t seed = 0;
  int progress_every = 20;

  void validate() const;
};

nlohmann::json edit_config_to_json(const EditConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
EditConfig edit_config_from_json(const nlohmann::json& j, EditConfig base = {});

enum class NeuronLabel { Diffuse, ViewDependent };
std::string to_string(NeuronLabel l);

struct NeuronStats {
  double mean = 0;
  double std = 0;  // population standard deviation over q
  double min = 0;
};

struct NeuronProfile {
  Tensor2<float> a;  // 64×Q
  int q = 0;
  double psi_deg = 0;
  double elevation_rad = 0;
  double azimuth0_rad = 0;
  std::vector<NeuronStats> stats;  // 64
};

struct Classification {
  std::vector<NeuronLabel> labels;        // 64
  std::vector<std::uint8_t> freeze_mask;  // 1 = view-dependent
};

/// Per-row statistics of a profile matrix.
std::vector<NeuronStats> profile_stats(const Tensor2<float>& a);

/// View-dependent ⇔ (std/mean < τ1) OR (min ≤ τ2). A neuron with mean 0 is
/// view-dependent through condition 2. With `invert_condition1` the first
/// condition reads std/mean ≥ τ1.
NeuronLabel classify_neuron(const NeuronStats& s, double tau1, double tau2, bool invert_condition1 = false);
Classification classify_neurons(const NeuronProfile& p, double tau1, double tau2, bool invert_condition1 = false);

struct BlendDiagnostics {
  std::atomic<std::uint64_t> clamped{0};
};

/// α·c_edit + (1 − α)·c_base per channel; α outside [0,1] is clamped and counted.
std::array<float, 3> blend(float alpha, const std::array<float, 3>& c_edit, const std::array<float, 3>& c_base,
                           BlendDiagnostics* diag = nullptr);

/// Samples lighter than this are left out of a FitCache; their base-color
/// contribution goes into FitCache::offset.
inline constexpr float kFitMinWeight = 1e-4f;

/// Frozen per-sample quantities of one view (midpoint sampling), reused by
/// profiling and fitting: the backbone never changes during an edit.
struct FitCache {
  int width = 0;
  int height = 0;
  Camera camera;
  std::vector<std::uint32_t> begin;  // pixels+1 offsets into samples
  std::vector<float> weight;
  std::vector<float> residual;        // per pixel
  Tensor2<float> offset;              // pixels×3: residual·background + pruned samples at base color
  double pruned_weight_max = 0;       // largest per-pixel weight left out
  Tensor2<float> features;            // n×32
  Tensor2<float> h;                   // n×15
  Tensor2<float> hbar;                // n×64
  Tensor2<float> rgb;                 // n×3 base colors
  Tensor2<float> ray_sh;              // pixels×16
  std::array<float, 3> background{1, 1, 1};

  std::size_t samples() const { return weight.size(); }
  std::size_t pixels() const { return residual.size(); }
};

FitCache build_fit_cache(const FieldModel<float>& model, const Camera& camera, const RenderOptions& opt);

/// Unit viewing direction of the camera's optical axis as (azimuth, elevation).
std::pair<double, double> view_angles(const Camera& camera);

/// ψ = span/Q with span 360° for orbit captures and 180° for forward-facing ones.
double sweep_step_deg(int q, bool forward_facing);

/// For each q the direction encoding is overridden with the optical axis
/// rotated by q·ψ about +z (positions unchanged); A[k][q] is the
/// opacity-weighted mean over pixels of |Σ_s w_s h̄_s,k| / opacity.
NeuronProfile profile_neurons(const FieldModel<float>& model, const FitCache& cache, int q, double psi_deg);
NeuronProfile profile_neurons(const FieldModel<float>& model, const Camera& camera, int q, double psi_deg,
                              const RenderOptions& opt = {});

/// CSV `neuron,q,activation` and labels.json next to it.
void write_profile_csv(const std::filesystem::path& path, const NeuronProfile& p);
nlohmann::json labels_json(const NeuronProfile& p, const Classification& c, double tau1, double tau2,
                           bool invert_condition1);

struct FitProgress {
  int iter = 0;
  double loss = 0;
};

struct FitResult {
  EditOverlay overlay;
  std::vector<std::uint8_t> freeze_mask;  // mask actually applied (all zero unless irene)
  std::vector<double> losses;             // per iteration
  double seconds = 0;
  std::size_t trainable_params = 0;
  bool failed = false;
  std::string error;
};

struct FitCallbacks {
  std::function<void(const FitProgress&)> progress;
  /// Called with a snapshot of the overlay every progress interval.
  std::function<void(const EditOverlay&)> publish;
};

/// Trains the edited parameters of `cfg.variant` against `target` (same size
/// as the cache). Irene needs `freeze_mask` (64 entries); other variants ignore it.
FitResult fit_edit(const FieldModel<float>& model, const FitCache& cache, const Image& target, const EditConfig& cfg,
                   const std::vector<std::uint8_t>& freeze_mask = {}, const FitCallbacks& cb = {});

/// Renders |h̄_k| (volume-rendered) as a grayscale image scaled to its maximum.
Image render_neuron_activation(const FieldModel<float>& model, const Camera& camera, int k,
                               std::optional<std::array<float, 3>> direction_override = std::nullopt,
                               const RenderOptions& opt = {});

/// Optical axis of `camera` rotated about +z by `deg`.
std::array<float, 3> swept_direction(const Camera& camera, double deg);

/// Edited image for the mask+hsv mode: base render with the HSV shift applied inside the mask.
Image synthesize_edit(const Image& base_render, const std::vector<std::uint8_t>& mask, double dh, double ds, double dv);

/// τ2 for a backbone: `fraction` times the median mean of the live (mean > 0) neurons.
double calibrate_tau2(const NeuronProfile& p, double fraction);

}  // namespace irene
