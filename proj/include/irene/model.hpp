// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "irene/hash_grid.hpp"
#include "irene/sh.hpp"
#include "irene/tape.hpp"

namespace irene {

inline constexpr int kHiddenWidth = 64;
inline constexpr int kGeoFeatures = 15;  // h: density outputs minus σ
inline constexpr int kColorInput = kGeoFeatures + kShCoeffs;
inline constexpr float kDensityClamp = 15.0f;

struct Aabb {
  std::array<double, 3> min{-1.0, -1.0, -1.0};
  std::array<double, 3> max{1.0, 1.0, 1.0};
};

struct ModelConfig {
  HashGridConfig grid;
  Aabb bounds;
  std::uint64_t seed = 0;
};

/// y = x·Wᵀ + b, W stored out×in, b stored 1×out.
template <class T>
struct DenseLayer {
  Param<T> weight;
  Param<T> bias;

  DenseLayer() = default;
  DenseLayer(const std::string& name, std::size_t in, std::size_t out)
      : weight(name + ".W", Tensor2<T>(out, in)), bias(name + ".b", Tensor2<T>(1, out)) {}

  std::size_t in_dim() const { return weight.value.cols(); }
  std::size_t out_dim() const { return weight.value.rows(); }

  void initialize(std::mt19937_64& rng);
  Tensor2<T> forward(const Tensor2<T>& x) const;
  typename GradTape<T>::Var record(GradTape<T>& tape, typename GradTape<T>::Var x) {
    return tape.add_bias(tape.matmul(x, weight), bias);
  }
  void set_frozen(bool f) {
    weight.frozen = f;
    bias.frozen = f;
  }
};

/// Hash features (32) → 64 relu → 16; output 0 is the density logit, 1..15 is h.
template <class T>
struct DensityMlp {
  DenseLayer<T> l0, l1;
};

/// [h (15) ⊕ γ(θ) (16)] → 64 relu → 64 relu (h̄) → 3 sigmoid.
template <class T>
struct ColorMlp {
  DenseLayer<T> l0, l1, last;
};

/// Hash features (32) → 64 relu → 1 sigmoid (α).
template <class T>
struct SegMlp {
  DenseLayer<T> l0, l1;
};

template <class T>
struct DensityOutput {
  Tensor2<T> sigma;  // N×1, σ = exp(clamp(raw, −15, 15))
  Tensor2<T> h;      // N×15
};

template <class T>
struct ColorOutput {
  Tensor2<T> rgb;   // N×3 in (0,1)
  Tensor2<T> hbar;  // N×64 penultimate activations
};

/// Coarse empty-space bitfield over the unit cube. Samples in empty cells are
/// skipped, which is the same as giving them zero density. Disabled (every
/// cell occupied) while `bits` is empty.
struct OccupancyGrid {
  int resolution = 64;
  std::vector<float> density;  // running max-decayed σ per cell
  std::vector<std::uint8_t> bits;

  bool enabled() const { return !bits.empty(); }
  std::size_t cell_count() const {
    return static_cast<std::size_t>(resolution) * resolution * resolution;
  }
  std::size_t cell(const float* p) const {
    std::size_t idx = 0;
    for (int d = 0; d < 3; ++d) {
      int c = static_cast<int>(p[d] * static_cast<float>(resolution));
      c = c < 0 ? 0 : (c >= resolution ? resolution - 1 : c);
      idx = idx * static_cast<std::size_t>(resolution) + static_cast<std::size_t>(c);
    }
    return idx;
  }
  bool occupied(const float* p) const { return !enabled() || bits[cell(p)] != 0; }
};

template <class T>
class FieldModel {
 public:
  FieldModel() = default;
  explicit FieldModel(ModelConfig cfg);

  /// Draws fresh parameters from cfg.seed.
  void initialize();

  const ModelConfig& config() const { return cfg_; }
  ModelConfig& config() { return cfg_; }

  HashGrid<T> grid;
  DensityMlp<T> density;
  ColorMlp<T> color;
  SegMlp<T> seg;
  OccupancyGrid occupancy;

  /// Grid, density and color parameters (what pretraining trains).
  std::vector<Param<T>*> backbone_params();
  std::vector<const Param<T>*> backbone_params() const;

  /// Maps world coordinates into the unit cube of the grid.
  std::array<T, 3> normalize(const std::array<T, 3>& world) const;

  template <class U>
  FieldModel<U> cast() const;

 private:
  ModelConfig cfg_;
};

template <class T>
DensityOutput<T> density_forward(const DensityMlp<T>& mlp, const Tensor2<T>& features);

/// Returns final colors and h̄. `sh` is N×16.
template <class T>
ColorOutput<T> color_forward(const ColorMlp<T>& mlp, const Tensor2<T>& h, const Tensor2<T>& sh);

/// h̄ only (first two color layers); the last layer is not evaluated.
template <class T>
Tensor2<T> penultimate_forward(const ColorMlp<T>& mlp, const Tensor2<T>& h, const Tensor2<T>& sh);

/// sigmoid(h̄·Wᵀ + b).
template <class T>
Tensor2<T> last_layer_forward(const Tensor2<T>& hbar, const Tensor2<T>& weight, const Tensor2<T>& bias);

/// α ∈ (0,1), N×1.
template <class T>
Tensor2<T> seg_forward(const SegMlp<T>& mlp, const Tensor2<T>& features);

/// Copy of a last layer: the frozen original stays with the model, the clone is trainable.
template <class T>
struct LastLayerClone {
  Tensor2<T> frozen_weight;
  Tensor2<T> frozen_bias;
  DenseLayer<T> trainable;
};

template <class T>
LastLayerClone<T> clone_last_layer(const ColorMlp<T>& mlp);

/// Throws NanError when any entry is non-finite.
template <class T>
void check_finite(const Tensor2<T>& t, const char* what);

}  // namespace irene
