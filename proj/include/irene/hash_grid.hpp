// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "irene/tape.hpp"

namespace irene {

struct HashGridConfig {
  int levels = 16;
  int features_per_level = 2;
  int log2_table_size = 15;
  int base_resolution = 16;
  int finest_resolution = 256;

  std::uint32_t table_size() const { return std::uint32_t{1} << log2_table_size; }
  int output_dim() const { return levels * features_per_level; }
  /// Per-level growth factor b with base·b^(L−1) = finest.
  double growth_factor() const;
  void validate() const;
};

/// Spatial hash of an integer lattice corner into [0, table_size).
std::uint32_t hash_corner(std::uint32_t x, std::uint32_t y, std::uint32_t z, std::uint32_t table_size);

/// Multiresolution hash-grid feature field. Tables are stored as one
/// (levels·T) × F parameter, level-major.
template <class T>
class HashGrid {
 public:
  static constexpr int kMaxLevels = 32;
  static constexpr int kCorners = 8;

  HashGrid() = default;
  explicit HashGrid(HashGridConfig cfg);

  const HashGridConfig& config() const { return cfg_; }
  int resolution(int level) const { return resolutions_[static_cast<std::size_t>(level)]; }
  int output_dim() const { return cfg_.output_dim(); }

  Param<T>& tables() { return tables_; }
  const Param<T>& tables() const { return tables_; }

  /// Uniform init in [−scale, scale].
  void initialize(std::mt19937_64& rng, double scale = 1e-4);

  /// Features at p ∈ [0,1]³, levels concatenated coarse → fine. A point outside
  /// the unit cube is clamped; the return value is false in that case.
  bool encode(std::span<const T, 3> p, std::span<T> out) const;

  /// Batched encode; positions is N×3, result N×(L·F).
  Tensor2<T> encode_batch(const Tensor2<T>& positions) const;

  /// Scatter upstream (L·F values for point p) into grad (same shape as the
  /// tables) with the trilinear weights of the 8 corners per level.
  void encode_backward(std::span<const T, 3> p, std::span<const T> upstream, Tensor2<T>& grad) const;

  void encode_backward_batch(const Tensor2<T>& positions, const Tensor2<T>& upstream,
                             Tensor2<T>& grad) const;

  struct Corner {
    std::uint32_t row;  // row index into tables()
    T weight;
  };
  /// Table rows and trilinear weights of the 8 corners at one level.
  std::array<Corner, kCorners> corners(std::span<const T, 3> p, int level) const;

 private:
  HashGridConfig cfg_;
  std::vector<int> resolutions_;
  Param<T> tables_;
};

}  // namespace irene
