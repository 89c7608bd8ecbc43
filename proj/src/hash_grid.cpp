// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/hash_grid.hpp"

#include <algorithm>
#include <cmath>

namespace irene {

double HashGridConfig::growth_factor() const {
  if (levels <= 1) return 1.0;
  return std::exp((std::log(static_cast<double>(finest_resolution)) -
                   std::log(static_cast<double>(base_resolution))) /
                  static_cast<double>(levels - 1));
}

void HashGridConfig::validate() const {
  if (levels < 1 || levels > HashGrid<float>::kMaxLevels) throw UsageError("hash grid: bad level count");
  if (features_per_level < 1) throw UsageError("hash grid: features_per_level must be >= 1");
  if (log2_table_size < 4 || log2_table_size > 24) throw UsageError("hash grid: log2 table size out of range");
  if (base_resolution < 1 || finest_resolution < base_resolution) {
    throw UsageError("hash grid: resolutions must satisfy 1 <= base <= finest");
  }
}

std::uint32_t hash_corner(std::uint32_t x, std::uint32_t y, std::uint32_t z, std::uint32_t table_size) {
  constexpr std::uint32_t kPrimes[3] = {1u, 2654435761u, 805459861u};
  const std::uint32_t h = (x * kPrimes[0]) ^ (y * kPrimes[1]) ^ (z * kPrimes[2]);
  return h & (table_size - 1u);
}

template <class T>
HashGrid<T>::HashGrid(HashGridConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  const double b = cfg_.growth_factor();
  resolutions_.resize(static_cast<std::size_t>(cfg_.levels));
  for (int l = 0; l < cfg_.levels; ++l) {
    // small epsilon keeps base·b^l from flooring one below an exact integer
    resolutions_[static_cast<std::size_t>(l)] =
        static_cast<int>(std::floor(cfg_.base_resolution * std::pow(b, l) + 1e-6));
  }
  tables_ = Param<T>("grid.tables",
                     Tensor2<T>(static_cast<std::size_t>(cfg_.levels) * cfg_.table_size(),
                                static_cast<std::size_t>(cfg_.features_per_level)));
}

template <class T>
void HashGrid<T>::initialize(std::mt19937_64& rng, double scale) {
  std::uniform_real_distribution<double> dist(-scale, scale);
  for (auto& v : tables_.value.storage()) v = static_cast<T>(dist(rng));
}

template <class T>
std::array<typename HashGrid<T>::Corner, HashGrid<T>::kCorners> HashGrid<T>::corners(
    std::span<const T, 3> p, int level) const {
  const T res = static_cast<T>(resolutions_[static_cast<std::size_t>(level)]);
  std::uint32_t base[3];
  T frac[3];
  for (int d = 0; d < 3; ++d) {
    const T x = std::clamp(p[d], T(0), T(1)) * res;
    T fl = std::floor(x);
    fl = std::min(fl, res);
    base[d] = static_cast<std::uint32_t>(fl);
    frac[d] = x - fl;
  }
  const std::uint32_t tsize = cfg_.table_size();
  const std::uint32_t offset = static_cast<std::uint32_t>(level) * tsize;
  std::array<Corner, kCorners> out{};
  for (int c = 0; c < kCorners; ++c) {
    T w = T(1);
    std::uint32_t idx[3];
    for (int d = 0; d < 3; ++d) {
      if (c & (1 << d)) {
        idx[d] = base[d] + 1u;
        w *= frac[d];
      } else {
        idx[d] = base[d];
        w *= T(1) - frac[d];
      }
    }
    out[static_cast<std::size_t>(c)] = {offset + hash_corner(idx[0], idx[1], idx[2], tsize), w};
  }
  return out;
}

template <class T>
bool HashGrid<T>::encode(std::span<const T, 3> p, std::span<T> out) const {
  if (out.size() != static_cast<std::size_t>(output_dim())) throw DimensionError("hash encode: output width");
  bool inside = true;
  for (int d = 0; d < 3; ++d)
    if (!(p[d] >= T(0) && p[d] <= T(1))) inside = false;
  const int F = cfg_.features_per_level;
  const T* table = tables_.value.data();
  for (int l = 0; l < cfg_.levels; ++l) {
    const auto cs = corners(p, l);
    T* dst = out.data() + l * F;
    for (int f = 0; f < F; ++f) dst[f] = T(0);
    for (const auto& c : cs) {
      const T* src = table + static_cast<std::size_t>(c.row) * static_cast<std::size_t>(F);
      for (int f = 0; f < F; ++f) dst[f] += c.weight * src[f];
    }
  }
  return inside;
}

template <class T>
Tensor2<T> HashGrid<T>::encode_batch(const Tensor2<T>& positions) const {
  if (positions.cols() != 3) throw DimensionError("hash encode_batch: positions must be N×3");
  Tensor2<T> out(positions.rows(), static_cast<std::size_t>(output_dim()));
  for (std::size_t i = 0; i < positions.rows(); ++i) {
    encode(std::span<const T, 3>(positions.row(i).data(), 3), out.row(i));
  }
  return out;
}

template <class T>
void HashGrid<T>::encode_backward(std::span<const T, 3> p, std::span<const T> upstream,
                                  Tensor2<T>& grad) const {
  if (upstream.size() != static_cast<std::size_t>(output_dim())) {
    throw DimensionError("hash encode_backward: upstream width");
  }
  if (grad.rows() != tables_.value.rows() || grad.cols() != tables_.value.cols()) {
    throw DimensionError("hash encode_backward: gradient buffer shape");
  }
  const int F = cfg_.features_per_level;
  T* g = grad.data();
  for (int l = 0; l < cfg_.levels; ++l) {
    const auto cs = corners(p, l);
    const T* up = upstream.data() + l * F;
    for (const auto& c : cs) {
      T* dst = g + static_cast<std::size_t>(c.row) * static_cast<std::size_t>(F);
      for (int f = 0; f < F; ++f) dst[f] += c.weight * up[f];
    }
  }
}

template <class T>
void HashGrid<T>::encode_backward_batch(const Tensor2<T>& positions, const Tensor2<T>& upstream,
                                        Tensor2<T>& grad) const {
  if (positions.rows() != upstream.rows()) throw DimensionError("hash encode_backward_batch: row mismatch");
  for (std::size_t i = 0; i < positions.rows(); ++i) {
    encode_backward(std::span<const T, 3>(positions.row(i).data(), 3), upstream.row(i), grad);
  }
}

template class HashGrid<float>;
template class HashGrid<double>;

}  // namespace irene
