// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cmath>
#include <span>

#include "irene/error.hpp"

namespace irene {

inline constexpr int kShDegree = 4;
inline constexpr int kShCoeffs = kShDegree * kShDegree;

/// Real spherical-harmonic basis, bands 0..3, on a direction (normalized here).
///
/// Coefficient order is l² + l + m for m = −l..l, with the Condon–Shortley
/// phase folded in (so Y₁₋₁ = −c·y, Y₁₀ = c·z, Y₁₁ = −c·x). Throws UsageError
/// for a zero-length direction.
template <class T>
std::array<T, kShCoeffs> sh_encode(std::span<const T, 3> dir) {
  const T n = std::sqrt(dir[0] * dir[0] + dir[1] * dir[1] + dir[2] * dir[2]);
  if (!(n > T(1e-12))) throw UsageError("sh_encode: direction has zero length");
  const T x = dir[0] / n, y = dir[1] / n, z = dir[2] / n;
  const T xx = x * x, yy = y * y, zz = z * z;
  std::array<T, kShCoeffs> out{};
  out[0] = T(0.28209479177387814);
  out[1] = T(-0.48860251190291987) * y;
  out[2] = T(0.48860251190291987) * z;
  out[3] = T(-0.48860251190291987) * x;
  out[4] = T(1.0925484305920792) * x * y;
  out[5] = T(-1.0925484305920792) * y * z;
  out[6] = T(0.94617469575755997) * zz - T(0.31539156525252005);
  out[7] = T(-1.0925484305920792) * x * z;
  out[8] = T(0.54627421529603959) * (xx - yy);
  out[9] = T(0.59004358992664352) * y * (-T(3) * xx + yy);
  out[10] = T(2.8906114426405538) * x * y * z;
  out[11] = T(0.45704579946446572) * y * (T(1) - T(5) * zz);
  out[12] = T(0.3731763325901154) * z * (T(5) * zz - T(3));
  out[13] = T(0.45704579946446572) * x * (T(1) - T(5) * zz);
  out[14] = T(1.4453057213202769) * z * (xx - yy);
  out[15] = T(0.59004358992664352) * x * (-xx + T(3) * yy);
  return out;
}

template <class T>
std::array<T, kShCoeffs> sh_encode(T x, T y, T z) {
  const T d[3] = {x, y, z};
  return sh_encode<T>(std::span<const T, 3>(d, 3));
}

}  // namespace irene
