// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "irene/image.hpp"

namespace irene {

using Rgb = std::array<double, 3>;

/// h in degrees [0, 360), s and v in [0, 1].
Rgb rgb_to_hsv(const Rgb& rgb);
Rgb hsv_to_rgb(const Rgb& hsv);

/// Rotates hue by dh degrees, adds ds / dv with clamping to [0, 1].
Rgb hsv_shift(const Rgb& rgb, double dh, double ds, double dv);

/// Applies hsv_shift to every pixel whose mask bit is set. A shift of (0,0,0)
/// returns the input bit-for-bit.
Image hsv_shift_image(const Image& img, const std::vector<std::uint8_t>& mask, double dh, double ds, double dv);

}  // namespace irene
