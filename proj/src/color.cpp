// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/color.hpp"

#include <algorithm>
#include <cmath>

#include "irene/error.hpp"

namespace irene {

Rgb rgb_to_hsv(const Rgb& rgb) {
  const double r = rgb[0], g = rgb[1], b = rgb[2];
  const double mx = std::max({r, g, b}), mn = std::min({r, g, b});
  const double d = mx - mn;
  double h = 0;
  if (d > 0) {
    if (mx == r) {
      h = 60.0 * std::fmod((g - b) / d, 6.0);
    } else if (mx == g) {
      h = 60.0 * ((b - r) / d + 2.0);
    } else {
      h = 60.0 * ((r - g) / d + 4.0);
    }
  }
  if (h < 0) h += 360.0;
  return {h, mx > 0 ? d / mx : 0.0, mx};
}

Rgb hsv_to_rgb(const Rgb& hsv) {
  double h = std::fmod(hsv[0], 360.0);
  if (h < 0) h += 360.0;
  const double s = hsv[1], v = hsv[2];
  const double c = v * s;
  const double hp = h / 60.0;
  const double x = c * (1.0 - std::abs(std::fmod(hp, 2.0) - 1.0));
  Rgb out{0, 0, 0};
  switch (static_cast<int>(hp) % 6) {
    case 0: out = {c, x, 0}; break;
    case 1: out = {x, c, 0}; break;
    case 2: out = {0, c, x}; break;
    case 3: out = {0, x, c}; break;
    case 4: out = {x, 0, c}; break;
    default: out = {c, 0, x}; break;
  }
  const double m = v - c;
  return {out[0] + m, out[1] + m, out[2] + m};
}

Rgb hsv_shift(const Rgb& rgb, double dh, double ds, double dv) {
  if (dh == 0 && ds == 0 && dv == 0) return rgb;
  Rgb hsv = rgb_to_hsv(rgb);
  hsv[0] = std::fmod(hsv[0] + dh, 360.0);
  if (hsv[0] < 0) hsv[0] += 360.0;
  hsv[1] = std::clamp(hsv[1] + ds, 0.0, 1.0);
  hsv[2] = std::clamp(hsv[2] + dv, 0.0, 1.0);
  return hsv_to_rgb(hsv);
}

Image hsv_shift_image(const Image& img, const std::vector<std::uint8_t>& mask, double dh, double ds, double dv) {
  if (img.channels != 3) throw UsageError("hsv_shift_image: RGB image required");
  if (mask.size() != img.pixel_count()) throw DimensionError("hsv_shift_image: mask size does not match image");
  Image out = img;
  if (dh == 0 && ds == 0 && dv == 0) return out;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    const Rgb c = hsv_shift({img.data[3 * p], img.data[3 * p + 1], img.data[3 * p + 2]}, dh, ds, dv);
    for (std::size_t k = 0; k < 3; ++k) out.data[3 * p + k] = static_cast<float>(c[k]);
  }
  return out;
}

}  // namespace irene
