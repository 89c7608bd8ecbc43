// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "irene/image.hpp"

namespace irene {

inline constexpr double kPsnrCap = 99.0;

/// PSNR over RGB in [0,1]; kPsnrCap when the MSE is below 1e-10.
double psnr(const Image& a, const Image& b);
/// Mean squared error over all channels.
double mse(const Image& a, const Image& b);
/// PSNR restricted to pixels whose mask bit is set. UsageError on an empty mask.
double psnr_masked(const Image& a, const Image& b, const std::vector<std::uint8_t>& mask);

/// SSIM on luma (0.299, 0.587, 0.114), 11×11 Gaussian window (σ 1.5),
/// K1 = 0.01, K2 = 0.03, valid-window mean.
double ssim(const Image& a, const Image& b);

struct BleedStats {
  double mean = 0;  // per-pixel |Δ| is the largest channel change
  double max = 0;
  std::size_t pixels = 0;
};

/// Change between a base and an edited render outside the edit mask dilated by
/// `dilation` pixels. Throws UsageError when the complement is empty.
BleedStats bleed(const Image& base, const Image& edited, const std::vector<std::uint8_t>& mask, int dilation = 2);

}  // namespace irene
