// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/eval.hpp"

#include <algorithm>
#include <cmath>

#include "irene/error.hpp"

namespace irene {

namespace {

void require_rgb_pair(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) throw DimensionError(std::string(what) + ": image shapes differ");
  if (a.channels != 3) throw DimensionError(std::string(what) + ": expected RGB images");
  if (a.pixel_count() == 0) throw UsageError(std::string(what) + ": empty image");
}

std::vector<double> luma(const Image& img) {
  std::vector<double> y(img.pixel_count());
  for (std::size_t p = 0; p < y.size(); ++p) {
    y[p] = 0.299 * img.data[3 * p] + 0.587 * img.data[3 * p + 1] + 0.114 * img.data[3 * p + 2];
  }
  return y;
}

}  // namespace

double mse(const Image& a, const Image& b) {
  require_rgb_pair(a, b, "mse");
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    const double d = static_cast<double>(a.data[i]) - b.data[i];
    acc += d * d;
  }
  return acc / static_cast<double>(a.data.size());
}

double psnr(const Image& a, const Image& b) {
  const double m = mse(a, b);
  if (m < 1e-10) return kPsnrCap;
  return -10.0 * std::log10(m);
}

double psnr_masked(const Image& a, const Image& b, const std::vector<std::uint8_t>& mask) {
  require_rgb_pair(a, b, "psnr_masked");
  if (mask.size() != a.pixel_count()) throw DimensionError("psnr_masked: mask size does not match the images");
  double acc = 0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!mask[p]) continue;
    for (std::size_t c = 0; c < 3; ++c) {
      const double d = static_cast<double>(a.data[3 * p + c]) - b.data[3 * p + c];
      acc += d * d;
    }
    n += 3;
  }
  if (n == 0) throw UsageError("psnr_masked: empty mask");
  const double m = acc / static_cast<double>(n);
  return m < 1e-10 ? kPsnrCap : -10.0 * std::log10(m);
}

double ssim(const Image& a, const Image& b) {
  require_rgb_pair(a, b, "ssim");
  constexpr int kWin = 11;
  constexpr double kSigma = 1.5, C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
  if (a.width < kWin || a.height < kWin) throw UsageError("ssim: image smaller than the 11x11 window");
  double g[kWin];
  double gsum = 0;
  for (int i = 0; i < kWin; ++i) {
    const double x = i - kWin / 2;
    g[i] = std::exp(-x * x / (2 * kSigma * kSigma));
    gsum += g[i];
  }
  for (double& v : g) v /= gsum;

  const auto ya = luma(a), yb = luma(b);
  const int w = a.width, h = a.height;
  // separable filtering of x, y, x², y², xy (horizontal pass then vertical)
  const int ow = w - kWin + 1, oh = h - kWin + 1;
  std::vector<double> hp(5 * static_cast<std::size_t>(ow) * h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int k = 0; k < kWin; ++k) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x + k;
        const double u = ya[p], v = yb[p];
        s[0] += g[k] * u;
        s[1] += g[k] * v;
        s[2] += g[k] * u * u;
        s[3] += g[k] * v * v;
        s[4] += g[k] * u * v;
      }
      for (int c = 0; c < 5; ++c) hp[(static_cast<std::size_t>(c) * h + y) * ow + x] = s[c];
    }
  }
  double total = 0;
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double s[5] = {0, 0, 0, 0, 0};
      for (int c = 0; c < 5; ++c)
        for (int k = 0; k < kWin; ++k) s[c] += g[k] * hp[(static_cast<std::size_t>(c) * h + y + k) * ow + x];
      const double mu_a = s[0], mu_b = s[1];
      const double var_a = s[2] - mu_a * mu_a, var_b = s[3] - mu_b * mu_b, cov = s[4] - mu_a * mu_b;
      total += ((2 * mu_a * mu_b + C1) * (2 * cov + C2)) /
               ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2));
    }
  }
  return total / (static_cast<double>(ow) * oh);
}

BleedStats bleed(const Image& base, const Image& edited, const std::vector<std::uint8_t>& mask, int dilation) {
  require_rgb_pair(base, edited, "bleed");
  if (mask.size() != base.pixel_count()) throw DimensionError("bleed: mask size does not match the images");
  const auto grown = dilate(mask, base.width, base.height, dilation);
  BleedStats st;
  double acc = 0;
  for (std::size_t p = 0; p < grown.size(); ++p) {
    if (grown[p]) continue;
    double d = 0;
    for (std::size_t c = 0; c < 3; ++c) {
      d = std::max(d, std::abs(static_cast<double>(edited.data[3 * p + c]) - base.data[3 * p + c]));
    }
    acc += d;
    st.max = std::max(st.max, d);
    ++st.pixels;
  }
  if (st.pixels == 0) throw UsageError("bleed: the dilated mask covers the whole image");
  st.mean = acc / static_cast<double>(st.pixels);
  return st;
}

}  // namespace irene
