// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include <algorithm>
#include <cmath>
#include <random>

#include "doctest.h"

#include "irene/color.hpp"
#include "irene/error.hpp"
#include "irene/eval.hpp"
#include "irene/image.hpp"

using namespace irene;

namespace {

Image random_image(std::uint64_t seed, int w, int h) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0, 1);
  Image img(w, h, 3);
  for (auto& v : img.data) v = u(rng);
  return img;
}

}  // namespace

TEST_CASE("hsv conversions") {
  const Rgb hsv = rgb_to_hsv({1, 0, 0});
  CHECK(hsv[0] == 0.0);
  CHECK(hsv[1] == 1.0);
  const Rgb g = hsv_shift({1, 0, 0}, 120, 0, 0);
  CHECK(g[0] == doctest::Approx(0.0));
  CHECK(g[1] == doctest::Approx(1.0));
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  for (int i = 0; i < 200; ++i) {
    const Rgb c{u(rng), u(rng), u(rng)};
    const Rgb back = hsv_to_rgb(rgb_to_hsv(c));
    for (std::size_t k = 0; k < 3; ++k) CHECK(back[k] == doctest::Approx(c[k]).epsilon(1e-12));
    const Rgb twice = hsv_shift(hsv_shift(c, 120, 0, 0), 120, 0, 0), once = hsv_shift(c, 240, 0, 0);
    for (std::size_t k = 0; k < 3; ++k) CHECK(twice[k] == doctest::Approx(once[k]).epsilon(1e-9));
  }
  const Image img = random_image(2, 5, 4);
  std::vector<std::uint8_t> mask(20, 1);
  CHECK(hsv_shift_image(img, mask, 0, 0, 0).data == img.data);
  CHECK(hsv_shift_image(img, std::vector<std::uint8_t>(20, 0), 90, 0.2, 0).data == img.data);
}

TEST_CASE("png round trip and masks") {
  Image img(7, 3, 3);
  for (std::size_t i = 0; i < img.data.size(); ++i) img.data[i] = static_cast<float>(i % 256) / 255.0f;
  const Image back = decode_png(encode_png(img));
  CHECK(back.data == img.data);
  CHECK(quantize8(img).data == img.data);
  const auto bytes = encode_png(img);
  std::vector<std::uint8_t> bad(bytes.begin(), bytes.begin() + 20);
  CHECK_THROWS(decode_png(bad));
  std::vector<std::uint8_t> bits(21, 0);
  bits[3] = bits[17] = 1;
  CHECK(mask_bits(mask_image(bits, 7, 3)) == bits);
  std::vector<std::uint8_t> one(25, 0);
  one[12] = 1;  // center of 5×5
  const auto d = dilate(one, 5, 5, 1);
  CHECK(std::count(d.begin(), d.end(), 1) == 9);
}

TEST_CASE("psnr: cap, analytic offset, loop oracle, symmetry") {
  const Image a = random_image(3, 16, 12);
  CHECK(psnr(a, a) == kPsnrCap);
  Image off(8, 8, 3, 0.2f), off2(8, 8, 3, 0.3f);
  CHECK(psnr(off, off2) == doctest::Approx(20.0).epsilon(1e-5));
  const Image b = random_image(4, 16, 12);
  double acc = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) acc += (double(a.data[i]) - b.data[i]) * (double(a.data[i]) - b.data[i]);
  const double ref = 10 * std::log10(1.0 / (acc / a.data.size()));
  CHECK(std::abs(psnr(a, b) - ref) < 1e-6);
  CHECK(psnr(a, b) == psnr(b, a));
  CHECK_THROWS_AS(psnr(a, Image(3, 3)), DimensionError);
}

TEST_CASE("masked psnr only looks inside the mask") {
  Image a(4, 4, 3, 0.5f), b = a;
  std::vector<std::uint8_t> mask(16, 0);
  mask[5] = 1;
  b.at(0, 0, 0) = 0.0f;  // outside
  CHECK(psnr_masked(a, b, mask) == kPsnrCap);
  b.at(1, 1, 0) = 0.4f;  // inside: MSE = 0.01/3
  CHECK(psnr_masked(a, b, mask) == doctest::Approx(-10 * std::log10(0.01 / 3)).epsilon(1e-5));
  CHECK_THROWS_AS(psnr_masked(a, b, std::vector<std::uint8_t>(16, 0)), UsageError);
}

TEST_CASE("ssim: identity, closed-form constant pair, negative image") {
  const Image a = random_image(5, 24, 20);
  CHECK(ssim(a, a) == 1.0);
  // constant images: σ terms vanish, SSIM = (2μaμb + C1)/(μa² + μb² + C1)
  Image c1(16, 16, 3, 0.4f), c2(16, 16, 3, 0.5f);
  const double mu_a = 0.4f, mu_b = 0.5f, C1 = 1e-4;
  const double expect = (2 * mu_a * mu_b + C1) / (mu_a * mu_a + mu_b * mu_b + C1);
  CHECK(ssim(c1, c2) == doctest::Approx(expect).epsilon(1e-6));
  Image neg = a;
  for (auto& v : neg.data) v = 1.0f - v;
  CHECK(ssim(a, neg) < 0.5);
  CHECK_THROWS_AS(ssim(Image(8, 8), Image(8, 8)), UsageError);
}

TEST_CASE("bleed statistics") {
  const Image base = random_image(6, 20, 20);
  std::vector<std::uint8_t> mask(400, 0);
  for (int y = 8; y < 12; ++y)
    for (int x = 8; x < 12; ++x) mask[static_cast<std::size_t>(y * 20 + x)] = 1;
  auto b = bleed(base, base, mask);
  CHECK(b.mean == 0.0);
  CHECK(b.max == 0.0);
  Image inside = base;
  inside.at(9, 9, 1) += 0.5f;
  inside.at(13, 9, 1) += 0.5f;  // within the 2-px dilation
  b = bleed(base, inside, mask);
  CHECK(b.max == 0.0);
  Image outside = base;
  outside.at(0, 0, 2) = base.at(0, 0, 2) + 0.3f;
  b = bleed(base, outside, mask);
  CHECK(b.max == doctest::Approx(0.3).epsilon(1e-6));
  CHECK(b.pixels == 400u - 64u);
  CHECK_THROWS_AS(bleed(base, base, std::vector<std::uint8_t>(400, 1)), UsageError);
}
