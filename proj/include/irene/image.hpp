// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace irene {

/// Float image, row-major, interleaved channels (1 or 3), values nominally in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  int channels = 3;
  std::vector<float> data;

  Image() = default;
  Image(int w, int h, int c = 3, float fill = 0.0f)
      : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  float& at(int x, int y, int c = 0) {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  float at(int x, int y, int c = 0) const {
    return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
  }
  bool same_shape(const Image& o) const {
    return width == o.width && height == o.height && channels == o.channels;
  }
};

/// 8-bit PNG, RGB or grayscale. Values are clamped to [0,1] and rounded.
std::vector<std::uint8_t> encode_png(const Image& img);
Image decode_png(std::span<const std::uint8_t> bytes);

void write_png(const std::filesystem::path& path, const Image& img);
Image read_png(const std::filesystem::path& path);

/// Round-trips through 8-bit quantization (what a PNG write/read would do).
Image quantize8(const Image& img);

/// Grayscale mask from a 1- or 3-channel image: pixel set when value > 0.5.
std::vector<std::uint8_t> mask_bits(const Image& img);
Image mask_image(const std::vector<std::uint8_t>& bits, int width, int height);

/// Set bits grown by a (2r+1)² square structuring element.
std::vector<std::uint8_t> dilate(const std::vector<std::uint8_t>& bits, int width, int height, int radius);

}  // namespace irene
