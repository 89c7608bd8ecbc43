// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace irene {

using Vec3 = std::array<double, 3>;

/// Pinhole camera. Camera frame: +x right, +y down, +z forward (viewing direction).
/// cam_to_world is a row-major 3×4 [R | t]; t is the camera center.
struct Camera {
  int width = 0;
  int height = 0;
  double fx = 0, fy = 0, cx = 0, cy = 0;
  std::array<double, 12> cam_to_world{1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0};

  /// Throws UsageError unless fx, fy > 0, size positive and R orthonormal with det +1 (1e-5).
  void validate() const;

  Vec3 center() const { return {cam_to_world[3], cam_to_world[7], cam_to_world[11]}; }
  /// World-space optical axis (third column of R).
  Vec3 forward() const { return {cam_to_world[2], cam_to_world[6], cam_to_world[10]}; }

  /// Camera at `eye` looking at `target`; world up is +z. Square pixels, fov horizontal.
  static Camera look_at(const Vec3& eye, const Vec3& target, int width, int height, double fov_x_deg);

  /// Same intrinsics, pose replaced by 12 row-major reals.
  Camera with_pose(const std::array<double, 12>& pose) const;
};

struct Ray {
  std::array<float, 3> origin;
  std::array<float, 3> dir;  // unit length
};

struct PixelIndex {
  int x = 0;
  int y = 0;
};

/// Ray through the pixel center; throws UsageError when out of bounds.
Ray pixel_ray(const Camera& cam, int x, int y);
std::vector<Ray> make_rays(const Camera& cam, std::span<const PixelIndex> pixels);
/// Every pixel, row-major.
std::vector<Ray> make_rays(const Camera& cam);

/// Parses "r00 r01 ... r23" (12 whitespace or comma separated reals).
std::array<double, 12> parse_pose(const std::string& text);
std::string format_pose(const std::array<double, 12>& pose);

Vec3 normalized(const Vec3& v);
double dot(const Vec3& a, const Vec3& b);
Vec3 cross(const Vec3& a, const Vec3& b);

}  // namespace irene
