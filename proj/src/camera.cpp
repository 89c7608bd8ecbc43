// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/camera.hpp"

#include <cmath>
#include <cstdio>
#include <numbers>
#include <sstream>

#include "irene/error.hpp"

namespace irene {

double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}

Vec3 normalized(const Vec3& v) {
  const double n = std::sqrt(dot(v, v));
  if (!(n > 0)) throw UsageError("cannot normalize a zero vector");
  return {v[0] / n, v[1] / n, v[2] / n};
}

void Camera::validate() const {
  if (width <= 0 || height <= 0) throw UsageError("camera: image size must be positive");
  if (!(fx > 0) || !(fy > 0)) throw UsageError("camera: focal lengths must be positive");
  const auto& m = cam_to_world;
  const Vec3 c0{m[0], m[4], m[8]}, c1{m[1], m[5], m[9]}, c2{m[2], m[6], m[10]};
  constexpr double tol = 1e-5;
  if (std::abs(dot(c0, c0) - 1) > tol || std::abs(dot(c1, c1) - 1) > tol || std::abs(dot(c2, c2) - 1) > tol ||
      std::abs(dot(c0, c1)) > tol || std::abs(dot(c0, c2)) > tol || std::abs(dot(c1, c2)) > tol) {
    throw UsageError("camera: rotation is not orthonormal");
  }
  if (std::abs(dot(cross(c0, c1), c2) - 1) > tol) throw UsageError("camera: rotation determinant is not +1");
}

Camera Camera::look_at(const Vec3& eye, const Vec3& target, int width, int height, double fov_x_deg) {
  const Vec3 fwd = normalized({target[0] - eye[0], target[1] - eye[1], target[2] - eye[2]});
  Vec3 up{0, 0, 1};
  if (std::abs(dot(fwd, up)) > 0.999) up = {0, 1, 0};
  const Vec3 right = normalized(cross(fwd, up));
  const Vec3 down = cross(fwd, right);
  Camera cam;
  cam.width = width;
  cam.height = height;
  cam.fx = cam.fy = 0.5 * width / std::tan(0.5 * fov_x_deg * std::numbers::pi / 180.0);
  cam.cx = 0.5 * width;
  cam.cy = 0.5 * height;
  cam.cam_to_world = {right[0], down[0], fwd[0], eye[0], right[1], down[1],
                      fwd[1],   eye[1],  right[2], down[2], fwd[2], eye[2]};
  return cam;
}

Camera Camera::with_pose(const std::array<double, 12>& pose) const {
  Camera c = *this;
  c.cam_to_world = pose;
  c.validate();
  return c;
}

Ray pixel_ray(const Camera& cam, int x, int y) {
  if (x < 0 || y < 0 || x >= cam.width || y >= cam.height) {
    throw UsageError("pixel (" + std::to_string(x) + "," + std::to_string(y) + ") outside the image");
  }
  const double u = (x + 0.5 - cam.cx) / cam.fx;
  const double v = (y + 0.5 - cam.cy) / cam.fy;
  const auto& m = cam.cam_to_world;
  const Vec3 d = normalized({m[0] * u + m[1] * v + m[2], m[4] * u + m[5] * v + m[6], m[8] * u + m[9] * v + m[10]});
  return Ray{{static_cast<float>(m[3]), static_cast<float>(m[7]), static_cast<float>(m[11])},
             {static_cast<float>(d[0]), static_cast<float>(d[1]), static_cast<float>(d[2])}};
}

std::vector<Ray> make_rays(const Camera& cam, std::span<const PixelIndex> pixels) {
  std::vector<Ray> rays;
  rays.reserve(pixels.size());
  for (const auto& p : pixels) rays.push_back(pixel_ray(cam, p.x, p.y));
  return rays;
}

std::vector<Ray> make_rays(const Camera& cam) {
  std::vector<Ray> rays;
  rays.reserve(static_cast<std::size_t>(cam.width) * cam.height);
  for (int y = 0; y < cam.height; ++y)
    for (int x = 0; x < cam.width; ++x) rays.push_back(pixel_ray(cam, x, y));
  return rays;
}

std::array<double, 12> parse_pose(const std::string& text) {
  std::string cleaned = text;
  for (auto& ch : cleaned)
    if (ch == ',') ch = ' ';
  std::istringstream in(cleaned);
  std::array<double, 12> pose{};
  for (auto& v : pose) {
    if (!(in >> v)) throw UsageError("pose must contain 12 reals");
    if (!std::isfinite(v)) throw UsageError("pose contains a non-finite value");
  }
  std::string extra;
  if (in >> extra) throw UsageError("pose has more than 12 values");
  return pose;
}

std::string format_pose(const std::array<double, 12>& pose) {
  std::string out;
  char buf[40];
  for (std::size_t i = 0; i < pose.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g", pose[i]);
    if (i) out += ' ';
    out += buf;
  }
  return out;
}

}  // namespace irene
