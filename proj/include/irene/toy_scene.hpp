// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "irene/camera.hpp"
#include "irene/color.hpp"
#include "irene/image.hpp"
#include "irene/model.hpp"

namespace irene {

enum class ShapeKind { Sphere, Box, Plane };

/// Albedo override on the positive side of a cutting plane (n·x > offset).
struct AlbedoCut {
  Vec3 normal{1, 0, 0};
  double offset = 0;
  Rgb albedo{0, 0, 0};
};

struct ToyObject {
  ShapeKind shape = ShapeKind::Sphere;
  int id = 0;
  Vec3 center{0, 0, 0};
  double radius = 0.5;            // sphere
  Vec3 half_extent{0.5, 0.5, 0};  // box (x,y,z); plane uses x,y (horizontal, normal +z)
  Rgb albedo{0.8, 0.8, 0.8};
  double ks = 0;  // specular strength in [0,1]
  double shininess = 32;
  std::optional<AlbedoCut> cut;
};

struct DirectionalLight {
  Vec3 direction{0, 0, 1};  // towards the light
  double intensity = 1;
};

enum class CameraFamily { Orbit, ForwardFacing };

struct ToyScene {
  std::string name;
  std::vector<ToyObject> objects;
  std::vector<DirectionalLight> lights;
  double ambient = 0.2;
  Rgb background{1, 1, 1};
  std::uint64_t seed = 0;
  CameraFamily family = CameraFamily::Orbit;
  double camera_radius = 3.2;
  double fov_deg = 40;
  Aabb bounds;

  void validate() const;
  const ToyObject* find(int id) const;
};

struct EditSpec {
  enum class Mode { AlbedoReplace, HsvShift };
  enum class Region { FullObject, HalfObject };

  std::vector<int> targets;
  Mode mode = Mode::HsvShift;
  Rgb albedo{0, 0, 0};  // AlbedoReplace
  double dh = 0, ds = 0, dv = 0;  // HsvShift (degrees, unit, unit)
  Region region = Region::FullObject;
  Vec3 cut_normal{1, 0, 0};  // HalfObject: edit applies where n·x > offset (object-centered)
  double cut_offset = 0;
};

struct RaytraceResult {
  Image rgb;
  std::vector<int> ids;            // −1 for background
  std::vector<std::uint8_t> cut;   // 1 where the hit is on the positive side of the object's cut
};

/// Lambertian + Phong (white highlights), no shadows, one ray per pixel center.
RaytraceResult raytrace(const ToyScene& scene, const Camera& camera);

/// Diffuse albedo transformed on the targets; specular terms untouched.
/// Throws UsageError for an unknown target id.
ToyScene apply_edit(const ToyScene& scene, const EditSpec& edit);

/// Pixels whose hit object is an edit target (and inside the edited half, if any).
std::vector<std::uint8_t> edit_mask(const ToyScene& scene, const EditSpec& edit, const Camera& camera);

/// Named presets: lambertian-duo, glossy-sphere, cluttered-table.
ToyScene preset_scene(const std::string& name, std::uint64_t seed = 0);
/// Canonical red→green edit for a preset (hue +120° on the red objects).
EditSpec preset_edit(const std::string& name);
std::vector<std::string> preset_names();

struct ViewRecord {
  std::string name;
  Camera camera;
};

/// Dataset on disk: manifest.json, poses.txt, rgb/, mask/, edited_rgb/.
struct DatasetBundle {
  std::filesystem::path root;
  nlohmann::json manifest;
  std::vector<ViewRecord> train;
  std::vector<ViewRecord> eval;
  std::string edited_view;  // name of the single edited training view
  Rgb background{1, 1, 1};
  Aabb bounds;

  const ViewRecord& view(const std::string& name) const;
  Image rgb(const std::string& name) const;
  Image edited_rgb(const std::string& name) const;
  std::vector<std::uint8_t> mask(const std::string& name) const;
};

struct BundleOptions {
  int n_train = 64;
  int n_eval = 10;
  int width = 128;
  int height = 128;
  std::uint64_t seed = 0;
};

/// Camera poses for a scene: view 0 of the train set is the edit view.
std::vector<Camera> sample_poses(const ToyScene& scene, int count, int width, int height, std::uint64_t seed,
                                 bool eval_set);

/// Writes a bundle; returns the loaded bundle. Throws IoError with the path on failure.
DatasetBundle generate_bundle(const ToyScene& scene, const EditSpec& edit, const BundleOptions& opt,
                              const std::filesystem::path& out_dir);
DatasetBundle load_bundle(const std::filesystem::path& dir);

nlohmann::json scene_to_json(const ToyScene& scene);
nlohmann::json edit_to_json(const EditSpec& edit);
nlohmann::json camera_to_json(const Camera& cam);
Camera camera_from_json(const nlohmann::json& j);

}  // namespace irene
