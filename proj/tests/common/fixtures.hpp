// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <unistd.h>

#include <filesystem>
#include <random>
#include <string>

#include "irene/checkpoint.hpp"
#include "irene/model.hpp"
#include "irene/toy_scene.hpp"

namespace irene::test {

/// Small model with non-trivial features: table entries in ±0.5 and a density
/// bias that makes the unit cube semi-opaque.
template <class T = float>
FieldModel<T> tiny_model(std::uint64_t seed, int log2_table = 10) {
  ModelConfig mc;
  mc.grid.log2_table_size = log2_table;
  mc.grid.finest_resolution = 64;
  mc.seed = seed;
  FieldModel<T> m(mc);
  m.initialize();
  std::mt19937_64 rng(seed + 17);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto& v : m.grid.tables().value.storage()) v = static_cast<T>(u(rng));
  m.density.l1.bias.value(0, 0) = T(1.0);
  return m;
}

/// Checkpoint around tiny_model with an edit camera of the given size.
inline Checkpoint tiny_checkpoint(std::uint64_t seed, int size = 24) {
  Checkpoint ck;
  ck.model = tiny_model<float>(seed);
  const Camera cam = Camera::look_at({2.6, 0.4, 1.2}, {0, 0, 0}, size, size, 45);
  ck.config = {{"render", {{"samples_per_ray", 32}, {"background", {1.0, 1.0, 1.0}}}},
               {"edit_view", "train_000"},
               {"edit_camera", camera_to_json(cam)},
               {"scene", {{"name", "tiny"}, {"family", "orbit"}, {"scene_hash", "0"}}}};
  return ck;
}

inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("irene_test_" + name + "_" + std::to_string(::getpid()));
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace irene::test
