// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "irene/checkpoint.hpp"
#include "irene/toy_scene.hpp"

namespace irene {

struct PretrainConfig {
  int iterations = 1500;
  int batch_rays = 1024;
  double lr = 1e-2;
  std::uint64_t seed = 0;
  int samples_per_ray = kDefaultSamplesPerRay;
  int log_every = 50;
  /// Evaluation PSNR on the held-out views is logged every `eval_every`
  /// iterations (0 disables it).
  int eval_every = 0;
  HashGridConfig grid;
};

struct TrainLogRow {
  int iter = 0;
  double loss = 0;
  double psnr = 0;       // batch PSNR
  double eval_psnr = -1; // held-out PSNR, −1 when not evaluated
};

struct PretrainResult {
  Checkpoint checkpoint;
  std::vector<TrainLogRow> log;
  double seconds = 0;
  bool diverged = false;
  std::string error;
};

using TrainProgress = std::function<void(const TrainLogRow&)>;

/// Trains grid, density MLP and color MLP jointly with Adam on random rays of
/// the training views. lr is multiplied by 0.33 at 50% and 75% of the budget.
/// On a non-finite loss or gradient the run stops and the result holds the
/// last good parameters with `diverged` set.
PretrainResult pretrain(const DatasetBundle& bundle, const PretrainConfig& cfg, const TrainProgress& progress = {});

/// Config snapshot stored in a checkpoint trained on `bundle`.
nlohmann::json bundle_config(const DatasetBundle& bundle, const PretrainConfig& cfg);

void write_train_log(const std::filesystem::path& path, const std::vector<TrainLogRow>& log);

struct ViewScore {
  std::string view;
  double psnr = 0;
  double ssim = 0;
};

/// Renders each view (midpoint samples) and scores it against its image.
std::vector<ViewScore> evaluate(const FieldModel<float>& model, const std::vector<ViewRecord>& views,
                                const std::vector<Image>& targets, const RenderOptions& opt = {},
                                const EditOverlay* overlay = nullptr);
std::vector<ViewScore> evaluate(const Checkpoint& ck, const DatasetBundle& bundle);

/// Render options recorded in a checkpoint's config (samples, background).
RenderOptions render_options_from(const nlohmann::json& config);

/// Edit camera recorded in a checkpoint's config.
Camera edit_camera_from(const nlohmann::json& config);

}  // namespace irene
