// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "irene/checkpoint.hpp"
#include "irene/edit.hpp"
#include "irene/toy_scene.hpp"

namespace irene {

struct AblationConfig {
  std::vector<EditVariant> variants{EditVariant::FullMlp, EditVariant::LastLayer, EditVariant::SoftSeg,
                                    EditVariant::Irene};
  std::vector<std::uint64_t> seeds{0, 1, 2};
  EditConfig edit;  // variant and seed are set per cell
  int dilation = 2;
  /// Also fits irene with the opposite reading of condition 1; those cells go
  /// to AblationReport::condition1_rows, not the main table.
  bool compare_condition1 = true;
  int threads = 0;  // cells run in parallel; 0 = process default
};

struct AblationRow {
  std::string scene;
  std::string variant;
  std::uint64_t seed = 0;
  double psnr = 0;         // held-out views vs GT edit, mean over views
  double ssim = 0;
  double bleed_mean = 0;   // pooled over held-out views, outside the dilated GT mask
  double bleed_max = 0;
  double fit_seconds = 0;
  double inside_psnr = 0;  // held-out pixels inside the GT mask, mean over views
  double last_loss = 0;
  std::size_t frozen = 0;
  bool failed = false;
  std::string error;
};

struct AblationReport {
  std::string scene;
  std::string bundle_hash;
  std::string checkpoint_hash;
  std::vector<AblationRow> rows;             // |variants| × |seeds|, variant-major
  std::vector<AblationRow> condition1_rows;  // irene with invert_condition1 flipped
  AblationRow unedited;                      // base renders scored against the GT edit
  double tau2 = 0;
  std::size_t frozen_printed = 0;  // view-dependent count, printed condition 1
  std::size_t frozen_inverted = 0;
};

/// Fits every variant × seed on the bundle's edited view and scores renders of
/// the eval views. A failed cell is recorded and the others continue.
AblationReport run_ablation(const DatasetBundle& bundle, const Checkpoint& base, const std::string& checkpoint_hash,
                            const AblationConfig& cfg);

/// Seed-averaged PSNR of a variant's successful rows (NaN when none).
double mean_psnr(const std::vector<AblationRow>& rows, const std::string& variant);

/// report.csv (scene,variant,seed,psnr,ssim,bleed_mean,bleed_max,fit_seconds) and report.md.
void write_ablation_report(const std::filesystem::path& dir, const std::vector<AblationReport>& reports);

}  // namespace irene
