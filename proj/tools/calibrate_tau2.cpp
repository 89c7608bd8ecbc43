// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// Recomputes fixtures/calibration.json from pretrained preset checkpoints:
// the condition-2 threshold for this backbone and the pretraining record
// behind the held-out PSNR threshold.
//
//   calibrate_tau2 --cache build/acceptance_cache --out fixtures/calibration.json
#include <cmath>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "irene/edit.hpp"
#include "irene/trainer.hpp"

namespace fs = std::filesystem;
using namespace irene;
using nlohmann::json;

namespace {

double round_sig(double v, int digits) {
  if (v == 0) return 0;
  const double scale = std::pow(10.0, digits - 1 - static_cast<int>(std::floor(std::log10(std::abs(v)))));
  return std::round(v * scale) / scale;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"tau2 and pretraining calibration"};
  fs::path cache = "build/acceptance_cache", out = "fixtures/calibration.json";
  double fraction = 0.1;
  std::vector<std::string> scenes{"lambertian-duo", "glossy-sphere", "cluttered-table"};
  app.add_option("--cache", cache, "directory with <scene>/ bundles and <scene>.irne checkpoints");
  app.add_option("--out", out);
  app.add_option("--fraction", fraction, "tau2 = fraction x median live-neuron mean");
  app.add_option("--scenes", scenes);
  CLI11_PARSE(app, argc, argv);

  try {
    json per_scene = json::object(), pretrain = json::object();
    double sum = 0;
    for (const auto& name : scenes) {
      const DatasetBundle bundle = load_bundle(cache / name);
      const Checkpoint ck = load_checkpoint(cache / (name + ".irne"));
      const ViewRecord& v = bundle.view(bundle.edited_view);
      const int q = EditConfig{}.q;
      const NeuronProfile prof =
          profile_neurons(ck.model, v.camera, q, sweep_step_deg(q, false), render_options_from(ck.config));
      std::size_t dead = 0;
      for (const auto& s : prof.stats) dead += s.mean == 0;
      const double t = calibrate_tau2(prof, fraction);
      sum += t;
      per_scene[name] = {{"tau2", t}, {"dead_neurons", dead}};

      const auto scores = evaluate(ck, bundle);
      double p = 0;
      for (const auto& s : scores) p += s.psnr;
      json rec{{"heldout_psnr", p / static_cast<double>(scores.size())}};
      const fs::path side = cache / (name + ".pretrain.json");
      if (fs::exists(side)) rec.update(json::parse(std::ifstream(side)));
      pretrain[name] = rec;
      std::cerr << name << ": tau2 " << t << " (" << dead << " dead neurons), held-out PSNR "
                << rec.at("heldout_psnr").get<double>() << "\n";
    }
    const double tau2 = round_sig(sum / static_cast<double>(scenes.size()), 2);
    const json doc{{"tau2",
                    {{"value", tau2},
                     {"rule", "fraction x median mean of live neurons on the edit view, averaged over scenes"},
                     {"fraction", fraction},
                     {"published", kTau2Published},
                     {"scenes", per_scene}}},
                   {"pretrain", {{"psnr_threshold_db", 28.0}, {"scenes", pretrain}}}};
    fs::create_directories(out.parent_path().empty() ? fs::path(".") : out.parent_path());
    std::ofstream(out) << doc.dump(2) << "\n";
    std::cout << "tau2 " << tau2 << " -> " << out.string() << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  return 0;
}
