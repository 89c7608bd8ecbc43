// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/ablation.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "irene/eval.hpp"
#include "irene/parallel.hpp"
#include "irene/trainer.hpp"

namespace irene {

namespace {

struct HeldOut {
  std::vector<Image> gt;    // GT edited eval views
  std::vector<Image> base;  // unedited renders
  std::vector<std::vector<std::uint8_t>> mask;
};

struct Cell {
  EditVariant variant;
  std::uint64_t seed;
  bool inverted;
};

void score(AblationRow& row, const HeldOut& ho, const std::vector<Image>& renders, int dilation) {
  double psnr_sum = 0, ssim_sum = 0, inside_sum = 0, bleed_acc = 0;
  std::size_t bleed_px = 0;
  row.bleed_max = 0;
  for (std::size_t v = 0; v < renders.size(); ++v) {
    psnr_sum += psnr(renders[v], ho.gt[v]);
    ssim_sum += ssim(renders[v], ho.gt[v]);
    inside_sum += psnr_masked(renders[v], ho.gt[v], ho.mask[v]);
    const BleedStats b = bleed(ho.base[v], renders[v], ho.mask[v], dilation);
    bleed_acc += b.mean * static_cast<double>(b.pixels);
    bleed_px += b.pixels;
    row.bleed_max = std::max(row.bleed_max, b.max);
  }
  const auto n = static_cast<double>(renders.size());
  row.psnr = psnr_sum / n;
  row.ssim = ssim_sum / n;
  row.inside_psnr = inside_sum / n;
  row.bleed_mean = bleed_acc / static_cast<double>(bleed_px);
}

std::string fmt(double v, int prec) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

}  // namespace

AblationReport run_ablation(const DatasetBundle& bundle, const Checkpoint& base, const std::string& checkpoint_hash,
                            const AblationConfig& cfg) {
  if (cfg.variants.empty() || cfg.seeds.empty()) throw UsageError("run_ablation: need at least one variant and seed");
  cfg.edit.validate();
  AblationReport rep;
  rep.scene = bundle.manifest.at("scene").at("name").get<std::string>();
  rep.bundle_hash = bundle.manifest.at("scene_hash").get<std::string>();
  rep.checkpoint_hash = checkpoint_hash;
  rep.tau2 = cfg.edit.tau2;

  const RenderOptions opt = render_options_from(base.config);
  const ViewRecord& edit_view = bundle.view(bundle.edited_view);
  const Image target = bundle.edited_rgb(bundle.edited_view);
  const FitCache cache = build_fit_cache(base.model, edit_view.camera, opt);

  HeldOut ho;
  for (const auto& v : bundle.eval) {
    ho.gt.push_back(bundle.edited_rgb(v.name));
    ho.base.push_back(render_image(base.model, v.camera, opt).image());
    ho.mask.push_back(bundle.mask(v.name));
  }
  rep.unedited.scene = rep.scene;
  rep.unedited.variant = "unedited";
  score(rep.unedited, ho, ho.base, cfg.dilation);

  const bool need_profile =
      std::find(cfg.variants.begin(), cfg.variants.end(), EditVariant::Irene) != cfg.variants.end();
  std::vector<std::uint8_t> mask_printed, mask_inverted;
  if (need_profile) {
    const bool ff = bundle.manifest.at("scene").at("family").get<std::string>() == "forward-facing";
    const NeuronProfile prof = profile_neurons(base.model, cache, cfg.edit.q, sweep_step_deg(cfg.edit.q, ff));
    const bool inv = cfg.edit.invert_condition1;
    mask_printed = classify_neurons(prof, cfg.edit.tau1, cfg.edit.tau2, inv).freeze_mask;
    mask_inverted = classify_neurons(prof, cfg.edit.tau1, cfg.edit.tau2, !inv).freeze_mask;
    rep.frozen_printed = static_cast<std::size_t>(std::count(mask_printed.begin(), mask_printed.end(), 1));
    rep.frozen_inverted = static_cast<std::size_t>(std::count(mask_inverted.begin(), mask_inverted.end(), 1));
    if (inv) std::swap(rep.frozen_printed, rep.frozen_inverted);
  }

  std::vector<Cell> cells;
  for (auto v : cfg.variants)
    for (auto s : cfg.seeds) cells.push_back({v, s, false});
  if (need_profile && cfg.compare_condition1) {
    for (auto s : cfg.seeds) cells.push_back({EditVariant::Irene, s, true});
  }

  std::vector<AblationRow> out(cells.size());
  parallel_for(
      cells.size(),
      [&](std::size_t i, int) {
        const Cell& c = cells[i];
        AblationRow& row = out[i];
        row.scene = rep.scene;
        row.variant = to_string(c.variant) + (c.inverted ? "-inverted" : "");
        row.seed = c.seed;
        try {
          EditConfig ec = cfg.edit;
          ec.variant = c.variant;
          ec.seed = c.seed;
          if (c.inverted) ec.invert_condition1 = !ec.invert_condition1;
          const auto& mask = c.inverted ? mask_inverted : mask_printed;
          const FitResult fit = fit_edit(base.model, cache, target, ec, mask);
          row.fit_seconds = fit.seconds;
          row.frozen = static_cast<std::size_t>(std::count(fit.freeze_mask.begin(), fit.freeze_mask.end(), 1));
          if (!fit.losses.empty()) row.last_loss = fit.losses.back();
          if (fit.failed) {
            row.failed = true;
            row.error = fit.error;
            return;
          }
          std::vector<Image> renders;
          for (const auto& v : bundle.eval) renders.push_back(render_image(base.model, v.camera, opt, &fit.overlay).image());
          score(row, ho, renders, cfg.dilation);
        } catch (const std::exception& e) {
          row.failed = true;
          row.error = e.what();
        }
      },
      cfg.threads);

  const std::size_t main_cells = cfg.variants.size() * cfg.seeds.size();
  rep.rows.assign(out.begin(), out.begin() + static_cast<std::ptrdiff_t>(main_cells));
  rep.condition1_rows.assign(out.begin() + static_cast<std::ptrdiff_t>(main_cells), out.end());
  return rep;
}

double mean_psnr(const std::vector<AblationRow>& rows, const std::string& variant) {
  double sum = 0;
  int n = 0;
  for (const auto& r : rows) {
    if (r.variant != variant || r.failed) continue;
    sum += r.psnr;
    ++n;
  }
  return n ? sum / n : std::numeric_limits<double>::quiet_NaN();
}

void write_ablation_report(const std::filesystem::path& dir, const std::vector<AblationReport>& reports) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "report.csv");
  if (!csv) throw IoError("cannot write " + (dir / "report.csv").string());
  csv << "scene,variant,seed,psnr,ssim,bleed_mean,bleed_max,fit_seconds\n";
  for (const auto& rep : reports) {
    for (const auto& r : rep.rows) {
      csv << r.scene << ',' << r.variant << ',' << r.seed << ',';
      if (r.failed) {
        csv << "nan,nan,nan,nan," << fmt(r.fit_seconds, 3) << '\n';
      } else {
        csv << fmt(r.psnr, 4) << ',' << fmt(r.ssim, 5) << ',' << fmt(r.bleed_mean, 5) << ',' << fmt(r.bleed_max, 5)
            << ',' << fmt(r.fit_seconds, 3) << '\n';
      }
    }
  }

  std::ofstream md(dir / "report.md");
  if (!md) throw IoError("cannot write " + (dir / "report.md").string());
  md << "# Recoloring ablation\n\n"
     << "Held-out views scored against the ground-truth edit. LPIPS is not computed.\n"
     << "Bleed is the largest per-channel change outside the 2-px-dilated edit mask.\n";
  for (const auto& rep : reports) {
    md << "\n## " << rep.scene << "\n\n"
       << "bundle `" << rep.bundle_hash.substr(0, 16) << "`, checkpoint `" << rep.checkpoint_hash.substr(0, 16)
       << "`, tau2 " << rep.tau2 << "\n\n"
       << "| variant | PSNR | SSIM | inside PSNR | bleed mean | bleed max | fit s | seeds |\n"
       << "|---|---|---|---|---|---|---|---|\n";
    // seed-averaged rows, in first-seen variant order
    std::vector<std::string> order;
    std::map<std::string, std::vector<const AblationRow*>> by;
    auto add = [&](const AblationRow& r) {
      if (!by.count(r.variant)) order.push_back(r.variant);
      by[r.variant].push_back(&r);
    };
    add(rep.unedited);
    for (const auto& r : rep.rows) add(r);
    for (const auto& r : rep.condition1_rows) add(r);
    for (const auto& name : order) {
      double p = 0, s = 0, in = 0, bm = 0, bx = 0, t = 0;
      int ok = 0;
      for (const auto* r : by[name]) {
        if (r->failed) continue;
        p += r->psnr, s += r->ssim, in += r->inside_psnr, bm += r->bleed_mean, bx = std::max(bx, r->bleed_max);
        t += r->fit_seconds;
        ++ok;
      }
      md << "| " << name << " | ";
      if (ok == 0) {
        md << "failed | | | | | | 0/" << by[name].size() << " |\n";
        continue;
      }
      md << fmt(p / ok, 2) << " | " << fmt(s / ok, 4) << " | " << fmt(in / ok, 2) << " | " << fmt(bm / ok, 4)
         << " | " << fmt(bx, 4) << " | " << fmt(t / ok, 2) << " | " << ok << '/' << by[name].size() << " |\n";
    }
    md << "\nView-dependent neurons: " << rep.frozen_printed << "/64 (condition 1 as printed), "
       << rep.frozen_inverted << "/64 (inverted).\n";
    for (const auto& r : rep.rows)
      if (r.failed) md << "\nFailed: " << r.variant << " seed " << r.seed << ": " << r.error << "\n";
  }
}

}  // namespace irene
