// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
//
// irene: batch entry points. Exit codes: 0 success, 2 usage, 3 runtime.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "irene/ablation.hpp"
#include "irene/checkpoint.hpp"
#include "irene/edit.hpp"
#include "irene/eval.hpp"
#include "irene/parallel.hpp"
#include "irene/service.hpp"
#include "irene/storage.hpp"
#include "irene/toy_scene.hpp"
#include "irene/trainer.hpp"

namespace fs = std::filesystem;
using namespace irene;

namespace {

constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

struct Common {
  std::uint64_t seed = 0;
  int threads = 0;
};

/// Camera for --view: "edit" (the checkpoint's edit camera), a view name
/// looked up in --data, or 12 pose reals with the edit camera's intrinsics.
Camera resolve_view(const Checkpoint& ck, const std::string& view, const std::string& data) {
  const Camera edit_cam = edit_camera_from(ck.config);
  if (view.empty() || view == "edit") return edit_cam;
  if (!data.empty()) {
    const DatasetBundle b = load_bundle(data);
    for (const auto* set : {&b.train, &b.eval})
      for (const auto& v : *set)
        if (v.name == view) return v.camera;
  }
  if (view.find_first_of("0123456789") != std::string::npos && view.find(' ') != std::string::npos) {
    return edit_cam.with_pose(parse_pose(view));
  }
  throw UsageError("unknown view '" + view + "' (use 'edit', a view name with --data, or 12 pose reals)");
}

bool forward_facing(const Checkpoint& ck) {
  return ck.config.contains("scene") && ck.config.at("scene").value("family", "orbit") == "forward-facing";
}

std::vector<EditVariant> parse_variants(const std::string& s) {
  if (s == "all") return {EditVariant::FullMlp, EditVariant::LastLayer, EditVariant::SoftSeg, EditVariant::Irene};
  std::vector<EditVariant> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_variant(item));
  if (out.empty()) throw UsageError("no variants given");
  return out;
}

void add_edit_flags(CLI::App* sub, EditConfig& ec) {
  sub->add_option("--iters", ec.iterations, "Fit iterations")->capture_default_str();
  sub->add_option("--lr", ec.lr, "Adam learning rate")->capture_default_str();
  sub->add_option("--q", ec.q, "Angular samples of the neuron profile")->capture_default_str();
  sub->add_option("--tau1", ec.tau1, "Condition-1 threshold on std/mean")->capture_default_str();
  sub->add_option("--tau2", ec.tau2, "Condition-2 threshold on min activation")->capture_default_str();
  sub->add_option("--rays", ec.rays_per_iter, "Rays per iteration")->capture_default_str();
  sub->add_option("--seg-init-bias", ec.seg_init_bias, "Initial output bias of the segmentation MLP")
      ->capture_default_str();
  sub->add_flag("--invert-condition1", ec.invert_condition1, "Read condition 1 as std/mean >= tau1");
}

int cmd_gen_scene(const std::string& preset, const fs::path& out, const BundleOptions& opt) {
  const DatasetBundle b = generate_bundle(preset_scene(preset, opt.seed), preset_edit(preset), opt, out);
  std::cout << "wrote " << b.train.size() << " train and " << b.eval.size() << " eval views to " << out.string()
            << " (scene hash " << b.manifest.at("scene_hash").get<std::string>() << ")\n";
  return 0;
}

int cmd_pretrain(const fs::path& data, const fs::path& out, PretrainConfig cfg) {
  const DatasetBundle b = load_bundle(data);
  const PretrainResult r = pretrain(b, cfg, [](const TrainLogRow& row) {
    std::cout << "iter " << row.iter << " loss " << row.loss << " psnr " << row.psnr;
    if (row.eval_psnr >= 0) std::cout << " eval_psnr " << row.eval_psnr;
    std::cout << std::endl;
  });
  fs::path log = out;
  log.replace_extension(".log.csv");
  write_train_log(log, r.log);
  if (r.diverged) {
    std::cerr << "error: training diverged: " << r.error << "\n";
    return kExitRuntime;
  }
  save_checkpoint(out, r.checkpoint);
  double mean = 0;
  const auto scores = evaluate(r.checkpoint, b);
  for (const auto& s : scores) mean += s.psnr;
  mean /= static_cast<double>(scores.size());
  std::cout << "saved " << out.string() << " after " << r.seconds << " s; held-out PSNR " << mean << " dB\n";
  return 0;
}

int cmd_profile(const fs::path& ckpt, const std::string& view, const std::string& data, const EditConfig& ec,
                const fs::path& out) {
  const Checkpoint ck = load_checkpoint(ckpt);
  const Camera cam = resolve_view(ck, view, data);
  const NeuronProfile p =
      profile_neurons(ck.model, cam, ec.q, sweep_step_deg(ec.q, forward_facing(ck)), render_options_from(ck.config));
  const Classification c = classify_neurons(p, ec.tau1, ec.tau2, ec.invert_condition1);
  write_profile_csv(out, p);
  fs::path labels = out.parent_path() / "labels.json";
  std::ofstream(labels) << labels_json(p, c, ec.tau1, ec.tau2, ec.invert_condition1).dump(2) << '\n';
  std::cout << std::count(c.freeze_mask.begin(), c.freeze_mask.end(), 1) << "/64 neurons view-dependent; wrote "
            << out.string() << " and " << labels.string() << "\n";
  return 0;
}

int cmd_recolor(const fs::path& ckpt, const fs::path& edit_png, const std::string& view, const std::string& data,
                EditConfig ec, const std::string& variant, const fs::path& out) {
  ec.variant = parse_variant(variant);
  const Checkpoint ck = load_checkpoint(ckpt);
  const Camera cam = resolve_view(ck, view, data);
  const Image target = read_png(edit_png);
  const FitCache cache = build_fit_cache(ck.model, cam, render_options_from(ck.config));
  std::vector<std::uint8_t> mask;
  Tensor2<float> profile;
  if (ec.variant == EditVariant::Irene) {
    const NeuronProfile p = profile_neurons(ck.model, cache, ec.q, sweep_step_deg(ec.q, forward_facing(ck)));
    mask = classify_neurons(p, ec.tau1, ec.tau2, ec.invert_condition1).freeze_mask;
    profile = p.a;
  }
  FitCallbacks cb;
  cb.progress = [](const FitProgress& p) { std::cout << "iter " << p.iter << " loss " << p.loss << std::endl; };
  const FitResult fit = fit_edit(ck.model, cache, target, ec, mask, cb);
  if (fit.failed) {
    std::cerr << "error: fit failed: " << fit.error << "\n";
    return kExitRuntime;
  }
  Checkpoint session;
  session.model = ck.model;
  session.config = ck.config;
  session.config["edit_config"] = edit_config_to_json(ec);
  session.config["edit_camera"] = camera_to_json(cam);
  session.edit = EditDelta{fit.overlay, fit.freeze_mask, profile};
  save_checkpoint(out, session);
  std::cout << "fitted " << to_string(ec.variant) << " in " << fit.seconds << " s ("
            << fit.trainable_params << " trainable parameters); wrote " << out.string() << "\n";
  return 0;
}

int cmd_render(const fs::path& session, const std::string& pose, int w, int h, bool base, const fs::path& out) {
  const Checkpoint ck = load_checkpoint(session);
  Camera cam = edit_camera_from(ck.config);
  if (!pose.empty()) cam = cam.with_pose(parse_pose(pose));
  if (w > 0 || h > 0) {
    const int nw = w > 0 ? w : cam.width, nh = h > 0 ? h : cam.height;
    const double sx = static_cast<double>(nw) / cam.width, sy = static_cast<double>(nh) / cam.height;
    cam.fx *= sx, cam.cx *= sx, cam.fy *= sy, cam.cy *= sy;
    cam.width = nw, cam.height = nh;
  }
  const EditOverlay* ov = (!base && ck.edit) ? &ck.edit->overlay : nullptr;
  write_png(out, render_image(ck.model, cam, render_options_from(ck.config), ov).image());
  std::cout << "wrote " << out.string() << (ov ? " (edited)" : " (base)") << "\n";
  return 0;
}

int cmd_ablate(const std::vector<std::string>& data_dirs, const std::vector<std::string>& ckpts,
               const std::string& variants, int seeds, std::uint64_t seed0, const EditConfig& ec, bool no_inverted,
               const fs::path& out) {
  if (data_dirs.size() != ckpts.size()) throw UsageError("--data and --ckpt must be given the same number of times");
  if (seeds < 1) throw UsageError("--seeds must be >= 1");
  AblationConfig cfg;
  cfg.variants = parse_variants(variants);
  cfg.seeds.clear();
  for (int i = 0; i < seeds; ++i) cfg.seeds.push_back(seed0 + static_cast<std::uint64_t>(i));
  cfg.edit = ec;
  cfg.compare_condition1 = !no_inverted;
  std::vector<AblationReport> reports;
  for (std::size_t i = 0; i < data_dirs.size(); ++i) {
    const DatasetBundle b = load_bundle(data_dirs[i]);
    const auto bytes = read_file_bytes(ckpts[i]);
    const Checkpoint ck = decode_checkpoint(bytes);
    reports.push_back(run_ablation(b, ck, container_hash(bytes), cfg));
    for (const auto& v : cfg.variants) {
      std::cout << reports.back().scene << " " << to_string(v) << " mean PSNR "
                << mean_psnr(reports.back().rows, to_string(v)) << " dB\n";
    }
  }
  write_ablation_report(out, reports);
  std::cout << "wrote " << (out / "report.csv").string() << " and report.md\n";
  for (const auto& r : reports)
    for (const auto& row : r.rows)
      if (row.failed) return kExitRuntime;
  return 0;
}

int cmd_activations(const fs::path& ckpt, const std::string& view, const std::string& data, int k, int sweep,
                    const fs::path& out) {
  if (sweep < 1) throw UsageError("--sweep must be >= 1");
  const Checkpoint ck = load_checkpoint(ckpt);
  const Camera cam = resolve_view(ck, view, data);
  const RenderOptions opt = render_options_from(ck.config);
  fs::create_directories(out);
  const std::string stem = "neuron_" + std::to_string(k);
  write_png(out / (stem + ".png"), render_neuron_activation(ck.model, cam, k, std::nullopt, opt));
  const double step = sweep_step_deg(sweep, forward_facing(ck));
  for (int i = 0; i < sweep; ++i) {
    const auto dir = swept_direction(cam, i * step);
    write_png(out / (stem + "_sweep_" + std::to_string(i) + ".png"), render_neuron_activation(ck.model, cam, k, dir, opt));
  }
  std::cout << "wrote " << sweep + 1 << " images to " << out.string() << "\n";
  return 0;
}

int cmd_serve(const std::string& addr, const std::string& data_dir) {
  const auto colon = addr.rfind(':');
  if (colon == std::string::npos) throw UsageError("--addr must be host:port");
  const std::string host = addr.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(addr.substr(colon + 1));
  } catch (const std::exception&) {
    throw UsageError("--addr port is not a number");
  }
  if (port < 0 || port > 65535) throw UsageError("--addr port out of range");
  serve(data_dir, host, port, [&](int p) {
    std::cout << "listening on " << host << ':' << p << " (data " << data_dir << ")" << std::endl;
  });
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"irene: neural radiance field recoloring lab"};
  app.require_subcommand(1);
  app.fallthrough();
  Common common;
  app.add_option("--seed", common.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--threads", common.threads, "Worker cap (0 = all cores)")->capture_default_str();

  // gen-scene
  std::string preset;
  fs::path out_dir;
  BundleOptions bopt;
  auto* gen = app.add_subcommand("gen-scene", "Render a toy scene dataset bundle");
  gen->add_option("--preset", preset, "lambertian-duo | glossy-sphere | cluttered-table")->required();
  gen->add_option("--out", out_dir, "Output directory")->required();
  gen->add_option("--train", bopt.n_train, "Training views")->capture_default_str();
  gen->add_option("--eval", bopt.n_eval, "Held-out views")->capture_default_str();
  gen->add_option("--size", bopt.width, "Image side in pixels")->capture_default_str();

  // pretrain
  fs::path data, out_file, ckpt;
  PretrainConfig pcfg;
  auto* pre = app.add_subcommand("pretrain", "Train the radiance model on a bundle");
  pre->add_option("--data", data, "Bundle directory")->required();
  pre->add_option("--out", out_file, "Checkpoint path")->required();
  pre->add_option("--iters", pcfg.iterations, "Iterations")->capture_default_str();
  pre->add_option("--batch", pcfg.batch_rays, "Rays per iteration")->capture_default_str();
  pre->add_option("--lr", pcfg.lr, "Initial learning rate")->capture_default_str();
  pre->add_option("--eval-every", pcfg.eval_every, "Held-out PSNR interval (0 = off)")->capture_default_str();

  // profile
  std::string view = "edit";
  EditConfig ec;
  auto* prof = app.add_subcommand("profile", "Angular neuron profile and labels");
  prof->add_option("--ckpt", ckpt, "Checkpoint")->required();
  prof->add_option("--view", view, "edit, a view name (with --data) or 12 pose reals")->capture_default_str();
  prof->add_option("--data", data, "Bundle directory for view names");
  prof->add_option("--out", out_file, "profile.csv path")->required();
  add_edit_flags(prof, ec);

  // recolor
  fs::path edit_png;
  std::string variant = "irene";
  auto* rec = app.add_subcommand("recolor", "Fit an edit session from one edited view");
  rec->add_option("--ckpt", ckpt, "Base checkpoint")->required();
  rec->add_option("--edit", edit_png, "Edited view PNG")->required();
  rec->add_option("--view", view, "edit, a view name (with --data) or 12 pose reals")->capture_default_str();
  rec->add_option("--data", data, "Bundle directory for view names");
  rec->add_option("--variant", variant, "full-mlp | last-layer | soft-seg | irene")->capture_default_str();
  rec->add_option("--out", out_file, "Session container path")->required();
  add_edit_flags(rec, ec);

  // render
  fs::path session;
  std::string pose;
  int width = 0, height = 0;
  bool base = false;
  auto* ren = app.add_subcommand("render", "Render a session or checkpoint");
  ren->add_option("--session", session, "Session or checkpoint container")->required();
  ren->add_option("--pose", pose, "12 reals, row-major 3x4 camera-to-world (default: edit view)");
  ren->add_option("--width", width, "Width (default: edit camera)");
  ren->add_option("--height", height, "Height (default: edit camera)");
  ren->add_option("--out", out_file, "PNG path")->required();
  ren->add_flag("--base", base, "Ignore the edit");

  // ablate
  std::vector<std::string> data_dirs, ckpts;
  std::string variants = "all";
  int seeds = 3;
  bool no_inverted = false;
  auto* abl = app.add_subcommand("ablate", "Fit every variant and seed; write report.csv and report.md");
  abl->add_option("--data", data_dirs, "Bundle directory (repeatable)")->required();
  abl->add_option("--ckpt", ckpts, "Checkpoint for each --data")->required();
  abl->add_option("--variants", variants, "all or a comma list")->capture_default_str();
  abl->add_option("--seeds", seeds, "Seeds per variant, counting up from --seed")->capture_default_str();
  abl->add_option("--out", out_dir, "Report directory")->required();
  abl->add_flag("--no-inverted", no_inverted, "Skip the inverted condition-1 irene cells");
  add_edit_flags(abl, ec);

  // activations
  int neuron = 0, sweep = 4;
  auto* act = app.add_subcommand("activations", "Render one neuron's volume-rendered activation");
  act->add_option("--ckpt", ckpt, "Checkpoint")->required();
  act->add_option("--neuron", neuron, "Neuron index in [0, 64)")->required();
  act->add_option("--sweep", sweep, "Direction overrides across the sweep span")->capture_default_str();
  act->add_option("--view", view, "edit, a view name (with --data) or 12 pose reals")->capture_default_str();
  act->add_option("--data", data, "Bundle directory for view names");
  act->add_option("--out", out_dir, "Output directory")->required();

  // serve
  std::string addr = "127.0.0.1:8080";
  const char* env_dir = std::getenv("IRENE_DATA_DIR");
  std::string data_dir = env_dir ? env_dir : "irene-data";
  auto* srv = app.add_subcommand("serve", "HTTP editing service");
  srv->add_option("--addr", addr, "Listen address host:port")->capture_default_str();
  srv->add_option("--data-dir", data_dir, "Storage directory (default $IRENE_DATA_DIR)")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    set_thread_count(common.threads);
    bopt.height = bopt.width;
    bopt.seed = common.seed;
    pcfg.seed = common.seed;
    ec.seed = common.seed;
    if (*gen) return cmd_gen_scene(preset, out_dir, bopt);
    if (*pre) return cmd_pretrain(data, out_file, pcfg);
    if (*prof) return cmd_profile(ckpt, view, data.string(), ec, out_file);
    if (*rec) return cmd_recolor(ckpt, edit_png, view, data.string(), ec, variant, out_file);
    if (*ren) return cmd_render(session, pose, width, height, base, out_file);
    if (*abl) return cmd_ablate(data_dirs, ckpts, variants, seeds, common.seed, ec, no_inverted, out_dir);
    if (*act) return cmd_activations(ckpt, view, data.string(), neuron, sweep, out_dir);
    if (*srv) return cmd_serve(addr, data_dir);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
