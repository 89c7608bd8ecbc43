// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/toy_scene.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include "irene/hashing.hpp"
#include "irene/parallel.hpp"

namespace irene {

namespace {

using json = nlohmann::json;

constexpr double kInf = std::numeric_limits<double>::infinity();

Vec3 add(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 scale(const Vec3& a, double s) { return {a[0] * s, a[1] * s, a[2] * s}; }

struct Hit {
  double t = kInf;
  Vec3 normal{0, 0, 1};
  const ToyObject* object = nullptr;
};

void intersect_sphere(const ToyObject& o, const Vec3& org, const Vec3& dir, Hit& best) {
  const Vec3 oc = sub(org, o.center);
  const double b = dot(oc, dir);
  const double c = dot(oc, oc) - o.radius * o.radius;
  const double disc = b * b - c;
  if (disc < 0) return;
  const double sq = std::sqrt(disc);
  double t = -b - sq;
  if (t <= 1e-9) t = -b + sq;
  if (t <= 1e-9 || t >= best.t) return;
  best.t = t;
  best.normal = normalized(sub(add(org, scale(dir, t)), o.center));
  best.object = &o;
}

void intersect_box(const ToyObject& o, const Vec3& org, const Vec3& dir, Hit& best) {
  double t0 = -kInf, t1 = kInf;
  int axis0 = 0, axis1 = 0;
  for (std::size_t d = 0; d < 3; ++d) {
    const double lo = o.center[d] - o.half_extent[d], hi = o.center[d] + o.half_extent[d];
    if (std::abs(dir[d]) < 1e-15) {
      if (org[d] < lo || org[d] > hi) return;
      continue;
    }
    double ta = (lo - org[d]) / dir[d], tb = (hi - org[d]) / dir[d];
    if (ta > tb) std::swap(ta, tb);
    if (ta > t0) {
      t0 = ta;
      axis0 = static_cast<int>(d);
    }
    if (tb < t1) {
      t1 = tb;
      axis1 = static_cast<int>(d);
    }
  }
  if (t0 > t1) return;
  double t = t0;
  int axis = axis0;
  if (t <= 1e-9) {
    t = t1;
    axis = axis1;
  }
  if (t <= 1e-9 || t >= best.t) return;
  Vec3 n{0, 0, 0};
  n[static_cast<std::size_t>(axis)] = dir[static_cast<std::size_t>(axis)] > 0 ? -1.0 : 1.0;
  best.t = t;
  best.normal = n;
  best.object = &o;
}

void intersect_plane(const ToyObject& o, const Vec3& org, const Vec3& dir, Hit& best) {
  if (std::abs(dir[2]) < 1e-15) return;
  const double t = (o.center[2] - org[2]) / dir[2];
  if (t <= 1e-9 || t >= best.t) return;
  const Vec3 p = add(org, scale(dir, t));
  if (std::abs(p[0] - o.center[0]) > o.half_extent[0] || std::abs(p[1] - o.center[1]) > o.half_extent[1]) return;
  best.t = t;
  best.normal = {0, 0, dir[2] < 0 ? 1.0 : -1.0};
  best.object = &o;
}

bool on_cut_side(const ToyObject& o, const Vec3& p) {
  return o.cut && dot(o.cut->normal, sub(p, o.center)) > o.cut->offset;
}

Rgb shade(const ToyScene& scene, const Hit& hit, const Vec3& p, const Vec3& dir) {
  const ToyObject& o = *hit.object;
  const Rgb albedo = on_cut_side(o, p) ? o.cut->albedo : o.albedo;
  const Vec3 view = scale(dir, -1.0);
  double diffuse = scene.ambient, spec = 0;
  for (const auto& light : scene.lights) {
    const Vec3 l = normalized(light.direction);
    const double ndl = dot(hit.normal, l);
    if (ndl <= 0) continue;
    diffuse += light.intensity * ndl;
    if (o.ks > 0) {
      const Vec3 r = sub(scale(hit.normal, 2 * ndl), l);
      const double rv = std::max(0.0, dot(r, view));
      spec += light.intensity * o.ks * std::pow(rv, o.shininess);
    }
  }
  Rgb c{};
  for (std::size_t k = 0; k < 3; ++k) c[k] = std::clamp(albedo[k] * diffuse + spec, 0.0, 1.0);
  return c;
}

Hit trace(const ToyScene& scene, const Vec3& org, const Vec3& dir) {
  Hit best;
  for (const auto& o : scene.objects) {
    switch (o.shape) {
      case ShapeKind::Sphere: intersect_sphere(o, org, dir, best); break;
      case ShapeKind::Box: intersect_box(o, org, dir, best); break;
      case ShapeKind::Plane: intersect_plane(o, org, dir, best); break;
    }
  }
  return best;
}

Vec3 pixel_dir(const Camera& cam, int x, int y) {
  const double u = (x + 0.5 - cam.cx) / cam.fx;
  const double v = (y + 0.5 - cam.cy) / cam.fy;
  const auto& m = cam.cam_to_world;
  return normalized({m[0] * u + m[1] * v + m[2], m[4] * u + m[5] * v + m[6], m[8] * u + m[9] * v + m[10]});
}

json vec_json(const std::array<double, 3>& v) { return json::array({v[0], v[1], v[2]}); }
std::array<double, 3> json_vec(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

std::string shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Sphere: return "sphere";
    case ShapeKind::Box: return "box";
    case ShapeKind::Plane: return "plane";
  }
  return "?";
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << text;
  if (!f) throw IoError("write failed: " + path.string());
}

Vec3 unit(double x, double y, double z) { return normalized({x, y, z}); }

}  // namespace

// ---------------------------------------------------------------------------

void ToyScene::validate() const {
  std::set<int> ids;
  for (const auto& o : objects) {
    if (!ids.insert(o.id).second) throw UsageError("scene: duplicate object id " + std::to_string(o.id));
    for (double a : o.albedo)
      if (a < 0 || a > 1) throw UsageError("scene: albedo outside [0,1] on object " + std::to_string(o.id));
    if (o.ks < 0 || o.ks > 1) throw UsageError("scene: ks outside [0,1] on object " + std::to_string(o.id));
  }
}

const ToyObject* ToyScene::find(int id) const {
  for (const auto& o : objects)
    if (o.id == id) return &o;
  return nullptr;
}

RaytraceResult raytrace(const ToyScene& scene, const Camera& camera) {
  camera.validate();
  RaytraceResult out;
  out.rgb = Image(camera.width, camera.height, 3);
  out.ids.assign(out.rgb.pixel_count(), -1);
  out.cut.assign(out.rgb.pixel_count(), 0);
  const Vec3 org = camera.center();
  parallel_for(static_cast<std::size_t>(camera.height), [&](std::size_t row, int) {
    const int y = static_cast<int>(row);
    for (int x = 0; x < camera.width; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * camera.width + x;
      const Vec3 dir = pixel_dir(camera, x, y);
      const Hit hit = trace(scene, org, dir);
      Rgb c = scene.background;
      if (hit.object) {
        const Vec3 pos = add(org, scale(dir, hit.t));
        c = shade(scene, hit, pos, dir);
        out.ids[p] = hit.object->id;
        out.cut[p] = on_cut_side(*hit.object, pos) ? 1 : 0;
      }
      for (std::size_t k = 0; k < 3; ++k) out.rgb.data[3 * p + k] = static_cast<float>(c[k]);
    }
  });
  return out;
}

ToyScene apply_edit(const ToyScene& scene, const EditSpec& edit) {
  ToyScene out = scene;
  for (int id : edit.targets) {
    auto it = std::find_if(out.objects.begin(), out.objects.end(), [&](const ToyObject& o) { return o.id == id; });
    if (it == out.objects.end()) throw UsageError("edit targets unknown object id " + std::to_string(id));
    const Rgb edited = edit.mode == EditSpec::Mode::AlbedoReplace
                           ? edit.albedo
                           : hsv_shift(it->albedo, edit.dh, edit.ds, edit.dv);
    if (edit.region == EditSpec::Region::FullObject) {
      it->albedo = edited;
      if (it->cut) it->cut->albedo = edit.mode == EditSpec::Mode::AlbedoReplace
                                         ? edit.albedo
                                         : hsv_shift(it->cut->albedo, edit.dh, edit.ds, edit.dv);
    } else {
      it->cut = AlbedoCut{normalized(edit.cut_normal), edit.cut_offset, edited};
    }
  }
  return out;
}

std::vector<std::uint8_t> edit_mask(const ToyScene& scene, const EditSpec& edit, const Camera& camera) {
  for (int id : edit.targets)
    if (!scene.find(id)) throw UsageError("edit targets unknown object id " + std::to_string(id));
  // the cut has to exist on the traced scene for half-object regions
  const ToyScene traced = edit.region == EditSpec::Region::HalfObject ? apply_edit(scene, edit) : scene;
  const RaytraceResult rt = raytrace(traced, camera);
  std::vector<std::uint8_t> mask(rt.ids.size(), 0);
  const std::set<int> targets(edit.targets.begin(), edit.targets.end());
  for (std::size_t p = 0; p < mask.size(); ++p) {
    if (!targets.count(rt.ids[p])) continue;
    mask[p] = edit.region == EditSpec::Region::FullObject || rt.cut[p] ? 1 : 0;
  }
  return mask;
}

// ---------------------------------------------------------------------------

std::vector<std::string> preset_names() { return {"lambertian-duo", "glossy-sphere", "cluttered-table"}; }

ToyScene preset_scene(const std::string& name, std::uint64_t seed) {
  ToyScene s;
  s.name = name;
  s.seed = seed;
  s.ambient = 0.2;
  s.lights = {{unit(0.5, -0.4, 0.8), 0.65}, {unit(-0.6, 0.5, 0.4), 0.3}};
  auto sphere = [](int id, Vec3 c, double r, Rgb albedo, double ks = 0, double shin = 32) {
    ToyObject o;
    o.shape = ShapeKind::Sphere;
    o.id = id;
    o.center = c;
    o.radius = r;
    o.albedo = albedo;
    o.ks = ks;
    o.shininess = shin;
    return o;
  };
  auto box = [](int id, Vec3 c, Vec3 half, Rgb albedo, double ks = 0, double shin = 32) {
    ToyObject o;
    o.shape = ShapeKind::Box;
    o.id = id;
    o.center = c;
    o.half_extent = half;
    o.albedo = albedo;
    o.ks = ks;
    o.shininess = shin;
    return o;
  };
  if (name == "lambertian-duo") {
    s.objects = {sphere(1, {-0.35, -0.1, 0.0}, 0.38, {0.85, 0.2, 0.15}),
                 box(2, {0.4, 0.25, -0.05}, {0.22, 0.22, 0.3}, {0.2, 0.35, 0.85})};
  } else if (name == "glossy-sphere") {
    s.objects = {sphere(1, {0.0, 0.0, 0.0}, 0.5, {0.8, 0.12, 0.1}, 0.7, 40),
                 box(2, {0.55, -0.5, -0.3}, {0.18, 0.18, 0.18}, {0.9, 0.75, 0.2})};
  } else if (name == "cluttered-table") {
    ToyObject table;
    table.shape = ShapeKind::Plane;
    table.id = 1;
    table.center = {0, 0, -0.45};
    table.half_extent = {0.85, 0.85, 0};
    table.albedo = {0.75, 0.7, 0.6};
    s.objects = {table,
                 sphere(2, {-0.35, -0.3, -0.17}, 0.28, {0.8, 0.12, 0.1}, 0.3, 20),
                 box(3, {0.35, -0.35, -0.27}, {0.15, 0.15, 0.18}, {0.75, 0.15, 0.2}),
                 sphere(4, {0.3, 0.35, -0.22}, 0.23, {0.2, 0.3, 0.8}, 0.4, 30),
                 box(5, {-0.35, 0.4, -0.2}, {0.14, 0.2, 0.25}, {0.85, 0.7, 0.2})};
  } else {
    throw UsageError("unknown scene preset '" + name + "'");
  }
  s.validate();
  return s;
}

EditSpec preset_edit(const std::string& name) {
  EditSpec e;
  e.mode = EditSpec::Mode::HsvShift;
  e.dh = 120;
  if (name == "lambertian-duo" || name == "glossy-sphere") {
    e.targets = {1};
  } else if (name == "cluttered-table") {
    e.targets = {2, 3};
  } else {
    throw UsageError("unknown scene preset '" + name + "'");
  }
  return e;
}

// ---------------------------------------------------------------------------

std::vector<Camera> sample_poses(const ToyScene& scene, int count, int width, int height, std::uint64_t seed,
                                 bool eval_set) {
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ull + (eval_set ? 1 : 0));
  std::uniform_real_distribution<double> jitter(-0.3, 0.3);
  const bool orbit = scene.family == CameraFamily::Orbit;
  std::uniform_real_distribution<double> elev = orbit ? std::uniform_real_distribution<double>(15, 50)
                                                      : std::uniform_real_distribution<double>(5, 30);
  std::vector<Camera> cams;
  for (int i = 0; i < count; ++i) {
    double az, el;
    const double slot = (i + (eval_set ? 0.5 : 0.0)) / count;
    if (orbit) {
      az = 360.0 * (slot + jitter(rng) / count);
    } else {
      az = -40.0 + 80.0 * (slot + jitter(rng) / count);
    }
    el = elev(rng);
    if (!eval_set && i == 0) {
      az = 0;
      el = orbit ? 30 : 15;
    }
    const double a = az * std::numbers::pi / 180.0, e = el * std::numbers::pi / 180.0;
    const double r = scene.camera_radius;
    const Vec3 eye{r * std::cos(e) * std::cos(a), r * std::cos(e) * std::sin(a), r * std::sin(e)};
    cams.push_back(Camera::look_at(eye, {0, 0, 0}, width, height, scene.fov_deg));
  }
  return cams;
}

json camera_to_json(const Camera& cam) {
  return json{{"width", cam.width}, {"height", cam.height}, {"fx", cam.fx}, {"fy", cam.fy},
              {"cx", cam.cx},       {"cy", cam.cy},         {"pose", cam.cam_to_world}};
}

Camera camera_from_json(const json& j) {
  Camera c;
  c.width = j.at("width").get<int>();
  c.height = j.at("height").get<int>();
  c.fx = j.at("fx").get<double>();
  c.fy = j.at("fy").get<double>();
  c.cx = j.at("cx").get<double>();
  c.cy = j.at("cy").get<double>();
  c.cam_to_world = j.at("pose").get<std::array<double, 12>>();
  c.validate();
  return c;
}

json scene_to_json(const ToyScene& scene) {
  json objs = json::array();
  for (const auto& o : scene.objects) {
    json jo{{"id", o.id},       {"shape", shape_name(o.shape)}, {"center", vec_json(o.center)},
            {"albedo", vec_json(o.albedo)}, {"ks", o.ks},        {"shininess", o.shininess}};
    if (o.shape == ShapeKind::Sphere) jo["radius"] = o.radius;
    else jo["half_extent"] = vec_json(o.half_extent);
    if (o.cut) {
      jo["cut"] = {{"normal", vec_json(o.cut->normal)}, {"offset", o.cut->offset}, {"albedo", vec_json(o.cut->albedo)}};
    }
    objs.push_back(jo);
  }
  json lights = json::array();
  for (const auto& l : scene.lights) lights.push_back({{"direction", vec_json(l.direction)}, {"intensity", l.intensity}});
  return json{{"name", scene.name},
              {"objects", objs},
              {"lights", lights},
              {"ambient", scene.ambient},
              {"background", vec_json(scene.background)},
              {"seed", scene.seed},
              {"family", scene.family == CameraFamily::Orbit ? "orbit" : "forward-facing"},
              {"camera_radius", scene.camera_radius},
              {"fov_deg", scene.fov_deg}};
}

json edit_to_json(const EditSpec& e) {
  json j{{"targets", e.targets},
         {"mode", e.mode == EditSpec::Mode::AlbedoReplace ? "albedo-replace" : "hsv-shift"},
         {"region", e.region == EditSpec::Region::FullObject ? "full-object" : "half-object"}};
  if (e.mode == EditSpec::Mode::AlbedoReplace) j["albedo"] = vec_json(e.albedo);
  else j["hsv"] = json::array({e.dh, e.ds, e.dv});
  if (e.region == EditSpec::Region::HalfObject) {
    j["cut_normal"] = vec_json(e.cut_normal);
    j["cut_offset"] = e.cut_offset;
  }
  return j;
}

// ---------------------------------------------------------------------------

const ViewRecord& DatasetBundle::view(const std::string& name) const {
  for (const auto* set : {&train, &eval})
    for (const auto& v : *set)
      if (v.name == name) return v;
  throw UsageError("bundle has no view named '" + name + "'");
}

Image DatasetBundle::rgb(const std::string& name) const { return read_png(root / "rgb" / (name + ".png")); }

Image DatasetBundle::edited_rgb(const std::string& name) const {
  return read_png(root / "edited_rgb" / (name + ".png"));
}

std::vector<std::uint8_t> DatasetBundle::mask(const std::string& name) const {
  return mask_bits(read_png(root / "mask" / (name + ".png")));
}

DatasetBundle generate_bundle(const ToyScene& scene, const EditSpec& edit, const BundleOptions& opt,
                              const std::filesystem::path& out_dir) {
  scene.validate();
  if (opt.n_train < 20) throw UsageError("generate_bundle: need at least 20 training views");
  if (opt.n_eval < 5) throw UsageError("generate_bundle: need at least 5 evaluation views");
  const ToyScene edited = apply_edit(scene, edit);
  std::error_code ec;
  for (const char* sub : {"rgb", "mask", "edited_rgb"}) {
    std::filesystem::create_directories(out_dir / sub, ec);
    if (ec) throw IoError("cannot create " + (out_dir / sub).string() + ": " + ec.message());
  }
  const auto train = sample_poses(scene, opt.n_train, opt.width, opt.height, opt.seed, false);
  const auto eval = sample_poses(scene, opt.n_eval, opt.width, opt.height, opt.seed, true);

  auto view_name = [](const char* prefix, int i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s_%03d", prefix, i);
    return std::string(buf);
  };
  std::ostringstream poses;
  json train_names = json::array(), eval_names = json::array();
  auto emit = [&](const std::string& name, const Camera& cam, bool write_edit) {
    const RaytraceResult rt = raytrace(scene, cam);
    write_png(out_dir / "rgb" / (name + ".png"), rt.rgb);
    write_png(out_dir / "mask" / (name + ".png"), mask_image(edit_mask(scene, edit, cam), cam.width, cam.height));
    if (write_edit) write_png(out_dir / "edited_rgb" / (name + ".png"), raytrace(edited, cam).rgb);
    poses << name << ' ' << format_pose(cam.cam_to_world) << '\n';
  };
  for (int i = 0; i < opt.n_train; ++i) {
    const auto name = view_name("train", i);
    emit(name, train[static_cast<std::size_t>(i)], i == 0);
    train_names.push_back(name);
  }
  for (int i = 0; i < opt.n_eval; ++i) {
    const auto name = view_name("eval", i);
    emit(name, eval[static_cast<std::size_t>(i)], true);
    eval_names.push_back(name);
  }
  write_text(out_dir / "poses.txt", poses.str());

  const json scene_json = scene_to_json(scene);
  const Camera& c0 = train.front();
  json manifest{{"scene", scene_json},
                {"scene_hash", to_hex(sha256(scene_json.dump()))},
                {"edit", edit_to_json(edit)},
                {"seed", opt.seed},
                {"width", opt.width},
                {"height", opt.height},
                {"fx", c0.fx},
                {"fy", c0.fy},
                {"cx", c0.cx},
                {"cy", c0.cy},
                {"background", vec_json(scene.background)},
                {"aabb", {{"min", scene.bounds.min}, {"max", scene.bounds.max}}},
                {"edited_view", train_names.front()},
                {"train", train_names},
                {"eval", eval_names}};
  write_text(out_dir / "manifest.json", manifest.dump(2) + "\n");
  return load_bundle(out_dir);
}

DatasetBundle load_bundle(const std::filesystem::path& dir) {
  DatasetBundle b;
  b.root = dir;
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw IoError("cannot open " + (dir / "manifest.json").string());
  try {
    b.manifest = json::parse(mf);
  } catch (const json::exception& e) {
    throw FormatError((dir / "manifest.json").string() + ": " + e.what());
  }
  const auto& m = b.manifest;
  Camera intr;
  intr.width = m.at("width").get<int>();
  intr.height = m.at("height").get<int>();
  intr.fx = m.at("fx").get<double>();
  intr.fy = m.at("fy").get<double>();
  intr.cx = m.at("cx").get<double>();
  intr.cy = m.at("cy").get<double>();
  b.background = json_vec(m.at("background"));
  b.bounds.min = m.at("aabb").at("min").get<std::array<double, 3>>();
  b.bounds.max = m.at("aabb").at("max").get<std::array<double, 3>>();
  b.edited_view = m.at("edited_view").get<std::string>();

  std::ifstream pf(dir / "poses.txt");
  if (!pf) throw IoError("cannot open " + (dir / "poses.txt").string());
  std::map<std::string, Camera> cams;
  std::string line;
  while (std::getline(pf, line)) {
    if (line.empty()) continue;
    const auto sp = line.find(' ');
    if (sp == std::string::npos) throw FormatError("poses.txt: malformed line '" + line + "'");
    cams[line.substr(0, sp)] = intr.with_pose(parse_pose(line.substr(sp + 1)));
  }
  auto collect = [&](const char* key, std::vector<ViewRecord>& out) {
    for (const auto& n : m.at(key)) {
      const auto name = n.get<std::string>();
      auto it = cams.find(name);
      if (it == cams.end()) throw FormatError("poses.txt has no pose for view " + name);
      out.push_back({name, it->second});
    }
  };
  collect("train", b.train);
  collect("eval", b.eval);
  return b;
}

}  // namespace irene
