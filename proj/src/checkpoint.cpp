// Copyright 2026 The irene-lab Authors
// SPDX-License-Identifier: Apache-2.0
#include "irene/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <set>

#include "irene/hashing.hpp"

namespace irene {

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

namespace {

using json = nlohmann::json;

constexpr char kMagic[4] = {'I', 'R', 'N', 'E'};
constexpr std::size_t kHeader = 16;
constexpr std::size_t kTrailer = 32;

struct Entry {
  std::string name;
  std::string dtype;  // f32 | u8
  std::size_t rows = 0, cols = 0;
  std::vector<std::uint8_t> bytes;
};

Entry f32_entry(const std::string& name, const Tensor2<float>& t) {
  Entry e{name, "f32", t.rows(), t.cols(), std::vector<std::uint8_t>(t.size() * sizeof(float))};
  if (!e.bytes.empty()) std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
  return e;
}

/// [W | b] packed out×(in+1).
Entry layer_entry(const std::string& name, const DenseLayer<float>& l) {
  Tensor2<float> packed(l.out_dim(), l.in_dim() + 1);
  for (std::size_t r = 0; r < l.out_dim(); ++r) {
    std::copy_n(l.weight.value.row(r).data(), l.in_dim(), packed.row(r).data());
    packed(r, l.in_dim()) = l.bias.value.data()[r];
  }
  return f32_entry(name, packed);
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

class TensorReader {
 public:
  TensorReader(const json& index, std::span<const std::uint8_t> payload) : payload_(payload) {
    for (const auto& e : index) {
      const auto name = e.at("name").get<std::string>();
      if (!entries_.emplace(name, e).second) throw FormatError("container: tensor '" + name + "' listed twice");
      const auto off = e.at("offset").get<std::uint64_t>(), n = e.at("nbytes").get<std::uint64_t>();
      if (off > payload.size() || n > payload.size() - off) {
        throw FormatError("container: tensor '" + name + "' lies outside the payload");
      }
    }
  }

  bool has(const std::string& name) const { return entries_.count(name) != 0; }

  Tensor2<float> f32(const std::string& name, std::size_t rows, std::size_t cols) const {
    const json& e = find(name, "f32");
    const auto shape = e.at("shape").get<std::vector<std::size_t>>();
    if (shape.size() != 2 || (rows && shape[0] != rows) || (cols && shape[1] != cols)) {
      throw FormatError("container: tensor '" + name + "' has an unexpected shape");
    }
    Tensor2<float> t(shape[0], shape[1]);
    if (e.at("nbytes").get<std::size_t>() != t.size() * sizeof(float)) {
      throw FormatError("container: tensor '" + name + "' byte count does not match its shape");
    }
    if (t.size()) std::memcpy(t.data(), payload_.data() + e.at("offset").get<std::size_t>(), t.size() * sizeof(float));
    return t;
  }

  std::vector<std::uint8_t> u8(const std::string& name) const {
    const json& e = find(name, "u8");
    const auto off = e.at("offset").get<std::size_t>(), n = e.at("nbytes").get<std::size_t>();
    return {payload_.begin() + static_cast<std::ptrdiff_t>(off), payload_.begin() + static_cast<std::ptrdiff_t>(off + n)};
  }

  void layer(const std::string& name, DenseLayer<float>& l) const {
    const Tensor2<float> packed = f32(name, l.out_dim(), l.in_dim() + 1);
    for (std::size_t r = 0; r < l.out_dim(); ++r) {
      std::copy_n(packed.row(r).data(), l.in_dim(), l.weight.value.row(r).data());
      l.bias.value.data()[r] = packed(r, l.in_dim());
    }
  }

 private:
  const json& find(const std::string& name, const char* dtype) const {
    auto it = entries_.find(name);
    if (it == entries_.end()) throw FormatError("container: missing tensor '" + name + "'");
    if (it->second.at("dtype").get<std::string>() != dtype) {
      throw FormatError("container: tensor '" + name + "' is not " + dtype);
    }
    return it->second;
  }

  std::span<const std::uint8_t> payload_;
  std::map<std::string, json> entries_;
};

}  // namespace

std::vector<std::string> required_tensor_names() {
  return {"grid.tables", "density.l0", "density.l1", "color.l0",  "color.l1",        "color.last.W",
          "color.last.b", "seg.l0",    "seg.l1",     "edit.lastW", "edit.freeze_mask"};
}

json model_config_to_json(const ModelConfig& cfg) {
  return json{{"grid",
               {{"levels", cfg.grid.levels},
                {"features_per_level", cfg.grid.features_per_level},
                {"log2_table_size", cfg.grid.log2_table_size},
                {"base_resolution", cfg.grid.base_resolution},
                {"finest_resolution", cfg.grid.finest_resolution}}},
              {"aabb", {{"min", cfg.bounds.min}, {"max", cfg.bounds.max}}},
              {"seed", cfg.seed}};
}

ModelConfig model_config_from_json(const json& j) {
  ModelConfig cfg;
  const auto& g = j.at("grid");
  cfg.grid.levels = g.at("levels").get<int>();
  cfg.grid.features_per_level = g.at("features_per_level").get<int>();
  cfg.grid.log2_table_size = g.at("log2_table_size").get<int>();
  cfg.grid.base_resolution = g.at("base_resolution").get<int>();
  cfg.grid.finest_resolution = g.at("finest_resolution").get<int>();
  cfg.grid.validate();
  cfg.bounds.min = j.at("aabb").at("min").get<std::array<double, 3>>();
  cfg.bounds.max = j.at("aabb").at("max").get<std::array<double, 3>>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  const auto& m = ck.model;
  std::vector<Entry> entries;
  entries.push_back(f32_entry("grid.tables", m.grid.tables().value));
  entries.push_back(layer_entry("density.l0", m.density.l0));
  entries.push_back(layer_entry("density.l1", m.density.l1));
  entries.push_back(layer_entry("color.l0", m.color.l0));
  entries.push_back(layer_entry("color.l1", m.color.l1));
  entries.push_back(f32_entry("color.last.W", m.color.last.weight.value));
  entries.push_back(f32_entry("color.last.b", m.color.last.bias.value));
  const SegMlp<float>& seg = ck.edit && ck.edit->overlay.seg ? *ck.edit->overlay.seg : m.seg;
  entries.push_back(layer_entry("seg.l0", seg.l0));
  entries.push_back(layer_entry("seg.l1", seg.l1));
  if (m.occupancy.enabled()) {
    const auto r = static_cast<std::size_t>(m.occupancy.resolution);
    entries.push_back({"grid.occupancy", "u8", r * r, r, m.occupancy.bits});
  }
  if (ck.edit) {
    const auto& ov = ck.edit->overlay;
    if (ck.edit->freeze_mask.size() != kHiddenWidth) throw UsageError("edit freeze mask must have 64 entries");
    entries.push_back(f32_entry("edit.lastW", ov.last_weight));
    entries.push_back(f32_entry("edit.lastb", ov.last_bias));
    entries.push_back({"edit.freeze_mask", "u8", 1, kHiddenWidth, ck.edit->freeze_mask});
    if (ov.color_clone) {
      entries.push_back(layer_entry("edit.color.l0", ov.color_clone->l0));
      entries.push_back(layer_entry("edit.color.l1", ov.color_clone->l1));
    }
    if (!ck.edit->profile.empty()) entries.push_back(f32_entry("edit.profile", ck.edit->profile));
  } else {
    // a base checkpoint carries the unedited clone so the tensor list is fixed
    entries.push_back(f32_entry("edit.lastW", m.color.last.weight.value));
    entries.push_back({"edit.freeze_mask", "u8", 1, kHiddenWidth, std::vector<std::uint8_t>(kHiddenWidth, 0)});
  }

  json index = json::array();
  std::vector<std::uint8_t> payload;
  for (const auto& e : entries) {
    index.push_back({{"name", e.name},
                     {"dtype", e.dtype},
                     {"shape", {e.rows, e.cols}},
                     {"offset", payload.size()},
                     {"nbytes", e.bytes.size()}});
    payload.insert(payload.end(), e.bytes.begin(), e.bytes.end());
  }
  json config = ck.config;
  config["model"] = model_config_to_json(m.config());
  json edit_meta = nullptr;
  if (ck.edit) edit_meta = {{"variant", to_string(ck.edit->overlay.variant)}};
  config["edit_state"] = edit_meta;
  const std::string manifest = json{{"tensors", index}, {"config", config}}.dump();

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  put_u32(out, kCheckpointVersion);
  put_u64(out, manifest.size());
  out.insert(out.end(), manifest.begin(), manifest.end());
  out.insert(out.end(), payload.begin(), payload.end());
  const Digest d = sha256(std::span<const std::uint8_t>(out.data() + kHeader, out.size() - kHeader));
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

std::string container_hash(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeader + kTrailer) throw FormatError("container: truncated");
  Digest d;
  std::copy_n(bytes.end() - kTrailer, kTrailer, d.begin());
  return to_hex(d);
}

Checkpoint decode_checkpoint(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeader + kTrailer) throw FormatError("container: truncated");
  if (std::memcmp(bytes.data(), kMagic, 4) != 0) throw FormatError("container: bad magic");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) throw FormatError("container: unsupported version " + std::to_string(version));
  const std::uint64_t mlen = get_u64(bytes.data() + 8);
  if (mlen > bytes.size() - kHeader - kTrailer) throw FormatError("container: manifest length out of range");
  const auto body = bytes.subspan(kHeader, bytes.size() - kHeader - kTrailer);
  const Digest d = sha256(body);
  if (!std::equal(d.begin(), d.end(), bytes.end() - kTrailer)) {
    throw FormatError("container: hash mismatch (stored " + container_hash(bytes) + ", computed " + to_hex(d) + ")");
  }
  json manifest;
  try {
    manifest = json::parse(body.begin(), body.begin() + static_cast<std::ptrdiff_t>(mlen));
  } catch (const json::exception& e) {
    throw FormatError(std::string("container: bad manifest: ") + e.what());
  }
  try {
    const TensorReader rd(manifest.at("tensors"), body.subspan(mlen));
    for (const auto& n : required_tensor_names())
      if (!rd.has(n)) throw FormatError("container: missing tensor '" + n + "'");

    Checkpoint ck;
    ck.config = manifest.at("config");
    ModelConfig mc = model_config_from_json(ck.config.at("model"));
    ck.model = FieldModel<float>(mc);
    auto& m = ck.model;
    m.grid.tables().value = rd.f32("grid.tables", m.grid.tables().value.rows(), m.grid.tables().value.cols());
    rd.layer("density.l0", m.density.l0);
    rd.layer("density.l1", m.density.l1);
    rd.layer("color.l0", m.color.l0);
    rd.layer("color.l1", m.color.l1);
    m.color.last.weight.value = rd.f32("color.last.W", 3, kHiddenWidth);
    m.color.last.bias.value = rd.f32("color.last.b", 1, 3);
    rd.layer("seg.l0", m.seg.l0);
    rd.layer("seg.l1", m.seg.l1);
    if (rd.has("grid.occupancy")) {
      m.occupancy.bits = rd.u8("grid.occupancy");
      const std::size_t r = static_cast<std::size_t>(std::llround(std::cbrt(double(m.occupancy.bits.size()))));
      if (r * r * r != m.occupancy.bits.size() || r == 0) {
        throw FormatError("container: grid.occupancy is not a cube");
      }
      m.occupancy.resolution = static_cast<int>(r);
    }

    const auto freeze = rd.u8("edit.freeze_mask");
    if (freeze.size() != kHiddenWidth) throw FormatError("container: edit.freeze_mask must hold 64 entries");
    const json& meta = ck.config.at("edit_state");
    if (!meta.is_null()) {
      EditDelta e;
      e.freeze_mask = freeze;
      e.overlay.variant = parse_variant(meta.at("variant").get<std::string>());
      e.overlay.last_weight = rd.f32("edit.lastW", 3, kHiddenWidth);
      e.overlay.last_bias = rd.has("edit.lastb") ? rd.f32("edit.lastb", 1, 3) : m.color.last.bias.value;
      if (rd.has("edit.color.l0")) {
        ColorMlp<float> clone = m.color;
        rd.layer("edit.color.l0", clone.l0);
        rd.layer("edit.color.l1", clone.l1);
        clone.last.weight.value = e.overlay.last_weight;
        clone.last.bias.value = e.overlay.last_bias;
        e.overlay.color_clone = clone;
      } else if (e.overlay.variant == EditVariant::FullMlp) {
        throw FormatError("container: full-mlp edit without edit.color.l0/l1");
      }
      if (uses_segmentation(e.overlay.variant)) e.overlay.seg = m.seg;
      if (rd.has("edit.profile")) e.profile = rd.f32("edit.profile", kHiddenWidth, 0);
      ck.edit = std::move(e);
    } else {
      rd.f32("edit.lastW", 3, kHiddenWidth);
    }
    return ck;
  } catch (const json::exception& e) {
    throw FormatError(std::string("container: bad manifest: ") + e.what());
  }
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open for writing: " + tmp);
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw IoError("write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file_bytes(path, encode_checkpoint(ck));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

}  // namespace irene
