#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgcdet/config.hpp"
#include "sgcdet/scenesim.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

namespace fs = std::filesystem;

enum class BlobErrorCode { kBadMagic, kBadVersion, kTruncated, kShapeMismatch };

class BlobError : public std::runtime_error {
 public:
  BlobError(BlobErrorCode c, const std::string& msg) : std::runtime_error(msg), code(c) {}
  BlobErrorCode code;
};

constexpr std::uint16_t kBlobVersion = 1;
constexpr int kSceneFormatVersion = 1;

// Array blob: magic "SGCD", version u16, rank u16, extents u32 each (all
// little-endian), then the values as little-endian 32-bit floats, row-major.
inline void write_blob(const fs::path& path, const Tensor& t) {
  std::vector<unsigned char> buf;
  buf.reserve(8 + 4 * t.shape.size() + 4 * t.data.size());
  const char* magic = "SGCD";
  buf.insert(buf.end(), magic, magic + 4);
  auto put16 = [&buf](std::uint16_t v) {
    buf.push_back(static_cast<unsigned char>(v & 0xFF));
    buf.push_back(static_cast<unsigned char>((v >> 8) & 0xFF));
  };
  auto put32 = [&buf](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<unsigned char>((v >> (8 * i)) & 0xFF));
  };
  put16(kBlobVersion);
  put16(static_cast<std::uint16_t>(t.shape.size()));
  for (const int e : t.shape) put32(static_cast<std::uint32_t>(e));
  for (const double d : t.data) {
    const float f = static_cast<float>(d);
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    put32(bits);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline Tensor read_blob(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)),
                                 std::istreambuf_iterator<char>());
  const std::string name = path.string();
  if (buf.size() < 4) throw BlobError(BlobErrorCode::kTruncated, "blob shorter than magic: " + name);
  if (std::memcmp(buf.data(), "SGCD", 4) != 0)
    throw BlobError(BlobErrorCode::kBadMagic, "bad magic bytes: " + name);
  if (buf.size() < 8) throw BlobError(BlobErrorCode::kTruncated, "blob header truncated: " + name);
  auto get16 = [&buf](size_t off) {
    return static_cast<std::uint16_t>(buf[off] | (buf[off + 1] << 8));
  };
  auto get32 = [&buf](size_t off) {
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(buf[off + i]) << (8 * i);
    return v;
  };
  const std::uint16_t version = get16(4);
  if (version != kBlobVersion)
    throw BlobError(BlobErrorCode::kBadVersion,
                    "unsupported blob version " + std::to_string(version) + ": " + name);
  const std::uint16_t rank = get16(6);
  const size_t header = 8 + 4 * static_cast<size_t>(rank);
  if (rank == 0 || buf.size() < header)
    throw BlobError(BlobErrorCode::kTruncated, "blob extents truncated: " + name);
  std::vector<int> shape(rank);
  std::int64_t count = 1;
  for (int r = 0; r < rank; ++r) {
    const std::uint32_t e = get32(8 + 4 * static_cast<size_t>(r));
    if (e == 0 || e > 0x7FFFFFFFu)
      throw BlobError(BlobErrorCode::kTruncated, "blob extent out of range: " + name);
    shape[r] = static_cast<int>(e);
    count *= shape[r];
  }
  if (buf.size() != header + 4 * static_cast<size_t>(count))
    throw BlobError(BlobErrorCode::kTruncated, "blob payload size mismatch: " + name);
  Tensor t(shape);
  for (std::int64_t i = 0; i < count; ++i) {
    const std::uint32_t bits = get32(header + 4 * static_cast<size_t>(i));
    float f;
    std::memcpy(&f, &bits, 4);
    t.data[static_cast<size_t>(i)] = static_cast<double>(f);
  }
  return t;
}

inline void write_json_file(const fs::path& path, const json& j) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << j.dump(2) << '\n';
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

inline json read_json_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("bad JSON in " + path.string() + ": " + e.what());
  }
  return j;
}

inline void write_text_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

// ---- Scene persistence ----

inline json box_to_json(const Box3D& b) {
  return {{"center", vec3_to_json(b.center)},
          {"size", vec3_to_json(b.size)},
          {"yaw", b.yaw},
          {"class_id", b.class_id}};
}

inline Box3D box_from_json(const json& j) {
  require_keys(j, {"center", "size", "yaw", "class_id"}, "box");
  Box3D b;
  b.center = vec3_from_json(j.at("center"), "box center");
  b.size = vec3_from_json(j.at("size"), "box size");
  b.yaw = j.at("yaw").get<double>();
  b.class_id = j.at("class_id").get<int>();
  return b;
}

struct LoadedScene {
  SyntheticScene scene;
  std::vector<RenderedView> rendered;
};

inline void save_scene(const fs::path& dir, const SyntheticScene& scene,
                       const std::vector<RenderedView>& rendered) {
  if (rendered.size() != scene.views.size())
    throw std::invalid_argument("save_scene: one rendered view per camera required");
  fs::create_directories(dir);
  json j;
  j["format_version"] = kSceneFormatVersion;
  j["seed"] = scene.seed;
  j["room_min"] = vec3_to_json(scene.room_min);
  j["room_max"] = vec3_to_json(scene.room_max);
  j["boxes"] = json::array();
  for (const Box3D& b : scene.boxes) j["boxes"].push_back(box_to_json(b));
  j["views"] = json::array();
  for (size_t i = 0; i < scene.views.size(); ++i) {
    const CameraView& v = scene.views[i];
    const std::string feat_name = "view" + std::to_string(i) + "_feat.bin";
    const std::string depth_name = "view" + std::to_string(i) + "_depth.bin";
    write_blob(dir / feat_name, rendered[i].feat);
    write_blob(dir / depth_name, rendered[i].gt_depth);
    json vj;
    vj["fx"] = v.intr.fx;
    vj["fy"] = v.intr.fy;
    vj["cx"] = v.intr.cx;
    vj["cy"] = v.intr.cy;
    vj["R"] = json::array();
    for (int k = 0; k < 9; ++k) vj["R"].push_back(v.ext.R.m[k]);
    vj["t"] = vec3_to_json(v.ext.t);
    vj["image_h"] = v.image_h;
    vj["image_w"] = v.image_w;
    vj["feat_h"] = v.feat_h;
    vj["feat_w"] = v.feat_w;
    vj["feat_blob"] = feat_name;
    vj["depth_blob"] = depth_name;
    vj["feat_shape"] = json(rendered[i].feat.shape);
    vj["depth_shape"] = json(rendered[i].gt_depth.shape);
    j["views"].push_back(vj);
  }
  write_json_file(dir / "scene.json", j);
}

inline LoadedScene load_scene(const fs::path& dir) {
  const json j = read_json_file(dir / "scene.json");
  require_keys(j, {"format_version", "seed", "room_min", "room_max", "boxes", "views"},
               "scene file");
  if (j.at("format_version").get<int>() != kSceneFormatVersion)
    throw BlobError(BlobErrorCode::kBadVersion, "unsupported scene format version in " +
                                                    (dir / "scene.json").string());
  LoadedScene out;
  out.scene.seed = j.at("seed").get<std::uint64_t>();
  out.scene.room_min = vec3_from_json(j.at("room_min"), "room_min");
  out.scene.room_max = vec3_from_json(j.at("room_max"), "room_max");
  for (const json& bj : j.at("boxes")) out.scene.boxes.push_back(box_from_json(bj));
  for (const json& vj : j.at("views")) {
    require_keys(vj,
                 {"fx", "fy", "cx", "cy", "R", "t", "image_h", "image_w", "feat_h", "feat_w",
                  "feat_blob", "depth_blob", "feat_shape", "depth_shape"},
                 "scene view");
    CameraView v;
    v.intr = {vj.at("fx").get<double>(), vj.at("fy").get<double>(), vj.at("cx").get<double>(),
              vj.at("cy").get<double>()};
    const json& Rj = vj.at("R");
    if (!Rj.is_array() || Rj.size() != 9)
      throw std::runtime_error("scene view: R must be 9 numbers");
    for (int k = 0; k < 9; ++k) v.ext.R.m[k] = Rj[k].get<double>();
    v.ext.t = vec3_from_json(vj.at("t"), "view t");
    v.image_h = vj.at("image_h").get<int>();
    v.image_w = vj.at("image_w").get<int>();
    v.feat_h = vj.at("feat_h").get<int>();
    v.feat_w = vj.at("feat_w").get<int>();
    validate_view(v);
    out.scene.views.push_back(v);

    RenderedView rv;
    rv.feat = read_blob(dir / vj.at("feat_blob").get<std::string>());
    rv.gt_depth = read_blob(dir / vj.at("depth_blob").get<std::string>());
    const std::vector<int> fshape = vj.at("feat_shape").get<std::vector<int>>();
    const std::vector<int> dshape = vj.at("depth_shape").get<std::vector<int>>();
    if (rv.feat.shape != fshape || rv.gt_depth.shape != dshape)
      throw BlobError(BlobErrorCode::kShapeMismatch,
                      "blob shape disagrees with scene file in " + dir.string());
    out.rendered.push_back(std::move(rv));
  }
  return out;
}

// ---- Dataset manifest ----

struct ManifestEntry {
  std::string dir;
  std::string split;  // "train" or "val"
};

struct DatasetManifest {
  fs::path root;
  GenConfig gen;
  json gen_json;
  std::uint64_t seed = 0;
  std::string hash;
  std::vector<ManifestEntry> scenes;
};

inline void save_manifest(const fs::path& root, const json& gen_json, std::uint64_t seed,
                          const std::vector<ManifestEntry>& scenes) {
  json j;
  j["format_version"] = kSceneFormatVersion;
  j["config_hash"] = config_hash(gen_json);
  j["gen_config"] = gen_json;
  j["seed"] = seed;
  j["scenes"] = json::array();
  for (const ManifestEntry& e : scenes) j["scenes"].push_back({{"dir", e.dir}, {"split", e.split}});
  write_json_file(root / "manifest.json", j);
}

inline DatasetManifest load_manifest(const fs::path& root) {
  const json j = read_json_file(root / "manifest.json");
  require_keys(j, {"format_version", "config_hash", "gen_config", "seed", "scenes"}, "manifest");
  if (j.at("format_version").get<int>() != kSceneFormatVersion)
    throw BlobError(BlobErrorCode::kBadVersion,
                    "unsupported manifest version in " + (root / "manifest.json").string());
  DatasetManifest m;
  m.root = root;
  m.gen_json = j.at("gen_config");
  m.gen = gen_config_from_json(m.gen_json);
  m.seed = j.at("seed").get<std::uint64_t>();
  m.hash = j.at("config_hash").get<std::string>();
  if (m.hash != config_hash(m.gen_json))
    throw std::runtime_error("manifest config_hash does not match gen_config in " +
                             (root / "manifest.json").string());
  for (const json& sj : j.at("scenes")) {
    require_keys(sj, {"dir", "split"}, "manifest scene");
    ManifestEntry e{sj.at("dir").get<std::string>(), sj.at("split").get<std::string>()};
    if (e.split != "train" && e.split != "val")
      throw std::runtime_error("manifest split must be 'train' or 'val', got '" + e.split + "'");
    if (!fs::exists(root / e.dir / "scene.json"))
      throw std::runtime_error("manifest references missing scene: " +
                               (root / e.dir / "scene.json").string());
    m.scenes.push_back(std::move(e));
  }
  return m;
}

// ---- Parameter files ----

inline void save_params(const fs::path& path, const ParameterStore& store) {
  json j;
  j["format_version"] = kSceneFormatVersion;
  j["seed"] = store.seed();
  json params = json::object();
  for (const auto& [name, entry] : store.entries()) {
    params[name] = {{"shape", json(entry.value.shape)}, {"data", json(entry.value.data)}};
  }
  j["params"] = std::move(params);
  write_json_file(path, j);
}

inline ParameterStore load_params(const fs::path& path) {
  const json j = read_json_file(path);
  require_keys(j, {"format_version", "seed", "params"}, "parameter file");
  ParameterStore store(j.at("seed").get<std::uint64_t>());
  for (auto it = j.at("params").begin(); it != j.at("params").end(); ++it) {
    require_keys(it.value(), {"shape", "data"}, "parameter entry");
    Tensor t(it.value().at("shape").get<std::vector<int>>());
    const std::vector<double> data = it.value().at("data").get<std::vector<double>>();
    if (static_cast<std::int64_t>(data.size()) != t.size())
      throw std::runtime_error("parameter '" + it.key() + "' data does not match its shape");
    t.data = data;
    store.set(it.key(), std::move(t));
  }
  return store;
}

}  // namespace sgcdet
