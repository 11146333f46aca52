#pragma once

#include <cstdint>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "sgcdet/depthnet.hpp"
#include "sgcdet/geometry.hpp"
#include "sgcdet/scenesim.hpp"
#include "sgcdet/sparse_volume.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

using json = nlohmann::json;

inline void require_keys(const json& j, std::initializer_list<const char*> allowed,
                         const char* where) {
  if (!j.is_object()) throw std::invalid_argument(std::string(where) + ": expected an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw std::invalid_argument(std::string(where) + ": unknown key '" + it.key() + "'");
  }
}

inline Vec3 vec3_from_json(const json& j, const char* where) {
  if (!j.is_array() || j.size() != 3)
    throw std::invalid_argument(std::string(where) + ": expected [x, y, z]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline json vec3_to_json(const Vec3& v) { return json::array({v.x, v.y, v.z}); }

// ---- Generation config ----

inline GenConfig gen_config_from_json(const json& j) {
  require_keys(j,
               {"room_min", "room_max", "box_count_min", "box_count_max", "num_classes",
                "size_min", "size_max", "yaw_max", "cameras", "orbit_radius", "camera_height",
                "focal", "image_width", "image_height", "stride", "channels",
                "overlap_iou_max", "far_plane"},
               "gen config");
  GenConfig g;
  if (j.contains("room_min")) g.room_min = vec3_from_json(j["room_min"], "room_min");
  if (j.contains("room_max")) g.room_max = vec3_from_json(j["room_max"], "room_max");
  if (j.contains("box_count_min")) g.box_count_min = j["box_count_min"].get<int>();
  if (j.contains("box_count_max")) g.box_count_max = j["box_count_max"].get<int>();
  if (j.contains("num_classes")) g.num_classes = j["num_classes"].get<int>();
  if (j.contains("size_min")) g.size_min = j["size_min"].get<double>();
  if (j.contains("size_max")) g.size_max = j["size_max"].get<double>();
  if (j.contains("yaw_max")) g.yaw_max = j["yaw_max"].get<double>();
  if (j.contains("cameras")) g.cameras = j["cameras"].get<int>();
  if (j.contains("orbit_radius")) g.orbit_radius = j["orbit_radius"].get<double>();
  if (j.contains("camera_height")) g.camera_height = j["camera_height"].get<double>();
  if (j.contains("focal")) g.focal = j["focal"].get<double>();
  if (j.contains("image_width")) g.image_width = j["image_width"].get<int>();
  if (j.contains("image_height")) g.image_height = j["image_height"].get<int>();
  if (j.contains("stride")) g.stride = j["stride"].get<int>();
  if (j.contains("channels")) g.channels = j["channels"].get<int>();
  if (j.contains("overlap_iou_max")) g.overlap_iou_max = j["overlap_iou_max"].get<double>();
  if (j.contains("far_plane")) g.far_plane = j["far_plane"].get<double>();
  validate_gen_config(g);
  return g;
}

inline json gen_config_to_json(const GenConfig& g) {
  json j;
  j["room_min"] = vec3_to_json(g.room_min);
  j["room_max"] = vec3_to_json(g.room_max);
  j["box_count_min"] = g.box_count_min;
  j["box_count_max"] = g.box_count_max;
  j["num_classes"] = g.num_classes;
  j["size_min"] = g.size_min;
  j["size_max"] = g.size_max;
  j["yaw_max"] = g.yaw_max;
  j["cameras"] = g.cameras;
  j["orbit_radius"] = g.orbit_radius;
  j["camera_height"] = g.camera_height;
  j["focal"] = g.focal;
  j["image_width"] = g.image_width;
  j["image_height"] = g.image_height;
  j["stride"] = g.stride;
  j["channels"] = g.channels;
  j["overlap_iou_max"] = g.overlap_iou_max;
  j["far_plane"] = g.far_plane;
  return j;
}

// ---- Run config ----

struct OptimizerConfig {
  double learning_rate = 0.05;
  double momentum = 0.9;
  int steps = 500;
  bool cosine_decay = true;
};

struct NmsConfig {
  double score_thresh = 0.05;
  double iou_thresh = 0.25;
};

struct RunConfig {
  std::string stages = "10x10x4:100,20x20x8:25,40x40x16:25";
  int channels = 16;
  int num_classes = 3;
  DepthBins bins{0.2, 5.0, 12};
  int nearest_views = 2;
  int sampling_points = 4;
  double lambda_occ = 0.5;
  double depth_loss_weight = 0.0;
  OptimizerConfig optimizer;
  NmsConfig nms;
  bool has_grid = false;  // when false, the grid derives from the room bounds
  Vec3 grid_origin;
  Vec3 grid_voxel;
  std::string precision = "f64";
  std::uint64_t seed = 1;
};

struct StageSpec {
  int dims[3];
  double ratio;
};

// Compact stage string: "XxYxZ:R" entries joined by commas, coarse to fine.
inline std::vector<StageSpec> parse_stage_spec(const std::string& s) {
  std::vector<StageSpec> out;
  std::stringstream ss(s);
  std::string entry;
  while (std::getline(ss, entry, ',')) {
    StageSpec st{};
    char x1 = 0, x2 = 0, colon = 0;
    std::stringstream es(entry);
    if (!(es >> st.dims[0] >> x1 >> st.dims[1] >> x2 >> st.dims[2] >> colon >> st.ratio) ||
        x1 != 'x' || x2 != 'x' || colon != ':' || !(es >> std::ws).eof())
      throw std::invalid_argument("stage spec: bad entry '" + entry + "'");
    if (st.dims[0] <= 0 || st.dims[1] <= 0 || st.dims[2] <= 0)
      throw std::invalid_argument("stage spec: dims must be positive in '" + entry + "'");
    out.push_back(st);
  }
  if (out.empty()) throw std::invalid_argument("stage spec: empty");
  if (out.front().ratio != 100.0)
    throw std::invalid_argument("stage spec: first stage must use ratio 100");
  for (size_t l = 1; l < out.size(); ++l)
    for (int a = 0; a < 3; ++a)
      if (out[l].dims[a] != out[l - 1].dims[a] * 2)
        throw std::invalid_argument("stage spec: each stage must double the previous dims");
  return out;
}

inline PipelineConfig make_pipeline(const std::string& stage_spec, int channels,
                                    const Vec3& origin, const Vec3& voxel_size) {
  const std::vector<StageSpec> stages = parse_stage_spec(stage_spec);
  PipelineConfig cfg;
  cfg.base.origin = origin;
  cfg.base.voxel_size = voxel_size;
  for (int a = 0; a < 3; ++a) cfg.base.dims[a] = stages.back().dims[a];
  for (const StageSpec& s : stages) cfg.ratios.push_back(s.ratio);
  cfg.channels = channels;
  validate_pipeline(cfg);
  return cfg;
}

// Grid spanning [room_min, room_max] at the finest stage resolution.
inline PipelineConfig pipeline_for_room(const RunConfig& rc, const Vec3& room_min,
                                        const Vec3& room_max) {
  const std::vector<StageSpec> stages = parse_stage_spec(rc.stages);
  Vec3 origin, voxel;
  if (rc.has_grid) {
    origin = rc.grid_origin;
    voxel = rc.grid_voxel;
  } else {
    origin = room_min;
    const Vec3 span = room_max - room_min;
    voxel = {span.x / stages.back().dims[0], span.y / stages.back().dims[1],
             span.z / stages.back().dims[2]};
  }
  return make_pipeline(rc.stages, rc.channels, origin, voxel);
}

inline int bytes_per_element(const std::string& precision) {
  if (precision == "f32") return 4;
  if (precision == "f64") return 8;
  throw std::invalid_argument("precision must be 'f32' or 'f64'");
}

inline RunConfig run_config_from_json(const json& j) {
  require_keys(j,
               {"stages", "channels", "num_classes", "depth", "sampling_points", "lambda_occ",
                "depth_loss_weight", "optimizer", "nms", "grid", "precision", "seed"},
               "run config");
  RunConfig rc;
  if (j.contains("stages")) rc.stages = j["stages"].get<std::string>();
  if (j.contains("channels")) rc.channels = j["channels"].get<int>();
  if (j.contains("num_classes")) rc.num_classes = j["num_classes"].get<int>();
  if (j.contains("depth")) {
    const json& d = j["depth"];
    require_keys(d, {"d_min", "d_max", "bins", "nearest_views"}, "depth config");
    if (d.contains("d_min")) rc.bins.d_min = d["d_min"].get<double>();
    if (d.contains("d_max")) rc.bins.d_max = d["d_max"].get<double>();
    if (d.contains("bins")) rc.bins.D = d["bins"].get<int>();
    if (d.contains("nearest_views")) rc.nearest_views = d["nearest_views"].get<int>();
  }
  if (j.contains("sampling_points")) rc.sampling_points = j["sampling_points"].get<int>();
  if (j.contains("lambda_occ")) rc.lambda_occ = j["lambda_occ"].get<double>();
  if (j.contains("depth_loss_weight"))
    rc.depth_loss_weight = j["depth_loss_weight"].get<double>();
  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    require_keys(o, {"learning_rate", "momentum", "steps", "cosine_decay"}, "optimizer config");
    if (o.contains("learning_rate")) rc.optimizer.learning_rate = o["learning_rate"].get<double>();
    if (o.contains("momentum")) rc.optimizer.momentum = o["momentum"].get<double>();
    if (o.contains("steps")) rc.optimizer.steps = o["steps"].get<int>();
    if (o.contains("cosine_decay")) rc.optimizer.cosine_decay = o["cosine_decay"].get<bool>();
  }
  if (j.contains("nms")) {
    const json& n = j["nms"];
    require_keys(n, {"score_thresh", "iou_thresh"}, "nms config");
    if (n.contains("score_thresh")) rc.nms.score_thresh = n["score_thresh"].get<double>();
    if (n.contains("iou_thresh")) rc.nms.iou_thresh = n["iou_thresh"].get<double>();
  }
  if (j.contains("grid")) {
    const json& g = j["grid"];
    require_keys(g, {"origin", "voxel_size"}, "grid config");
    rc.has_grid = true;
    rc.grid_origin = vec3_from_json(g.at("origin"), "grid origin");
    rc.grid_voxel = vec3_from_json(g.at("voxel_size"), "grid voxel_size");
  }
  if (j.contains("precision")) rc.precision = j["precision"].get<std::string>();
  if (j.contains("seed")) rc.seed = j["seed"].get<std::uint64_t>();

  parse_stage_spec(rc.stages);
  validate_bins(rc.bins);
  bytes_per_element(rc.precision);
  if (rc.channels <= 0 || rc.num_classes <= 0)
    throw std::invalid_argument("run config: channels and num_classes must be positive");
  if (rc.nearest_views < 1) throw std::invalid_argument("run config: nearest_views must be >= 1");
  if (rc.sampling_points < 1)
    throw std::invalid_argument("run config: sampling_points must be >= 1");
  if (rc.lambda_occ < 0.0) throw std::invalid_argument("run config: lambda_occ must be >= 0");
  if (rc.optimizer.steps < 0) throw std::invalid_argument("run config: steps must be >= 0");
  return rc;
}

inline json run_config_to_json(const RunConfig& rc) {
  json j;
  j["stages"] = rc.stages;
  j["channels"] = rc.channels;
  j["num_classes"] = rc.num_classes;
  j["depth"] = {{"d_min", rc.bins.d_min},
                {"d_max", rc.bins.d_max},
                {"bins", rc.bins.D},
                {"nearest_views", rc.nearest_views}};
  j["sampling_points"] = rc.sampling_points;
  j["lambda_occ"] = rc.lambda_occ;
  j["depth_loss_weight"] = rc.depth_loss_weight;
  j["optimizer"] = {{"learning_rate", rc.optimizer.learning_rate},
                    {"momentum", rc.optimizer.momentum},
                    {"steps", rc.optimizer.steps},
                    {"cosine_decay", rc.optimizer.cosine_decay}};
  j["nms"] = {{"score_thresh", rc.nms.score_thresh}, {"iou_thresh", rc.nms.iou_thresh}};
  if (rc.has_grid)
    j["grid"] = {{"origin", vec3_to_json(rc.grid_origin)},
                 {"voxel_size", vec3_to_json(rc.grid_voxel)}};
  j["precision"] = rc.precision;
  j["seed"] = rc.seed;
  return j;
}

// ---- Bench config: one base run config plus labeled stage-spec variants ----

struct BenchSetting {
  std::string label;
  std::string stages;
};

struct BenchConfig {
  RunConfig base;
  std::vector<BenchSetting> settings;
};

inline BenchConfig bench_config_from_json(const json& j) {
  require_keys(j, {"base", "settings"}, "bench config");
  BenchConfig bc;
  bc.base = run_config_from_json(j.at("base"));
  if (!j.contains("settings") || !j["settings"].is_array())
    throw std::invalid_argument("bench config: 'settings' must be an array");
  for (const json& s : j["settings"]) {
    require_keys(s, {"label", "stages"}, "bench setting");
    BenchSetting bs;
    bs.label = s.at("label").get<std::string>();
    bs.stages = s.at("stages").get<std::string>();
    parse_stage_spec(bs.stages);
    bc.settings.push_back(bs);
  }
  return bc;
}

inline std::string hex64(std::uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string s(16, '0');
  for (int i = 15; i >= 0; --i, v >>= 4) s[i] = digits[v & 0xF];
  return s;
}

// Stable content hash of a config document (keys are emitted sorted).
inline std::string config_hash(const json& j) { return hex64(fnv1a64(j.dump())); }

}  // namespace sgcdet
