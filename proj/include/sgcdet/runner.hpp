#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "sgcdet/autodiff.hpp"
#include "sgcdet/config.hpp"
#include "sgcdet/depthnet.hpp"
#include "sgcdet/detection.hpp"
#include "sgcdet/lifting.hpp"
#include "sgcdet/scenesim.hpp"
#include "sgcdet/serialize.hpp"
#include "sgcdet/sparse_volume.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

// Shortest-exact formatting: %.17g round-trips doubles, so equal values give
// equal report bytes.
inline std::string fmt_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---- Cost accounting ----

struct CostReport {
  std::vector<std::int64_t> aggregate_per_stage;
  std::int64_t aggregate_total = 0;
  std::int64_t deformable_samples = 0;
  std::int64_t corner_fetches = 0;
  std::int64_t feature_bytes = 0;  // analytic: sum over stages of X*Y*Z*C*bpe
  double wall_seconds = 0.0;       // informational only; never written to files
};

inline std::int64_t analytic_feature_bytes(const PipelineConfig& cfg, int bpe) {
  std::int64_t total = 0;
  for (size_t l = 0; l < cfg.ratios.size(); ++l)
    total += stage_grid(cfg, static_cast<int>(l)).count() * cfg.channels * bpe;
  return total;
}

inline CostReport make_cost_report(const Counters& c, const PipelineConfig& cfg, int bpe,
                                   double wall_seconds) {
  CostReport r;
  r.aggregate_per_stage = c.aggregate_per_stage;
  r.aggregate_total = c.aggregate_calls;
  r.deformable_samples = c.deformable_samples;
  r.corner_fetches = c.corner_fetches;
  r.feature_bytes = analytic_feature_bytes(cfg, bpe);
  r.wall_seconds = wall_seconds;
  return r;
}

inline json cost_to_json(const CostReport& r) {
  json j;
  j["aggregate_per_stage"] = json(r.aggregate_per_stage);
  j["aggregate_total"] = r.aggregate_total;
  j["deformable_samples"] = r.deformable_samples;
  j["corner_fetches"] = r.corner_fetches;
  j["feature_bytes"] = r.feature_bytes;
  return j;
}

// ---- Dataset ----

struct Dataset {
  DatasetManifest manifest;
  std::vector<LoadedScene> train;
  std::vector<LoadedScene> val;
  std::vector<LoadedScene> all;  // manifest order, train and val alike
};

inline Dataset load_dataset(const fs::path& root) {
  Dataset ds;
  ds.manifest = load_manifest(root);
  for (const ManifestEntry& e : ds.manifest.scenes) {
    LoadedScene ls = load_scene(root / e.dir);
    ds.all.push_back(ls);
    (e.split == "train" ? ds.train : ds.val).push_back(std::move(ls));
  }
  return ds;
}

inline void ensure_all_params(ParameterStore& store, const RunConfig& rc) {
  const int C = rc.channels;
  ensure_depth_params(store, C, rc.bins.D);
  ensure_lift_params(store, C, rc.sampling_points);
  ensure_fuse_params(store, C);
  const std::vector<StageSpec> stages = parse_stage_spec(rc.stages);
  for (size_t l = 1; l < stages.size(); ++l)
    ensure_occ_params(store, static_cast<int>(l), C);
  ensure_head_params(store, C, rc.num_classes);
}

inline int effective_nearest(const RunConfig& rc, size_t n_views) {
  if (n_views < 2)
    throw std::runtime_error("pipeline requires at least 2 views per scene");
  return std::min(rc.nearest_views, static_cast<int>(n_views) - 1);
}

// Per-scene precomputation shared across steps: cost volumes depend only on
// rendered inputs, targets and occupancy labels only on boxes and the grid.
struct SceneCache {
  std::vector<Tensor> cost;              // per view (h, w, D)
  TargetSet targets;                     // finest grid
  std::vector<Tensor> occ_labels;        // per stage; entry 0 unused
  std::vector<std::vector<int>> gt_bin;  // per view, per pixel depth bin
};

inline SceneCache make_scene_cache(const LoadedScene& ls, const RunConfig& rc,
                                   const PipelineConfig& cfg) {
  SceneCache cache;
  const int K = effective_nearest(rc, ls.scene.views.size());
  std::vector<Tensor> feats;
  feats.reserve(ls.rendered.size());
  for (const RenderedView& rv : ls.rendered) feats.push_back(rv.feat);
  for (size_t n = 0; n < ls.scene.views.size(); ++n)
    cache.cost.push_back(
        cost_volume_for_view(feats, ls.scene.views, static_cast<int>(n), rc.bins, K));

  const int L = static_cast<int>(cfg.ratios.size()) - 1;
  cache.targets = assign_targets(stage_grid(cfg, L), ls.scene.boxes);
  cache.occ_labels.resize(cfg.ratios.size());
  for (int l = 1; l <= L; ++l)
    cache.occ_labels[l] = pseudo_occupancy(stage_grid(cfg, l), ls.scene.boxes);

  if (rc.depth_loss_weight != 0.0) {
    for (const RenderedView& rv : ls.rendered) {
      std::vector<int> bins(rv.gt_depth.data.size());
      for (size_t i = 0; i < bins.size(); ++i)
        bins[i] = metric_to_bin_index(rv.gt_depth.data[i], rc.bins);
      cache.gt_bin.push_back(std::move(bins));
    }
  }
  return cache;
}

// ---- Plain (inference) forward ----

struct PlainForward {
  std::vector<Tensor> depth;  // per view (h, w, D)
  std::vector<VolumeStage> stages;
  Tensor head;  // (n_finest, 8 + num_classes), raw
};

inline PlainForward forward_scene_plain(const LoadedScene& ls, const SceneCache& cache,
                                        const ParameterStore& store, const RunConfig& rc,
                                        const PipelineConfig& cfg, int threads,
                                        Counters* counters = nullptr) {
  PlainForward out;
  std::vector<ViewField> fields;
  out.depth.reserve(ls.scene.views.size());
  for (size_t n = 0; n < ls.scene.views.size(); ++n)
    out.depth.push_back(depth_forward(ls.rendered[n].feat, cache.cost[n], store));
  for (size_t n = 0; n < ls.scene.views.size(); ++n)
    fields.push_back(ViewField{ls.scene.views[n], &ls.rendered[n].feat, &out.depth[n]});
  out.stages =
      build_volume(fields, store, cfg, rc.bins, rc.sampling_points, threads, counters);
  out.head = head_forward(out.stages.back().features, store, rc.num_classes);
  return out;
}

// Volume construction only, for benchmarking.
inline std::vector<VolumeStage> build_volume_plain(const LoadedScene& ls,
                                                   const SceneCache& cache,
                                                   const ParameterStore& store,
                                                   const RunConfig& rc,
                                                   const PipelineConfig& cfg, int threads,
                                                   Counters* counters) {
  std::vector<Tensor> depth;
  std::vector<ViewField> fields;
  depth.reserve(ls.scene.views.size());
  for (size_t n = 0; n < ls.scene.views.size(); ++n)
    depth.push_back(depth_forward(ls.rendered[n].feat, cache.cost[n], store));
  for (size_t n = 0; n < ls.scene.views.size(); ++n)
    fields.push_back(ViewField{ls.scene.views[n], &ls.rendered[n].feat, &depth[n]});
  return build_volume(fields, store, cfg, rc.bins, rc.sampling_points, threads, counters);
}

// ---- Taped (training) forward ----

struct TapedForward {
  std::vector<Var> depth;  // per view
  std::vector<VolumeStageT> stages;
  Var head;
  Var det;
  Var occ;
  Var depth_loss;  // invalid when depth supervision is off
  Var total;
};

inline TapedForward forward_scene_taped(Tape& tape, ParameterStore& store,
                                        const LoadedScene& ls, const SceneCache& cache,
                                        const RunConfig& rc, const PipelineConfig& cfg,
                                        Counters* counters = nullptr) {
  const int C = rc.channels, D = rc.bins.D;
  TapedForward out;
  DepthVars dvars = make_depth_vars(tape, store, C, D);
  LiftVars lift = make_lift_vars(tape, store, C, rc.sampling_points);
  FuseVars fuse = make_fuse_vars(tape, store, C);
  std::vector<ViewFieldT> fields;
  for (size_t n = 0; n < ls.scene.views.size(); ++n) {
    const CameraView& view = ls.scene.views[n];
    Var feat = tape.constant(ls.rendered[n].feat);
    Var cost = tape.constant(cache.cost[n]);
    Var dp = depth_forward_taped(tape, feat, cost, dvars, view.feat_h, view.feat_w, C, D);
    out.depth.push_back(dp);
    fields.push_back(ViewFieldT{view, feat, dp});
  }
  out.stages = build_volume_taped(tape, store, fields, cfg, rc.bins, lift, fuse,
                                  rc.sampling_points, counters);
  out.head = head_forward_taped(tape, store, out.stages.back().voxels, C, rc.num_classes);
  const int L = static_cast<int>(cfg.ratios.size()) - 1;
  out.det = detection_loss_taped(tape, out.head, cache.targets, stage_grid(cfg, L),
                                 rc.num_classes);
  out.occ = occupancy_loss_taped(tape, out.stages, cache.occ_labels);
  if (rc.depth_loss_weight != 0.0) {
    Var sum;
    for (size_t n = 0; n < out.depth.size(); ++n) {
      const CameraView& view = ls.scene.views[n];
      Var term = tape.nll_pick(out.depth[n], view.feat_h * view.feat_w, D, cache.gt_bin[n]);
      sum = sum.ok() ? tape.add(sum, term) : term;
    }
    out.depth_loss = tape.scale(1.0 / static_cast<double>(out.depth.size()), sum);
  }
  out.total = total_loss_taped(tape, out.det, out.occ, rc.lambda_occ, out.depth_loss,
                               rc.depth_loss_weight);
  return out;
}

// Mean total loss over scenes with the current parameters, computed through
// the tape-free path (bit-identical forward values).
inline double mean_total_loss(const std::vector<LoadedScene>& scenes,
                              const std::vector<SceneCache>& caches,
                              const ParameterStore& store, const RunConfig& rc,
                              const PipelineConfig& cfg, int threads) {
  double acc = 0.0;
  const int L = static_cast<int>(cfg.ratios.size()) - 1;
  for (size_t s = 0; s < scenes.size(); ++s) {
    const PlainForward fwd = forward_scene_plain(scenes[s], caches[s], store, rc, cfg, threads);
    const DetectionLossBreakdown det = detection_loss(fwd.head, caches[s].targets,
                                                      stage_grid(cfg, L), rc.num_classes);
    double total = det.total;
    total += rc.lambda_occ * occupancy_loss(fwd.stages, caches[s].occ_labels);
    if (rc.depth_loss_weight != 0.0) {
      double dl = 0.0;
      for (size_t n = 0; n < fwd.depth.size(); ++n) {
        const std::vector<int>& bins = caches[s].gt_bin[n];
        double nll = 0.0;
        const int D = rc.bins.D;
        for (size_t px = 0; px < bins.size(); ++px) {
          const double p = std::clamp(fwd.depth[n].data[px * D + bins[px]], 1e-7, 1.0);
          nll += -std::log(p);
        }
        dl += nll / static_cast<double>(bins.size());
      }
      total += rc.depth_loss_weight * dl / static_cast<double>(fwd.depth.size());
    }
    acc += total;
  }
  return acc / static_cast<double>(scenes.size());
}

// ---- Optimizer: gradient descent with momentum and optional cosine decay ----

struct SgdState {
  std::map<std::string, Tensor> velocity;
};

inline double step_learning_rate(const OptimizerConfig& opt, int step) {
  if (!opt.cosine_decay || opt.steps <= 0) return opt.learning_rate;
  const double pi = 3.14159265358979323846;
  return opt.learning_rate * 0.5 *
         (1.0 + std::cos(pi * static_cast<double>(step) / static_cast<double>(opt.steps)));
}

inline void sgd_step(ParameterStore& store, SgdState& state, const OptimizerConfig& opt,
                     int step) {
  const double lr = step_learning_rate(opt, step);
  for (auto& [name, entry] : store.entries()) {
    Tensor& v = state.velocity.try_emplace(name, Tensor(entry.value.shape)).first->second;
    for (size_t i = 0; i < entry.value.data.size(); ++i) {
      v.data[i] = opt.momentum * v.data[i] + entry.grad.data[i];
      entry.value.data[i] -= lr * v.data[i];
    }
  }
}

// ---- Commands ----

struct TrainRow {
  int step = 0;
  double center = 0.0, box = 0.0, cls = 0.0, occ = 0.0, depth = 0.0, total = 0.0;
};

struct TrainResult {
  std::vector<TrainRow> rows;
  double initial_mean_loss = 0.0;
  double final_mean_loss = 0.0;
  fs::path params_path;
  fs::path log_path;
};

inline void check_finite(double v, const char* component, int step) {
  if (!std::isfinite(v))
    throw std::runtime_error(std::string("non-finite ") + component + " loss at step " +
                             std::to_string(step));
}

inline std::string train_log_csv(const std::vector<TrainRow>& rows) {
  std::string out = "step,center,box,cls,occ,depth,total\n";
  for (const TrainRow& r : rows) {
    out += std::to_string(r.step);
    out += ',' + fmt_g17(r.center) + ',' + fmt_g17(r.box) + ',' + fmt_g17(r.cls) + ',' +
           fmt_g17(r.occ) + ',' + fmt_g17(r.depth) + ',' + fmt_g17(r.total) + '\n';
  }
  return out;
}

inline TrainResult cmd_train(const RunConfig& rc, const fs::path& manifest_dir,
                             const fs::path& out_dir, int threads) {
  Dataset ds = load_dataset(manifest_dir);
  if (ds.train.empty()) throw std::runtime_error("cmd_train: manifest has no train scenes");
  const PipelineConfig cfg =
      pipeline_for_room(rc, ds.manifest.gen.room_min, ds.manifest.gen.room_max);
  const int L = static_cast<int>(cfg.ratios.size()) - 1;

  ParameterStore store(rc.seed);
  ensure_all_params(store, rc);
  std::vector<SceneCache> caches;
  caches.reserve(ds.train.size());
  for (const LoadedScene& ls : ds.train) caches.push_back(make_scene_cache(ls, rc, cfg));

  TrainResult result;
  result.initial_mean_loss = mean_total_loss(ds.train, caches, store, rc, cfg, threads);

  SgdState sgd;
  for (int step = 0; step < rc.optimizer.steps; ++step) {
    const size_t s = static_cast<size_t>(step) % ds.train.size();
    Tape tape;
    TapedForward fwd = forward_scene_taped(tape, store, ds.train[s], caches[s], rc, cfg);

    TrainRow row;
    row.step = step;
    const Tensor head_vals = tape.value_tensor(
        fwd.head, {static_cast<int>(cfg.base.count()), head_stride(rc.num_classes)});
    const DetectionLossBreakdown det = detection_loss(head_vals, caches[s].targets,
                                                      stage_grid(cfg, L), rc.num_classes);
    row.center = det.centerness;
    row.box = det.box;
    row.cls = det.classification;
    row.occ = tape.scalar(fwd.occ);
    row.depth = fwd.depth_loss.ok() ? tape.scalar(fwd.depth_loss) : 0.0;
    row.total = tape.scalar(fwd.total);
    check_finite(row.center, "centerness", step);
    check_finite(row.box, "box", step);
    check_finite(row.cls, "classification", step);
    check_finite(row.occ, "occupancy", step);
    check_finite(row.depth, "depth", step);
    check_finite(row.total, "total", step);
    result.rows.push_back(row);

    store.zero_grads();
    tape.backward(fwd.total);
    sgd_step(store, sgd, rc.optimizer, step);
  }

  result.final_mean_loss = mean_total_loss(ds.train, caches, store, rc, cfg, threads);

  fs::create_directories(out_dir);
  result.params_path = out_dir / "params.json";
  result.log_path = out_dir / "train_log.csv";
  save_params(result.params_path, store);
  write_text_file(result.log_path, train_log_csv(result.rows));
  return result;
}

struct EvalResult {
  EvalReport report;
  CostReport cost;
  fs::path json_path;
  fs::path csv_path;
};

inline std::string eval_csv(const EvalReport& rep) {
  std::string out = "metric,threshold,class,value\n";
  for (size_t t = 0; t < rep.thresholds.size(); ++t) {
    for (size_t c = 0; c < rep.ap[t].size(); ++c) {
      if (rep.ap[t][c] < 0.0) continue;  // class absent from ground truth
      out += "ap," + fmt_g17(rep.thresholds[t]) + ',' + std::to_string(c) + ',' +
             fmt_g17(rep.ap[t][c]) + '\n';
    }
    out += "map," + fmt_g17(rep.thresholds[t]) + ",," + fmt_g17(rep.map[t]) + '\n';
  }
  return out;
}

inline json eval_to_json(const EvalReport& rep, const CostReport& cost) {
  json j;
  j["thresholds"] = json(rep.thresholds);
  j["map"] = json(rep.map);
  j["ap"] = json(rep.ap);
  j["cost"] = cost_to_json(cost);
  return j;
}

inline EvalResult cmd_eval(const RunConfig& rc, const fs::path& manifest_dir,
                           const fs::path& params_path, const fs::path& out_dir, int threads) {
  Dataset ds = load_dataset(manifest_dir);
  if (ds.val.empty()) throw std::runtime_error("cmd_eval: manifest has no val scenes");
  const PipelineConfig cfg =
      pipeline_for_room(rc, ds.manifest.gen.room_min, ds.manifest.gen.room_max);
  ParameterStore store = load_params(params_path);
  ensure_all_params(store, rc);  // shape check against the config

  Counters counters;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::vector<Detection>> preds;
  std::vector<std::vector<Box3D>> gts;
  const int L = static_cast<int>(cfg.ratios.size()) - 1;
  for (const LoadedScene& ls : ds.val) {
    const SceneCache cache = make_scene_cache(ls, rc, cfg);
    const PlainForward fwd =
        forward_scene_plain(ls, cache, store, rc, cfg, threads, &counters);
    preds.push_back(decode_and_nms(fwd.head, stage_grid(cfg, L), rc.num_classes,
                                   rc.nms.score_thresh, rc.nms.iou_thresh));
    gts.push_back(ls.scene.boxes);
  }
  const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  EvalResult result;
  result.report = evaluate_map(preds, gts, rc.num_classes, {0.25, 0.5});
  result.cost = make_cost_report(counters, cfg, bytes_per_element(rc.precision), wall);
  fs::create_directories(out_dir);
  result.json_path = out_dir / "eval.json";
  result.csv_path = out_dir / "eval.csv";
  write_json_file(result.json_path, eval_to_json(result.report, result.cost));
  write_text_file(result.csv_path, eval_csv(result.report));
  return result;
}

struct BenchRow {
  std::string label;
  std::string stages;
  CostReport cost;
};

inline std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out =
      "label,stages,aggregate_per_stage,aggregate_total,deformable_samples,corner_fetches,"
      "feature_bytes\n";
  for (const BenchRow& r : rows) {
    std::string per;
    for (size_t i = 0; i < r.cost.aggregate_per_stage.size(); ++i) {
      if (i) per += '|';
      per += std::to_string(r.cost.aggregate_per_stage[i]);
    }
    out += r.label + ",\"" + r.stages + "\"," + per + ',' +
           std::to_string(r.cost.aggregate_total) + ',' +
           std::to_string(r.cost.deformable_samples) + ',' +
           std::to_string(r.cost.corner_fetches) + ',' +
           std::to_string(r.cost.feature_bytes) + '\n';
  }
  return out;
}

inline std::vector<BenchRow> cmd_bench(const BenchConfig& bc, const fs::path& manifest_dir,
                                       const fs::path& out_csv, int threads) {
  if (bc.settings.size() < 2)
    throw std::runtime_error("cmd_bench: need at least 2 settings to compare");
  Dataset ds = load_dataset(manifest_dir);
  if (ds.all.empty()) throw std::runtime_error("cmd_bench: manifest has no scenes");

  std::vector<BenchRow> rows;
  for (const BenchSetting& setting : bc.settings) {
    RunConfig rc = bc.base;
    rc.stages = setting.stages;
    const PipelineConfig cfg =
        pipeline_for_room(rc, ds.manifest.gen.room_min, ds.manifest.gen.room_max);
    ParameterStore store(rc.seed);
    ensure_all_params(store, rc);
    Counters counters;
    const auto t0 = std::chrono::steady_clock::now();
    for (const LoadedScene& ls : ds.all) {
      const SceneCache cache = make_scene_cache(ls, rc, cfg);
      build_volume_plain(ls, cache, store, rc, cfg, threads, &counters);
    }
    const double wall =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(
        {setting.label, setting.stages,
         make_cost_report(counters, cfg, bytes_per_element(rc.precision), wall)});
  }
  write_text_file(out_csv, bench_csv(rows));
  return rows;
}

// 2D slice of one stage's occupancy probabilities or per-voxel feature norms.
// axis/index select the fixed dimension; rows iterate the first remaining
// axis, columns the second.
inline std::string slice_csv(const std::vector<VolumeStage>& stages, int stage,
                             const std::string& what, char axis, int index) {
  if (stage < 0 || stage >= static_cast<int>(stages.size()))
    throw std::invalid_argument("export: stage out of range");
  const VolumeStage& st = stages[stage];
  const int a = axis == 'x' ? 0 : (axis == 'y' ? 1 : (axis == 'z' ? 2 : -1));
  if (a < 0) throw std::invalid_argument("export: axis must be x, y, or z");
  if (index < 0 || index >= st.spec.dims[a])
    throw std::invalid_argument("export: index out of range for axis");
  if (what != "occupancy" && what != "features")
    throw std::invalid_argument("export: quantity must be 'occupancy' or 'features'");
  if (what == "occupancy" && stage == 0)
    throw std::invalid_argument("export: the dense coarse stage has no occupancy");

  const int r_axis = a == 0 ? 1 : 0;
  const int c_axis = a == 2 ? 1 : 2;
  const int C = st.features.shape[1];
  std::string out;
  for (int r = 0; r < st.spec.dims[r_axis]; ++r) {
    for (int c = 0; c < st.spec.dims[c_axis]; ++c) {
      int idx[3];
      idx[a] = index;
      idx[r_axis] = r;
      idx[c_axis] = c;
      const std::int64_t lin = voxel_lin(st.spec, idx[0], idx[1], idx[2]);
      double v = 0.0;
      if (what == "occupancy") {
        v = st.occupancy.data[lin];
      } else {
        double acc = 0.0;
        for (int ch = 0; ch < C; ++ch) {
          const double x = st.features.at(static_cast<int>(lin), ch);
          acc += x * x;
        }
        v = std::sqrt(acc);
      }
      if (c) out += ',';
      out += fmt_g17(v);
    }
    out += '\n';
  }
  return out;
}

inline void cmd_export(const RunConfig& rc, const fs::path& manifest_dir,
                       const fs::path& params_path, int scene_index, const std::string& what,
                       int stage, char axis, int index, const fs::path& out_path, int threads) {
  Dataset ds = load_dataset(manifest_dir);
  if (scene_index < 0 || scene_index >= static_cast<int>(ds.all.size()))
    throw std::invalid_argument("cmd_export: scene index out of range");
  const PipelineConfig cfg =
      pipeline_for_room(rc, ds.manifest.gen.room_min, ds.manifest.gen.room_max);
  ParameterStore store =
      params_path.empty() ? ParameterStore(rc.seed) : load_params(params_path);
  ensure_all_params(store, rc);
  const LoadedScene& ls = ds.all[static_cast<size_t>(scene_index)];
  const SceneCache cache = make_scene_cache(ls, rc, cfg);
  const PlainForward fwd = forward_scene_plain(ls, cache, store, rc, cfg, threads);
  // Validate the slice before touching the output path: no partial files.
  const std::string csv = slice_csv(fwd.stages, stage, what, axis, index);
  write_text_file(out_path, csv);
}

inline DatasetManifest cmd_generate(const GenConfig& g, std::uint64_t seed,
                                    const fs::path& out_dir, int count, double split_ratio,
                                    int threads) {
  validate_gen_config(g);
  if (count < 1) throw std::invalid_argument("cmd_generate: count must be >= 1");
  if (!(split_ratio >= 0.0 && split_ratio <= 1.0))
    throw std::invalid_argument("cmd_generate: split ratio must lie in [0, 1]");
  fs::create_directories(out_dir);
  const int n_train = static_cast<int>(std::floor(split_ratio * static_cast<double>(count)));
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < count; ++i) {
    const SyntheticScene scene = generate_scene(seed + static_cast<std::uint64_t>(i), g);
    const std::vector<RenderedView> rendered =
        render_scene(scene, g.channels, g.num_classes, g.far_plane, threads);
    char name[32];
    std::snprintf(name, sizeof name, "scene_%04d", i);
    save_scene(out_dir / name, scene, rendered);
    entries.push_back({name, i < n_train ? "train" : "val"});
  }
  save_manifest(out_dir, gen_config_to_json(g), seed, entries);
  return load_manifest(out_dir);
}

}  // namespace sgcdet
