#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgcdet/autodiff.hpp"
#include "sgcdet/geometry.hpp"
#include "sgcdet/lifting.hpp"
#include "sgcdet/parallel.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

// Coarse-to-fine schedule: finest grid plus one selection ratio per stage.
// Stage l's grid has base dims / 2^(L-l) and voxel size * 2^(L-l).
struct PipelineConfig {
  VoxelGridSpec base;           // finest stage grid
  std::vector<double> ratios;   // percent per stage, coarse to fine
  int channels = 0;
};

inline void validate_pipeline(const PipelineConfig& cfg) {
  validate_grid(cfg.base);
  if (cfg.ratios.empty()) throw std::invalid_argument("PipelineConfig: no stages");
  if (cfg.channels <= 0) throw std::invalid_argument("PipelineConfig: channels must be positive");
  if (cfg.ratios.front() != 100.0)
    throw std::invalid_argument("PipelineConfig: the coarse stage is always built densely (100)");
  for (double r : cfg.ratios)
    if (!(r > 0.0 && r <= 100.0))
      throw std::invalid_argument("PipelineConfig: ratios must lie in (0, 100]");
  const int L = static_cast<int>(cfg.ratios.size()) - 1;
  for (int i = 0; i < 3; ++i)
    if (cfg.base.dims[i] % (1 << L) != 0)
      throw std::invalid_argument("PipelineConfig: finest dims must be divisible by 2^L");
}

inline VoxelGridSpec stage_grid(const PipelineConfig& cfg, int l) {
  const int L = static_cast<int>(cfg.ratios.size()) - 1;
  const int f = 1 << (L - l);
  VoxelGridSpec g = cfg.base;
  for (int i = 0; i < 3; ++i) g.dims[i] = cfg.base.dims[i] / f;
  g.voxel_size = {cfg.base.voxel_size.x * f, cfg.base.voxel_size.y * f,
                  cfg.base.voxel_size.z * f};
  return g;
}

// One stage's state. features is (n_vox, C) in linearized voxel order;
// occupancy is empty for the dense coarse stage.
struct VolumeStage {
  VoxelGridSpec spec;
  Tensor features;
  Tensor occupancy;
  std::vector<std::int64_t> selection;
};

struct VolumeStageT {
  VoxelGridSpec spec;
  std::vector<Var> voxels;
  Var occupancy;  // invalid for stage 0
  std::vector<std::int64_t> selection;
};

// Per-voxel linear C->1 plus sigmoid on (n, C) feature rows.
inline Tensor occupancy_head(const Tensor& rows, const Tensor& W, const Tensor& b) {
  if (rows.shape.size() != 2 || W.shape != std::vector<int>{1, rows.shape[1]} ||
      b.shape != std::vector<int>{1})
    throw std::invalid_argument("occupancy_head: parameter shape mismatch");
  const int n = rows.shape[0], C = rows.shape[1];
  Tensor out({n});
  kernels::linear_rows(out.data.data(), W.data.data(), b.data.data(), rows.data.data(), n, 1, C);
  for (double& v : out.data) v = kernels::sigmoid(v);
  return out;
}

// Exactly ceil(ratio/100 * n) indices with the highest probabilities; ties
// broken by ascending linearized index; output sorted ascending.
inline std::vector<std::int64_t> select_topk(const Tensor& occupancy, double ratio) {
  if (!(ratio > 0.0 && ratio <= 100.0))
    throw std::invalid_argument("select_topk: ratio must lie in (0, 100]");
  const std::int64_t n = occupancy.size();
  const std::int64_t k =
      static_cast<std::int64_t>(std::ceil(ratio * static_cast<double>(n) / 100.0));
  std::vector<std::int64_t> idx(n);
  for (std::int64_t i = 0; i < n; ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
    return occupancy.data[a] > occupancy.data[b];
  });
  idx.resize(std::min(k, n));
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Binary labels: 1 iff the voxel center lies inside any box (inclusive, in
// the box's yaw frame). Order- and duplicate-invariant by construction.
inline Tensor pseudo_occupancy(const VoxelGridSpec& grid, const std::vector<Box3D>& boxes) {
  validate_grid(grid);
  for (const Box3D& b : boxes) validate_box(b);
  Tensor out({grid.dims[0], grid.dims[1], grid.dims[2]});
  std::int64_t i = 0;
  for (int x = 0; x < grid.dims[0]; ++x)
    for (int y = 0; y < grid.dims[1]; ++y)
      for (int z = 0; z < grid.dims[2]; ++z, ++i) {
        const Vec3 c = voxel_center(grid, x, y, z);
        for (const Box3D& b : boxes)
          if (point_in_box(b, c)) {
            out.data[i] = 1.0;
            break;
          }
      }
  return out;
}

// Sum over refinement stages (all but stage 0) of mean BCE between predicted
// occupancy and labels, probabilities clamped to [1e-7, 1 - 1e-7].
inline double occupancy_loss(const std::vector<VolumeStage>& stages,
                             const std::vector<Tensor>& labels) {
  if (labels.size() != stages.size())
    throw std::invalid_argument("occupancy_loss: one label tensor per stage required");
  double total = 0.0;
  for (size_t l = 1; l < stages.size(); ++l) {
    const Tensor& p = stages[l].occupancy;
    const Tensor& t = labels[l];
    if (p.size() != t.size()) throw std::invalid_argument("occupancy_loss: shape mismatch");
    double acc = 0.0;
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double pc = std::clamp(p.data[i], 1e-7, 1.0 - 1e-7);
      acc += -t.data[i] * std::log(pc) - (1.0 - t.data[i]) * std::log(1.0 - pc);
    }
    total += acc / static_cast<double>(p.size());
  }
  return total;
}

inline std::string occ_param_name(int stage, const char* leaf) {
  return "occ.s" + std::to_string(stage) + "." + leaf;
}

inline void ensure_occ_params(ParameterStore& store, int stage, int C) {
  store.ensure(occ_param_name(stage, "W"), {1, C});
  store.ensure(occ_param_name(stage, "b"), {1});
}

// Index of the parent voxel's row for child (x, y, z) after 2x upsampling.
inline std::int64_t parent_lin(const VoxelGridSpec& child_grid, int x, int y, int z) {
  const int px = x / 2, py = y / 2, pz = z / 2;
  return (static_cast<std::int64_t>(px) * (child_grid.dims[1] / 2) + py) *
             (child_grid.dims[2] / 2) +
         pz;
}

// ---- Plain pipeline (inference / benchmarks) ----

// Nearest-neighbor upsampling, occupancy prediction, top-k selection,
// residual aggregation at the selected voxels. Unselected voxels keep their
// upsampled initialization bit-exactly (they are plain copies).
inline VolumeStage refine_stage(const VolumeStage& prev, const std::vector<ViewField>& fields,
                                const ParameterStore& store, double ratio, int stage_index,
                                const DepthBins& bins, int M, int threads,
                                Counters* counters = nullptr) {
  const int C = prev.features.shape[1];
  VolumeStage out;
  out.spec = upsample_spec(prev.spec);
  const std::int64_t n = out.spec.count();
  out.features = Tensor({static_cast<int>(n), C});
  std::int64_t i = 0;
  for (int x = 0; x < out.spec.dims[0]; ++x)
    for (int y = 0; y < out.spec.dims[1]; ++y)
      for (int z = 0; z < out.spec.dims[2]; ++z, ++i) {
        const std::int64_t p = parent_lin(out.spec, x, y, z);
        std::copy(&prev.features.at(static_cast<int>(p), 0),
                  &prev.features.at(static_cast<int>(p), 0) + C,
                  &out.features.at(static_cast<int>(i), 0));
      }
  out.occupancy = occupancy_head(out.features, store.param(occ_param_name(stage_index, "W")),
                                 store.param(occ_param_name(stage_index, "b")));
  out.selection = select_topk(out.occupancy, ratio);

  std::vector<int> valid(out.selection.size(), 0);
  parallel_for(static_cast<std::int64_t>(out.selection.size()), threads, [&](std::int64_t s) {
    const std::int64_t lin = out.selection[s];
    const int z = static_cast<int>(lin % out.spec.dims[2]);
    const int y = static_cast<int>((lin / out.spec.dims[2]) % out.spec.dims[1]);
    const int x = static_cast<int>(lin / (static_cast<std::int64_t>(out.spec.dims[1]) *
                                          out.spec.dims[2]));
    Counters local;
    const std::vector<double> agg =
        aggregate_point(voxel_center(out.spec, x, y, z), fields, store, bins, M, C, &local);
    valid[s] = static_cast<int>(local.deformable_samples / std::max(1, M));
    double* row = &out.features.at(static_cast<int>(lin), 0);
    for (int c = 0; c < C; ++c) row[c] += agg[c];
  });
  if (counters) {
    while (counters->aggregate_per_stage.size() <= static_cast<size_t>(stage_index))
      counters->aggregate_per_stage.push_back(0);
    counters->aggregate_per_stage[stage_index] += static_cast<std::int64_t>(out.selection.size());
    counters->aggregate_calls += static_cast<std::int64_t>(out.selection.size());
    for (size_t s = 0; s < valid.size(); ++s) {
      counters->deformable_samples += static_cast<std::int64_t>(valid[s]) * M;
      counters->corner_fetches += static_cast<std::int64_t>(valid[s]) * 8 * (1 + M);
    }
  }
  return out;
}

// Full coarse-to-fine construction: a dense coarse stage followed by sparse
// refinements. Returns all stages.
inline std::vector<VolumeStage> build_volume(const std::vector<ViewField>& fields,
                                             const ParameterStore& store,
                                             const PipelineConfig& cfg, const DepthBins& bins,
                                             int M, int threads, Counters* counters = nullptr) {
  validate_pipeline(cfg);
  const int C = cfg.channels;
  std::vector<VolumeStage> stages;
  stages.reserve(cfg.ratios.size());

  VolumeStage s0;
  s0.spec = stage_grid(cfg, 0);
  const std::int64_t n0 = s0.spec.count();
  s0.features = Tensor({static_cast<int>(n0), C});
  s0.selection.resize(n0);
  for (std::int64_t i = 0; i < n0; ++i) s0.selection[i] = i;
  std::vector<int> valid(n0, 0);
  parallel_for(n0, threads, [&](std::int64_t i) {
    const int z = static_cast<int>(i % s0.spec.dims[2]);
    const int y = static_cast<int>((i / s0.spec.dims[2]) % s0.spec.dims[1]);
    const int x =
        static_cast<int>(i / (static_cast<std::int64_t>(s0.spec.dims[1]) * s0.spec.dims[2]));
    Counters local;
    const std::vector<double> agg =
        aggregate_point(voxel_center(s0.spec, x, y, z), fields, store, bins, M, C, &local);
    valid[i] = static_cast<int>(local.deformable_samples / std::max(1, M));
    std::copy(agg.begin(), agg.end(), &s0.features.at(static_cast<int>(i), 0));
  });
  if (counters) {
    if (counters->aggregate_per_stage.empty()) counters->aggregate_per_stage.push_back(0);
    counters->aggregate_per_stage[0] += n0;
    counters->aggregate_calls += n0;
    for (std::int64_t i = 0; i < n0; ++i) {
      counters->deformable_samples += static_cast<std::int64_t>(valid[i]) * M;
      counters->corner_fetches += static_cast<std::int64_t>(valid[i]) * 8 * (1 + M);
    }
  }
  stages.push_back(std::move(s0));

  for (size_t l = 1; l < cfg.ratios.size(); ++l)
    stages.push_back(refine_stage(stages.back(), fields, store, cfg.ratios[l],
                                  static_cast<int>(l), bins, M, threads, counters));
  return stages;
}

// ---- Taped pipeline (training) ----

inline Var occupancy_head_taped(Tape& tape, ParameterStore& store, const std::vector<Var>& rows,
                                int stage, int C) {
  ensure_occ_params(store, stage, C);
  Var W = tape.param(store, occ_param_name(stage, "W"), {1, C});
  Var b = tape.param(store, occ_param_name(stage, "b"), {1});
  Var packed = tape.pack(rows);
  Var logits = tape.linear_rows(W, packed, b, static_cast<int>(rows.size()), 1, C);
  return tape.sigmoid(logits);
}

inline std::vector<VolumeStageT> build_volume_taped(Tape& tape, ParameterStore& store,
                                                    const std::vector<ViewFieldT>& fields,
                                                    const PipelineConfig& cfg,
                                                    const DepthBins& bins, const LiftVars& lift,
                                                    const FuseVars& fuse, int M,
                                                    Counters* counters = nullptr) {
  validate_pipeline(cfg);
  const int C = cfg.channels;
  std::vector<VolumeStageT> stages;
  stages.reserve(cfg.ratios.size());

  VolumeStageT s0;
  s0.spec = stage_grid(cfg, 0);
  const std::int64_t n0 = s0.spec.count();
  s0.voxels.reserve(n0);
  s0.selection.resize(n0);
  for (std::int64_t i = 0; i < n0; ++i) s0.selection[i] = i;
  for (int x = 0; x < s0.spec.dims[0]; ++x)
    for (int y = 0; y < s0.spec.dims[1]; ++y)
      for (int z = 0; z < s0.spec.dims[2]; ++z)
        s0.voxels.push_back(aggregate_point_taped(tape, voxel_center(s0.spec, x, y, z), fields,
                                                  bins, lift, fuse, M, C, counters));
  if (counters) {
    while (counters->aggregate_per_stage.size() < 1) counters->aggregate_per_stage.push_back(0);
    counters->aggregate_per_stage[0] += n0;
  }
  stages.push_back(std::move(s0));

  for (size_t l = 1; l < cfg.ratios.size(); ++l) {
    const VolumeStageT& prev = stages.back();
    VolumeStageT st;
    st.spec = upsample_spec(prev.spec);
    const std::int64_t n = st.spec.count();
    st.voxels.resize(n);
    std::int64_t i = 0;
    for (int x = 0; x < st.spec.dims[0]; ++x)
      for (int y = 0; y < st.spec.dims[1]; ++y)
        for (int z = 0; z < st.spec.dims[2]; ++z, ++i)
          st.voxels[i] = prev.voxels[parent_lin(st.spec, x, y, z)];
    st.occupancy = occupancy_head_taped(tape, store, st.voxels, static_cast<int>(l), C);
    Tensor occ_vals = tape.value_tensor(st.occupancy, {static_cast<int>(n)});
    st.selection = select_topk(occ_vals, cfg.ratios[l]);
    for (const std::int64_t lin : st.selection) {
      const int z = static_cast<int>(lin % st.spec.dims[2]);
      const int y = static_cast<int>((lin / st.spec.dims[2]) % st.spec.dims[1]);
      const int x = static_cast<int>(lin / (static_cast<std::int64_t>(st.spec.dims[1]) *
                                            st.spec.dims[2]));
      Var agg = aggregate_point_taped(tape, voxel_center(st.spec, x, y, z), fields, bins, lift,
                                      fuse, M, C, counters);
      st.voxels[lin] = tape.add(st.voxels[lin], agg);
    }
    if (counters) {
      while (counters->aggregate_per_stage.size() <= l) counters->aggregate_per_stage.push_back(0);
      counters->aggregate_per_stage[l] += static_cast<std::int64_t>(st.selection.size());
    }
    stages.push_back(std::move(st));
  }
  return stages;
}

// Occupancy BCE summed over refinement stages on the tape; labels indexed by
// stage (entry 0 unused). Returns a scalar Var (constant zero when L = 0).
inline Var occupancy_loss_taped(Tape& tape, const std::vector<VolumeStageT>& stages,
                                const std::vector<Tensor>& labels) {
  if (labels.size() != stages.size())
    throw std::invalid_argument("occupancy_loss_taped: one label tensor per stage required");
  Var total;
  for (size_t l = 1; l < stages.size(); ++l) {
    const std::int64_t n = stages[l].spec.count();
    if (labels[l].size() != n)
      throw std::invalid_argument("occupancy_loss_taped: label shape mismatch");
    Var term = tape.bce_mean(stages[l].occupancy, labels[l].data.data(), static_cast<int>(n));
    total = total.ok() ? tape.add(total, term) : term;
  }
  return total.ok() ? total : tape.constant_scalar(0.0);
}

}  // namespace sgcdet
