#pragma once

#include <algorithm>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "sgcdet/autodiff.hpp"
#include "sgcdet/depthnet.hpp"
#include "sgcdet/geometry.hpp"
#include "sgcdet/kernels.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

// Exact operation accounting for the benchmark reports. Counts depend only
// on geometry and the stage configuration, never on thread scheduling.
struct Counters {
  std::vector<std::int64_t> aggregate_per_stage;
  std::int64_t aggregate_calls = 0;
  std::int64_t deformable_samples = 0;
  std::int64_t corner_fetches = 0;

  void add(const Counters& o) {
    if (aggregate_per_stage.size() < o.aggregate_per_stage.size())
      aggregate_per_stage.resize(o.aggregate_per_stage.size(), 0);
    for (size_t i = 0; i < o.aggregate_per_stage.size(); ++i)
      aggregate_per_stage[i] += o.aggregate_per_stage[i];
    aggregate_calls += o.aggregate_calls;
    deformable_samples += o.deformable_samples;
    corner_fetches += o.corner_fetches;
  }
};

// One view's lifted feature field: 2D features plus a per-pixel depth
// distribution. The implied 3D volume feat(h,w,:) * depth(h,w,d) is never
// materialized.
struct ViewField {
  CameraView view;
  const Tensor* feat = nullptr;   // (h, w, C)
  const Tensor* depth = nullptr;  // (h, w, D)
};

struct ViewFieldT {
  CameraView view;
  Var feat;
  Var depth;
};

// Deformable-attention parameters. offset weights start at zero with a fixed
// unit stencil in the biases; attention-weight generator starts at zero
// (uniform weights); the value projection keeps the default seeded init.
struct LiftVars {
  Var value_W, off_W, off_b, attn_W, attn_b;
};

inline std::vector<double> offset_stencil(int M) {
  std::vector<double> b(3 * M, 0.0);
  for (int m = 0; m < M; ++m) {
    const int axis = (m % 6) / 2;          // u, u, v, v, d, d
    const double sign = (m % 2) ? -1.0 : 1.0;
    const double mag = 1.0 + static_cast<double>(m / 6);
    b[3 * m + axis] = sign * mag;
  }
  return b;
}

inline void ensure_lift_params(ParameterStore& store, int C, int M) {
  store.ensure("lift.value.W", {C, C});
  if (!store.has("lift.offset.W")) store.set("lift.offset.W", Tensor({3 * M, C}));
  if (!store.has("lift.offset.b"))
    store.set("lift.offset.b", Tensor::from({3 * M}, offset_stencil(M)));
  if (!store.has("lift.attn.W")) store.set("lift.attn.W", Tensor({M, C}));
  if (!store.has("lift.attn.b")) store.set("lift.attn.b", Tensor({M}));
}

inline LiftVars make_lift_vars(Tape& tape, ParameterStore& store, int C, int M) {
  ensure_lift_params(store, C, M);
  LiftVars v;
  v.value_W = tape.param(store, "lift.value.W", {C, C});
  v.off_W = tape.param(store, "lift.offset.W", {3 * M, C});
  v.off_b = tape.param(store, "lift.offset.b", {3 * M});
  v.attn_W = tape.param(store, "lift.attn.W", {M, C});
  v.attn_b = tape.param(store, "lift.attn.b", {M});
  return v;
}

// Inter-view attention parameters: square query/key/value projections.
struct FuseVars {
  Var q_W, k_W, v_W;
};

inline void ensure_fuse_params(ParameterStore& store, int C) {
  store.ensure("fuse.q.W", {C, C});
  store.ensure("fuse.k.W", {C, C});
  store.ensure("fuse.v.W", {C, C});
}

inline FuseVars make_fuse_vars(Tape& tape, ParameterStore& store, int C) {
  ensure_fuse_params(store, C);
  FuseVars v;
  v.q_W = tape.param(store, "fuse.q.W", {C, C});
  v.k_W = tape.param(store, "fuse.k.W", {C, C});
  v.v_W = tape.param(store, "fuse.v.W", {C, C});
  return v;
}

// ---- Plain (tape-free) path ----

inline std::vector<double> sample_lifted(const Tensor& feat, const Tensor& depth, double u,
                                         double v, double d) {
  const int h = feat.shape[0], w = feat.shape[1], C = feat.shape[2];
  const int D = depth.shape[2];
  if (depth.shape[0] != h || depth.shape[1] != w)
    throw std::invalid_argument("sample_lifted: feature/depth shape mismatch");
  if (!std::isfinite(u) || !std::isfinite(v) || !std::isfinite(d))
    throw std::invalid_argument("sample_lifted: non-finite coordinate");
  std::vector<double> out(C);
  kernels::lifted_sample(out.data(), feat.data.data(), depth.data.data(), h, w, D, C, u, v, d);
  return out;
}

// Single-view deformable aggregation at base coordinate (u, v, dbin):
// query sample, offset/weight generation from the query, M offset samples,
// attention-weighted sum, value projection.
inline std::vector<double> intra_view_aggregate(const ViewField& f, double u, double v, double d,
                                                const ParameterStore& store, int M) {
  const int h = f.feat->shape[0], w = f.feat->shape[1], C = f.feat->shape[2];
  const int D = f.depth->shape[2];
  std::vector<double> q(C);
  kernels::lifted_sample(q.data(), f.feat->data.data(), f.depth->data.data(), h, w, D, C, u, v,
                         d);
  std::vector<double> off(3 * M);
  kernels::linear(off.data(), store.param("lift.offset.W").data.data(),
                  store.param("lift.offset.b").data.data(), q.data(), 3 * M, C);
  std::vector<double> wts(M);
  kernels::linear(wts.data(), store.param("lift.attn.W").data.data(),
                  store.param("lift.attn.b").data.data(), q.data(), M, C);
  kernels::softmax(wts.data(), wts.data(), M);
  std::vector<double> acc(C, 0.0), smp(C);
  for (int m = 0; m < M; ++m) {
    kernels::lifted_sample(smp.data(), f.feat->data.data(), f.depth->data.data(), h, w, D, C,
                           u + off[3 * m], v + off[3 * m + 1], d + off[3 * m + 2]);
    for (int c = 0; c < C; ++c) acc[c] += wts[m] * smp[c];
  }
  std::vector<double> out(C);
  kernels::linear(out.data(), store.param("lift.value.W").data.data(), nullptr, acc.data(), C, C);
  return out;
}

// Attention fusion over per-view aggregated features. Views are sorted by
// index before any reduction, so the result is invariant to input order.
inline std::vector<double> inter_view_fuse(std::vector<std::pair<int, std::vector<double>>> feats,
                                           const ParameterStore& store, int C) {
  if (feats.empty()) return std::vector<double>(C, 0.0);
  std::sort(feats.begin(), feats.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  const int n = static_cast<int>(feats.size());
  std::vector<double> mean(C, 0.0);
  for (const auto& [idx, f] : feats)
    for (int c = 0; c < C; ++c) mean[c] += f[c];
  for (int c = 0; c < C; ++c) mean[c] /= static_cast<double>(n);
  std::vector<double> q(C);
  kernels::linear(q.data(), store.param("fuse.q.W").data.data(), nullptr, mean.data(), C, C);
  std::vector<double> keys(static_cast<size_t>(n) * C), values(static_cast<size_t>(n) * C);
  for (int i = 0; i < n; ++i) {
    kernels::linear(&keys[static_cast<size_t>(i) * C], store.param("fuse.k.W").data.data(),
                    nullptr, feats[i].second.data(), C, C);
    kernels::linear(&values[static_cast<size_t>(i) * C], store.param("fuse.v.W").data.data(),
                    nullptr, feats[i].second.data(), C, C);
  }
  std::vector<double> out(C), w(n);
  kernels::attention(out.data(), w.data(), q.data(), keys.data(), values.data(), n, C);
  return out;
}

// Full aggregation for one world point: project into every view, keep views
// that see the point, aggregate per view, fuse across views.
inline std::vector<double> aggregate_point(const Vec3& p, const std::vector<ViewField>& fields,
                                           const ParameterStore& store, const DepthBins& bins,
                                           int M, int C, Counters* counters = nullptr) {
  if (counters) counters->aggregate_calls += 1;
  std::vector<std::pair<int, std::vector<double>>> per_view;
  for (size_t i = 0; i < fields.size(); ++i) {
    const PixelSpacePoint pp = project_point(p, fields[i].view);
    if (!in_view(pp, fields[i].view, bins.d_min, bins.d_max)) continue;
    const double dbin = metric_to_bin_coord(pp.d, bins);
    per_view.emplace_back(static_cast<int>(i),
                          intra_view_aggregate(fields[i], pp.u, pp.v, dbin, store, M));
    if (counters) {
      counters->deformable_samples += M;
      counters->corner_fetches += 8 * (1 + M);
    }
  }
  return inter_view_fuse(std::move(per_view), store, C);
}

// ---- Taped path (same arithmetic through the shared kernels) ----

inline Var intra_view_aggregate_taped(Tape& tape, const ViewFieldT& f, int h, int w, int D,
                                      int C, double u, double v, double d, const LiftVars& p,
                                      int M) {
  Var q = tape.lifted_sample(f.feat, f.depth, h, w, D, C, u, v, d);
  Var off = tape.linear(p.off_W, q, p.off_b, 3 * M, C);
  Var wts = tape.softmax(tape.linear(p.attn_W, q, p.attn_b, M, C));
  std::vector<Var> samples;
  samples.reserve(M);
  for (int m = 0; m < M; ++m)
    samples.push_back(tape.lifted_sample(f.feat, f.depth, h, w, D, C, u, v, d, off, 3 * m));
  Var ws = tape.weighted_sum(wts, samples);
  return tape.linear(p.value_W, ws, Var{}, C, C);
}

inline Var inter_view_fuse_taped(Tape& tape, std::vector<std::pair<int, Var>> feats,
                                 const FuseVars& p, int C) {
  if (feats.empty()) return tape.zeros(C);
  std::sort(feats.begin(), feats.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::vector<Var> vars;
  vars.reserve(feats.size());
  for (const auto& [idx, v] : feats) vars.push_back(v);
  Var q = tape.linear(p.q_W, tape.mean_stack(vars), Var{}, C, C);
  std::vector<Var> keys, values;
  keys.reserve(vars.size());
  values.reserve(vars.size());
  for (Var v : vars) {
    keys.push_back(tape.linear(p.k_W, v, Var{}, C, C));
    values.push_back(tape.linear(p.v_W, v, Var{}, C, C));
  }
  return tape.attention(q, keys, values);
}

inline Var aggregate_point_taped(Tape& tape, const Vec3& p, const std::vector<ViewFieldT>& fields,
                                 const DepthBins& bins, const LiftVars& lift, const FuseVars& fuse,
                                 int M, int C, Counters* counters = nullptr) {
  if (counters) counters->aggregate_calls += 1;
  std::vector<std::pair<int, Var>> per_view;
  for (size_t i = 0; i < fields.size(); ++i) {
    const CameraView& view = fields[i].view;
    const PixelSpacePoint pp = project_point(p, view);
    if (!in_view(pp, view, bins.d_min, bins.d_max)) continue;
    const double dbin = metric_to_bin_coord(pp.d, bins);
    per_view.emplace_back(
        static_cast<int>(i),
        intra_view_aggregate_taped(tape, fields[i], view.feat_h, view.feat_w, bins.D, C, pp.u,
                                   pp.v, dbin, lift, M));
    if (counters) {
      counters->deformable_samples += M;
      counters->corner_fetches += 8 * (1 + M);
    }
  }
  return inter_view_fuse_taped(tape, std::move(per_view), fuse, C);
}

}  // namespace sgcdet
