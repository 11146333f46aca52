#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sgcdet/autodiff.hpp"
#include "sgcdet/geometry.hpp"
#include "sgcdet/kernels.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

// Uniform depth discretization over [d_min, d_max] with D bins; bin centers
// at d_min + (i + 0.5) * delta.
struct DepthBins {
  double d_min = 0.2;
  double d_max = 5.0;
  int D = 12;

  double delta() const { return (d_max - d_min) / static_cast<double>(D); }
  double center(int i) const { return d_min + (i + 0.5) * delta(); }
};

inline void validate_bins(const DepthBins& b) {
  if (!(b.d_min < b.d_max)) throw std::invalid_argument("DepthBins: d_min must be below d_max");
  if (b.D < 2) throw std::invalid_argument("DepthBins: need at least 2 bins");
}

// Metric depth to continuous bin index, clamped to [0, D-1].
inline double metric_to_bin_coord(double d, const DepthBins& bins) {
  const double raw = (d - bins.d_min) / bins.delta() - 0.5;
  return std::clamp(raw, 0.0, static_cast<double>(bins.D - 1));
}

// Index of the bin whose interval contains d (for GT depth supervision).
inline int metric_to_bin_index(double d, const DepthBins& bins) {
  const int raw = static_cast<int>(std::floor((d - bins.d_min) / bins.delta()));
  return std::clamp(raw, 0, bins.D - 1);
}

// Plane-sweep warp: for each ref feature pixel, back-project to the world
// point at depth d_i on the ref ray, project into src, bilinearly sample
// src_feat. Out-of-bounds or behind-camera samples are zero.
inline Tensor warp_features(const Tensor& src_feat, double d_i, const CameraView& ref,
                            const CameraView& src) {
  if (src_feat.shape.size() != 3)
    throw std::invalid_argument("warp_features: features must be (h, w, C)");
  const int h = src_feat.shape[0], w = src_feat.shape[1], C = src_feat.shape[2];
  if (h != ref.feat_h || w != ref.feat_w || h != src.feat_h || w != src.feat_w)
    throw std::invalid_argument("warp_features: views must share the feature resolution");
  Tensor out({h, w, C});
  for (int v = 0; v < h; ++v)
    for (int u = 0; u < w; ++u) {
      const Vec3 world = unproject_point(ref, u, v, d_i);
      const PixelSpacePoint pp = project_point(world, src);
      if (!pp.valid) continue;
      kernels::bilinear_sample(&out.at(v, u, 0), src_feat.data.data(), h, w, C, pp.u, pp.v);
    }
  return out;
}

// Matching scores C(h,w,i) = (1/K) sum_k <ref(h,w), warped[k][i](h,w)> / sqrt(C).
inline Tensor build_cost_volume(const Tensor& ref_feat,
                                const std::vector<std::vector<Tensor>>& warped) {
  if (warped.empty()) throw std::invalid_argument("build_cost_volume: need at least one view");
  const int h = ref_feat.shape[0], w = ref_feat.shape[1], C = ref_feat.shape[2];
  const int K = static_cast<int>(warped.size());
  const int D = static_cast<int>(warped[0].size());
  Tensor cost({h, w, D});
  const double scale = 1.0 / (static_cast<double>(K) * std::sqrt(static_cast<double>(C)));
  for (int k = 0; k < K; ++k) {
    if (static_cast<int>(warped[k].size()) != D)
      throw std::invalid_argument("build_cost_volume: ragged plane count");
    for (int i = 0; i < D; ++i) {
      const Tensor& wk = warped[k][i];
      if (!wk.same_shape(ref_feat))
        throw std::invalid_argument("build_cost_volume: warped shape mismatch");
      for (int v = 0; v < h; ++v)
        for (int u = 0; u < w; ++u)
          cost.at(v, u, i) +=
              scale * kernels::vdot(&ref_feat.at(v, u, 0), &wk.at(v, u, 0), C);
    }
  }
  return cost;
}

// Cost volume for one reference view against its K nearest neighbors.
inline Tensor cost_volume_for_view(const std::vector<Tensor>& feats,
                                   const std::vector<CameraView>& views, int ref_index,
                                   const DepthBins& bins, int K) {
  validate_bins(bins);
  const std::vector<int> near = nearest_views(views, ref_index, K);
  std::vector<std::vector<Tensor>> warped(near.size());
  for (size_t k = 0; k < near.size(); ++k) {
    warped[k].reserve(bins.D);
    for (int i = 0; i < bins.D; ++i)
      warped[k].push_back(
          warp_features(feats[near[k]], bins.center(i), views[ref_index], views[near[k]]));
  }
  return build_cost_volume(feats[ref_index], warped);
}

// Parameter names for the depth network; widths are C->C (monocular branch),
// D->D (cost branch), (C+D)->D (decoder).
struct DepthVars {
  Var mono_W, mono_b, mv_W, mv_b, dec_W, dec_b;
};

inline void ensure_depth_params(ParameterStore& store, int C, int D) {
  store.ensure("depth.mono.W", {C, C});
  store.ensure("depth.mono.b", {C});
  store.ensure("depth.mv.W", {D, D});
  store.ensure("depth.mv.b", {D});
  store.ensure("depth.dec.W", {D, C + D});
  store.ensure("depth.dec.b", {D});
}

inline DepthVars make_depth_vars(Tape& tape, ParameterStore& store, int C, int D) {
  ensure_depth_params(store, C, D);
  DepthVars v;
  v.mono_W = tape.param(store, "depth.mono.W", {C, C});
  v.mono_b = tape.param(store, "depth.mono.b", {C});
  v.mv_W = tape.param(store, "depth.mv.W", {D, D});
  v.mv_b = tape.param(store, "depth.mv.b", {D});
  v.dec_W = tape.param(store, "depth.dec.W", {D, C + D});
  v.dec_b = tape.param(store, "depth.dec.b", {D});
  return v;
}

// Depth distribution for one view on the tape: per-pixel MLPs over the ref
// features and the cost volume, concatenated, decoded, softmaxed over bins.
// Output node holds (h*w) x D rows, i.e. an (h, w, D) map.
inline Var depth_forward_taped(Tape& tape, Var ref_feat, Var cost, const DepthVars& p, int h,
                               int w, int C, int D) {
  const int rows = h * w;
  Var mono = tape.tanh(tape.linear_rows(p.mono_W, ref_feat, p.mono_b, rows, C, C));
  Var mv = tape.tanh(tape.linear_rows(p.mv_W, cost, p.mv_b, rows, D, D));
  Var cat = tape.concat_rows(mono, mv, rows, C, D);
  Var logits = tape.linear_rows(p.dec_W, cat, p.dec_b, rows, D, C + D);
  return tape.softmax_rows(logits, rows, D);
}

// Tape-free twin of depth_forward_taped; identical arithmetic via the shared
// kernels.
inline Tensor depth_forward(const Tensor& ref_feat, const Tensor& cost,
                            const ParameterStore& store) {
  const int h = ref_feat.shape[0], w = ref_feat.shape[1], C = ref_feat.shape[2];
  const int D = cost.shape[2];
  if (cost.shape[0] != h || cost.shape[1] != w)
    throw std::invalid_argument("depth_forward: feature/cost shape mismatch");
  const int rows = h * w;
  Tensor mono({rows, C});
  kernels::linear_rows(mono.data.data(), store.param("depth.mono.W").data.data(),
                       store.param("depth.mono.b").data.data(), ref_feat.data.data(), rows, C, C);
  for (double& x : mono.data) x = std::tanh(x);
  Tensor mv({rows, D});
  kernels::linear_rows(mv.data.data(), store.param("depth.mv.W").data.data(),
                       store.param("depth.mv.b").data.data(), cost.data.data(), rows, D, D);
  for (double& x : mv.data) x = std::tanh(x);
  Tensor cat({rows, C + D});
  for (int r = 0; r < rows; ++r) {
    std::copy(&mono.at(r, 0), &mono.at(r, 0) + C, &cat.at(r, 0));
    std::copy(&mv.at(r, 0), &mv.at(r, 0) + D, &cat.at(r, 0) + C);
  }
  Tensor probs({h, w, D});
  kernels::linear_rows(probs.data.data(), store.param("depth.dec.W").data.data(),
                       store.param("depth.dec.b").data.data(), cat.data.data(), rows, D, C + D);
  kernels::softmax_rows(probs.data.data(), probs.data.data(), rows, D);
  return probs;
}

}  // namespace sgcdet
