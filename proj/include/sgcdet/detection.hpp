#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "sgcdet/autodiff.hpp"
#include "sgcdet/geometry.hpp"
#include "sgcdet/kernels.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

// Head row layout, stride 8 + num_classes:
//   col 0      centerness logit
//   cols 1..6  log face distances (x-, x+, y-, y+, z-, z+)
//   col 7      yaw
//   cols 8+    class logits
inline int head_stride(int num_classes) { return 8 + num_classes; }

inline void ensure_head_params(ParameterStore& store, int C, int num_classes) {
  store.ensure("head.trunk.W", {C, C});
  store.ensure("head.trunk.b", {C});
  store.ensure("head.out.W", {head_stride(num_classes), C});
  store.ensure("head.out.b", {head_stride(num_classes)});
}

// Per-voxel MLP over (n, C) feature rows; raw outputs (no exp / sigmoid).
inline Tensor head_forward(const Tensor& features, const ParameterStore& store,
                           int num_classes) {
  if (features.shape.size() != 2)
    throw std::invalid_argument("head_forward: features must be (n, C)");
  const int n = features.shape[0], C = features.shape[1];
  const int out_n = head_stride(num_classes);
  const Tensor& tW = store.param("head.trunk.W");
  const Tensor& tb = store.param("head.trunk.b");
  const Tensor& oW = store.param("head.out.W");
  const Tensor& ob = store.param("head.out.b");
  if (tW.shape != std::vector<int>{C, C} || oW.shape != std::vector<int>{out_n, C})
    throw std::invalid_argument("head_forward: parameter shape mismatch");
  Tensor out({n, out_n});
  std::vector<double> hidden(C);
  for (int i = 0; i < n; ++i) {
    kernels::linear(hidden.data(), tW.data.data(), tb.data.data(), &features.at(i, 0), C, C);
    for (int c = 0; c < C; ++c) hidden[c] = std::tanh(hidden[c]);
    kernels::linear(&out.at(i, 0), oW.data.data(), ob.data.data(), hidden.data(), out_n, C);
  }
  return out;
}

inline Var head_forward_taped(Tape& tape, ParameterStore& store, const std::vector<Var>& voxels,
                              int C, int num_classes) {
  ensure_head_params(store, C, num_classes);
  const int n = static_cast<int>(voxels.size());
  const int out_n = head_stride(num_classes);
  Var tW = tape.param(store, "head.trunk.W", {C, C});
  Var tb = tape.param(store, "head.trunk.b", {C});
  Var oW = tape.param(store, "head.out.W", {out_n, C});
  Var ob = tape.param(store, "head.out.b", {out_n});
  Var packed = tape.pack(voxels);
  Var hidden = tape.tanh(tape.linear_rows(tW, packed, tb, n, C, C));
  return tape.linear_rows(oW, hidden, ob, n, out_n, C);
}

// Per-voxel supervision. A voxel is positive iff its center lies inside at
// least one box (inclusive); overlaps resolve to the smallest-volume box,
// ties to the lowest box index. Regression targets are the assigned box's
// axis-aligned bounds (center +- size/2) plus its yaw; centerness is the
// cube root of the product over axes of min(d-, d+)/max(d-, d+) measured in
// the box's own frame.
struct TargetSet {
  std::vector<int> cls;           // per voxel, -1 for background
  std::vector<double> centerness;
  std::vector<Vec3> tmin;
  std::vector<Vec3> tmax;
  std::vector<double> yaw;
  std::vector<std::int64_t> positives;  // ascending linearized indices
};

inline TargetSet assign_targets(const VoxelGridSpec& grid, const std::vector<Box3D>& boxes) {
  validate_grid(grid);
  for (const Box3D& b : boxes) validate_box(b);
  const std::int64_t n = grid.count();
  TargetSet t;
  t.cls.assign(n, -1);
  t.centerness.assign(n, 0.0);
  t.tmin.assign(n, Vec3{});
  t.tmax.assign(n, Vec3{});
  t.yaw.assign(n, 0.0);
  std::int64_t i = 0;
  for (int x = 0; x < grid.dims[0]; ++x)
    for (int y = 0; y < grid.dims[1]; ++y)
      for (int z = 0; z < grid.dims[2]; ++z, ++i) {
        const Vec3 c = voxel_center(grid, x, y, z);
        int best = -1;
        double best_vol = 0.0;
        for (size_t b = 0; b < boxes.size(); ++b) {
          if (!point_in_box(boxes[b], c)) continue;
          const double vol = boxes[b].size.x * boxes[b].size.y * boxes[b].size.z;
          if (best < 0 || vol < best_vol) {
            best = static_cast<int>(b);
            best_vol = vol;
          }
        }
        if (best < 0) continue;
        const Box3D& bx = boxes[best];
        t.cls[i] = bx.class_id;
        t.tmin[i] = bx.center - bx.size * 0.5;
        t.tmax[i] = bx.center + bx.size * 0.5;
        t.yaw[i] = bx.yaw;
        const Vec3 local = box_local(bx, c);
        double prod = 1.0;
        for (int a = 0; a < 3; ++a) {
          const double dm = local[a] + bx.size[a] * 0.5;
          const double dp = bx.size[a] * 0.5 - local[a];
          prod *= std::min(dm, dp) / std::max(dm, dp);
        }
        t.centerness[i] = std::cbrt(prod);
        t.positives.push_back(i);
      }
  return t;
}

struct DetectionLossBreakdown {
  double total = 0.0;
  double centerness = 0.0;
  double classification = 0.0;
  double box = 0.0;  // (1 - IoU) + yaw L1, averaged over positives
};

// Shared default focal shape; gamma = 0, alpha = 1 reduces it to plain CE.
constexpr double kFocalGamma = 2.0;
constexpr double kFocalAlpha = 0.25;

inline DetectionLossBreakdown detection_loss(const Tensor& rows, const TargetSet& t,
                                             const VoxelGridSpec& grid, int num_classes,
                                             double gamma = kFocalGamma,
                                             double alpha = kFocalAlpha) {
  const int stride = head_stride(num_classes);
  if (rows.shape.size() != 2 || rows.shape[1] != stride ||
      rows.shape[0] != static_cast<int>(t.cls.size()) || grid.count() != rows.shape[0])
    throw std::invalid_argument("detection_loss: shape mismatch");
  const int n = rows.shape[0];
  const std::int64_t n_pos = static_cast<std::int64_t>(t.positives.size());
  DetectionLossBreakdown out;

  for (int r = 0; r < n; ++r)
    for (int c = 0; c < num_classes; ++c)
      out.classification +=
          Tape::focal_term(rows.at(r, 8 + c), t.cls[r] == c, gamma, alpha, nullptr);
  out.classification *= 1.0 / static_cast<double>(std::max<std::int64_t>(1, n_pos));

  for (const std::int64_t lin : t.positives) {
    const int r = static_cast<int>(lin);
    out.centerness += kernels::bce_with_logits(rows.at(r, 0), t.centerness[lin]);
    const int z = static_cast<int>(lin % grid.dims[2]);
    const int y = static_cast<int>((lin / grid.dims[2]) % grid.dims[1]);
    const int x =
        static_cast<int>(lin / (static_cast<std::int64_t>(grid.dims[1]) * grid.dims[2]));
    const Vec3 vc = voxel_center(grid, x, y, z);
    const double aux[10] = {vc.x,          vc.y,          vc.z,          t.tmin[lin].x,
                            t.tmin[lin].y, t.tmin[lin].z, t.tmax[lin].x, t.tmax[lin].y,
                            t.tmax[lin].z, t.yaw[lin]};
    out.box += Tape::iou_yaw_row(&rows.at(r, 0), aux, nullptr);
  }
  if (n_pos > 0) {
    out.centerness /= static_cast<double>(n_pos);
    out.box /= static_cast<double>(n_pos);
  }
  out.total = out.centerness + out.classification + out.box;
  return out;
}

inline Var detection_loss_taped(Tape& tape, Var head_rows, const TargetSet& t,
                                const VoxelGridSpec& grid, int num_classes,
                                double gamma = kFocalGamma, double alpha = kFocalAlpha) {
  const int stride = head_stride(num_classes);
  const int n = static_cast<int>(t.cls.size());
  if (grid.count() != n) throw std::invalid_argument("detection_loss_taped: grid mismatch");
  const std::int64_t n_pos = static_cast<std::int64_t>(t.positives.size());
  const double inv_norm = 1.0 / static_cast<double>(std::max<std::int64_t>(1, n_pos));
  Var total = tape.focal_loss(head_rows, stride, n, num_classes, 8, t.cls, gamma, alpha,
                              inv_norm);
  if (n_pos == 0) return total;

  std::vector<int> pos_rows(t.positives.size());
  std::vector<double> cent(t.positives.size());
  std::vector<double> aux10;
  aux10.reserve(t.positives.size() * 10);
  for (size_t s = 0; s < t.positives.size(); ++s) {
    const std::int64_t lin = t.positives[s];
    pos_rows[s] = static_cast<int>(lin);
    cent[s] = t.centerness[lin];
    const int z = static_cast<int>(lin % grid.dims[2]);
    const int y = static_cast<int>((lin / grid.dims[2]) % grid.dims[1]);
    const int x =
        static_cast<int>(lin / (static_cast<std::int64_t>(grid.dims[1]) * grid.dims[2]));
    const Vec3 vc = voxel_center(grid, x, y, z);
    const double a[10] = {vc.x,          vc.y,          vc.z,          t.tmin[lin].x,
                          t.tmin[lin].y, t.tmin[lin].z, t.tmax[lin].x, t.tmax[lin].y,
                          t.tmax[lin].z, t.yaw[lin]};
    aux10.insert(aux10.end(), a, a + 10);
  }
  total = tape.add(total, tape.center_bce(head_rows, stride, pos_rows, cent));
  total = tape.add(total, tape.iou_yaw_loss(head_rows, stride, pos_rows, aux10));
  return total;
}

// total = detection + lambda_occ * occupancy (+ depth_weight * depth term).
// The scale node keeps the occupancy branch on the tape even at lambda = 0,
// where its parameter gradients are exactly zero.
inline Var total_loss_taped(Tape& tape, Var det, Var occ, double lambda_occ, Var depth = Var{},
                            double depth_weight = 0.0) {
  Var total = tape.add(det, tape.scale(lambda_occ, occ));
  if (depth.ok() && depth_weight != 0.0)
    total = tape.add(total, tape.scale(depth_weight, depth));
  return total;
}

struct Detection {
  Vec3 bmin;
  Vec3 bmax;
  double yaw = 0.0;
  int class_id = 0;
  double score = 0.0;
  std::int64_t voxel = 0;
};

inline double aabb_iou(const Vec3& amin, const Vec3& amax, const Vec3& bmin, const Vec3& bmax) {
  double inter = 1.0, va = 1.0, vb = 1.0;
  for (int i = 0; i < 3; ++i) {
    inter *= std::max(0.0, std::min(amax[i], bmax[i]) - std::max(amin[i], bmin[i]));
    va *= amax[i] - amin[i];
    vb *= bmax[i] - bmin[i];
  }
  const double uni = va + vb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

// Decode every voxel's raw head row, drop scores below score_thresh, then
// greedy class-agnostic NMS: candidates visit in descending score (ties by
// ascending voxel index) and are suppressed when IoU with a kept detection
// exceeds iou_thresh.
inline std::vector<Detection> decode_and_nms(const Tensor& rows, const VoxelGridSpec& grid,
                                             int num_classes, double score_thresh = 0.05,
                                             double iou_thresh = 0.25) {
  const int stride = head_stride(num_classes);
  if (rows.shape.size() != 2 || rows.shape[1] != stride || rows.shape[0] != grid.count())
    throw std::invalid_argument("decode_and_nms: shape mismatch");
  std::vector<Detection> cand;
  std::int64_t i = 0;
  for (int x = 0; x < grid.dims[0]; ++x)
    for (int y = 0; y < grid.dims[1]; ++y)
      for (int z = 0; z < grid.dims[2]; ++z, ++i) {
        const double* r = &rows.at(static_cast<int>(i), 0);
        int best_c = 0;
        for (int c = 1; c < num_classes; ++c)
          if (r[8 + c] > r[8 + best_c]) best_c = c;
        const double score = kernels::sigmoid(r[0]) * kernels::sigmoid(r[8 + best_c]);
        if (score < score_thresh) continue;
        const Vec3 vc = voxel_center(grid, x, y, z);
        Detection d;
        for (int a = 0; a < 3; ++a) {
          d.bmin[a] = vc[a] - std::exp(r[1 + 2 * a]);
          d.bmax[a] = vc[a] + std::exp(r[2 + 2 * a]);
        }
        d.yaw = r[7];
        d.class_id = best_c;
        d.score = score;
        d.voxel = i;
        cand.push_back(d);
      }
  std::sort(cand.begin(), cand.end(), [](const Detection& a, const Detection& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.voxel < b.voxel;
  });
  std::vector<Detection> kept;
  for (const Detection& d : cand) {
    bool suppressed = false;
    for (const Detection& k : kept)
      if (aabb_iou(d.bmin, d.bmax, k.bmin, k.bmax) > iou_thresh) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct EvalReport {
  std::vector<double> thresholds;
  std::vector<std::vector<double>> ap;  // [threshold][class]; -1 for absent classes
  std::vector<double> map;              // [threshold]
};

// Mean average precision over classes that appear in the ground truth.
// Predictions rank by descending score (ties: scene, then insertion order);
// each greedily claims the unmatched same-scene, same-class box of highest
// IoU when that IoU meets the threshold. AP integrates the precision
// envelope over recall. Boxes compare by axis-aligned IoU on center +- size/2.
inline EvalReport evaluate_map(const std::vector<std::vector<Detection>>& preds,
                               const std::vector<std::vector<Box3D>>& gts, int num_classes,
                               const std::vector<double>& thresholds = {0.25, 0.5}) {
  if (preds.size() != gts.size())
    throw std::invalid_argument("evaluate_map: scene count mismatch");
  EvalReport rep;
  rep.thresholds = thresholds;
  for (const double thr : thresholds) {
    std::vector<double> ap_per_class(num_classes, -1.0);
    double ap_sum = 0.0;
    int present = 0;
    for (int c = 0; c < num_classes; ++c) {
      std::int64_t n_gt = 0;
      for (const auto& g : gts)
        for (const Box3D& b : g)
          if (b.class_id == c) ++n_gt;
      if (n_gt == 0) continue;
      ++present;

      struct Ranked {
        double score;
        size_t scene, idx;
      };
      std::vector<Ranked> ranked;
      for (size_t s = 0; s < preds.size(); ++s)
        for (size_t j = 0; j < preds[s].size(); ++j)
          if (preds[s][j].class_id == c) ranked.push_back({preds[s][j].score, s, j});
      std::sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) {
        if (a.score != b.score) return a.score > b.score;
        if (a.scene != b.scene) return a.scene < b.scene;
        return a.idx < b.idx;
      });

      std::vector<std::vector<char>> matched(gts.size());
      for (size_t s = 0; s < gts.size(); ++s) matched[s].assign(gts[s].size(), 0);
      std::vector<double> prec(ranked.size()), rec(ranked.size());
      std::int64_t tp = 0, fp = 0;
      for (size_t r = 0; r < ranked.size(); ++r) {
        const Detection& d = preds[ranked[r].scene][ranked[r].idx];
        const auto& g = gts[ranked[r].scene];
        int best = -1;
        double best_iou = 0.0;
        for (size_t j = 0; j < g.size(); ++j) {
          if (g[j].class_id != c || matched[ranked[r].scene][j]) continue;
          const double iou = aabb_iou(d.bmin, d.bmax, g[j].center - g[j].size * 0.5,
                                      g[j].center + g[j].size * 0.5);
          if (iou > best_iou) {
            best_iou = iou;
            best = static_cast<int>(j);
          }
        }
        if (best >= 0 && best_iou >= thr) {
          matched[ranked[r].scene][best] = 1;
          ++tp;
        } else {
          ++fp;
        }
        prec[r] = static_cast<double>(tp) / static_cast<double>(tp + fp);
        rec[r] = static_cast<double>(tp) / static_cast<double>(n_gt);
      }
      for (size_t r = ranked.size(); r-- > 1;) prec[r - 1] = std::max(prec[r - 1], prec[r]);
      double ap = 0.0;
      double prev_rec = 0.0;
      for (size_t r = 0; r < ranked.size(); ++r) {
        ap += (rec[r] - prev_rec) * prec[r];
        prev_rec = rec[r];
      }
      ap_per_class[c] = ap;
      ap_sum += ap;
    }
    rep.ap.push_back(std::move(ap_per_class));
    rep.map.push_back(present > 0 ? ap_sum / present : 0.0);
  }
  return rep;
}

}  // namespace sgcdet
