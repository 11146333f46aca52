#pragma once

// Shared finite-difference test cases for every differentiable operation.
// Each case is a pure build function plus its input tensors; probe points
// keep sampling coordinates, box faces, and yaw errors away from the
// piecewise boundaries so central differences see a smooth function.

#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgcdet/autodiff.hpp"
#include "sgcdet/depthnet.hpp"
#include "sgcdet/detection.hpp"
#include "sgcdet/geometry.hpp"
#include "sgcdet/lifting.hpp"
#include "sgcdet/tensor.hpp"

namespace gradcases {

struct GradCase {
  std::string name;
  std::vector<sgcdet::Tensor> inputs;
  std::function<sgcdet::Var(sgcdet::Tape&, const std::vector<sgcdet::Var>&)> build;
};

inline sgcdet::Tensor rand_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0,
                                  double hi = 1.0) {
  sgcdet::Tensor t(std::move(shape));
  sgcdet::SplitMix64 rng(seed);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

inline std::vector<double> rand_values(int n, std::uint64_t seed, double lo = -1.0,
                                       double hi = 1.0) {
  std::vector<double> v(static_cast<size_t>(n));
  sgcdet::SplitMix64 rng(seed);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

// Reduce a vector node to a scalar with fixed random weights so every output
// coordinate contributes a distinct gradient path.
inline sgcdet::Var pin(sgcdet::Tape& tape, sgcdet::Var y, int n, std::uint64_t seed) {
  const std::vector<double> w = rand_values(n, seed);
  return tape.dot(y, tape.constant(w.data(), n));
}

// Two small cameras for the lifting composite; the probe point is nudged
// until every projected coordinate sits well inside a trilinear cell.
struct LiftSetup {
  std::vector<sgcdet::CameraView> views;
  sgcdet::Vec3 p;
  sgcdet::DepthBins bins{0.5, 4.5, 4};
};

inline LiftSetup make_lift_setup() {
  LiftSetup s;
  auto make_view = [](const sgcdet::Vec3& pos, const sgcdet::Vec3& target) {
    sgcdet::CameraView v;
    v.intr = {10.0, 10.0, 5.5, 5.5};
    v.ext = sgcdet::look_at(pos, target);
    v.image_h = 12;
    v.image_w = 12;
    v.feat_h = 3;
    v.feat_w = 3;
    sgcdet::validate_view(v);
    return v;
  };
  s.views.push_back(make_view({3.0, 0.6, 0.9}, {0.3, 0.2, 0.5}));
  s.views.push_back(make_view({0.5, 3.2, 1.1}, {0.2, 0.4, 0.6}));

  auto safe_coord = [](double c, int ext) {
    if (c < 0.2 || c > ext - 1 - 0.2) return false;
    const double f = c - std::floor(c);
    return f >= 0.2 && f <= 0.8;
  };
  sgcdet::SplitMix64 rng(71);
  for (int k = 0; k < 20000; ++k) {
    const sgcdet::Vec3 cand{rng.uniform(-0.6, 1.2), rng.uniform(-0.6, 1.2),
                            rng.uniform(-0.2, 1.4)};
    bool ok = true;
    for (const sgcdet::CameraView& v : s.views) {
      const sgcdet::PixelSpacePoint pp = sgcdet::project_point(cand, v);
      if (!sgcdet::in_view(pp, v, s.bins.d_min, s.bins.d_max)) {
        ok = false;
        break;
      }
      const double dbin = sgcdet::metric_to_bin_coord(pp.d, s.bins);
      if (!safe_coord(pp.u, v.feat_w) || !safe_coord(pp.v, v.feat_h) ||
          !safe_coord(dbin, s.bins.D)) {
        ok = false;
        break;
      }
    }
    if (ok) {
      s.p = cand;
      return s;
    }
  }
  throw std::logic_error("make_lift_setup: no kink-safe probe point found");
}

inline std::vector<GradCase> gradcheck_cases() {
  using sgcdet::Tape;
  using sgcdet::Tensor;
  using sgcdet::Var;
  std::vector<GradCase> cases;

  cases.push_back({"linear",
                   {rand_tensor({3, 4}, 11), rand_tensor({4}, 12), rand_tensor({3}, 13)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.linear(v[0], v[1], v[2], 3, 4), 3, 101);
                   }});

  cases.push_back({"linear_no_bias",
                   {rand_tensor({3, 4}, 14), rand_tensor({4}, 15)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.linear(v[0], v[1], Var{}, 3, 4), 3, 102);
                   }});

  cases.push_back({"linear_rows",
                   {rand_tensor({2, 3}, 16), rand_tensor({4, 3}, 17), rand_tensor({2}, 18)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.linear_rows(v[0], v[1], v[2], 4, 2, 3), 8, 103);
                   }});

  cases.push_back({"tanh",
                   {rand_tensor({5}, 19)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.tanh(v[0]), 5, 104);
                   }});

  cases.push_back({"sigmoid",
                   {rand_tensor({5}, 20)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.sigmoid(v[0]), 5, 105);
                   }});

  cases.push_back({"softmax",
                   {rand_tensor({5}, 21)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.softmax(v[0]), 5, 106);
                   }});

  cases.push_back({"softmax_rows",
                   {rand_tensor({3, 4}, 22)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.softmax_rows(v[0], 3, 4), 12, 107);
                   }});

  cases.push_back({"concat_rows",
                   {rand_tensor({2, 3}, 23), rand_tensor({2, 2}, 24)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.concat_rows(v[0], v[1], 2, 3, 2), 10, 108);
                   }});

  cases.push_back({"add",
                   {rand_tensor({4}, 25), rand_tensor({4}, 26)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.add(v[0], v[1]), 4, 109);
                   }});

  cases.push_back({"scale",
                   {rand_tensor({4}, 27)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.scale(1.7, v[0]), 4, 110);
                   }});

  cases.push_back({"sum",
                   {rand_tensor({6}, 28)},
                   [](Tape& t, const std::vector<Var>& v) { return t.sum(v[0]); }});

  cases.push_back({"dot",
                   {rand_tensor({4}, 29), rand_tensor({4}, 30)},
                   [](Tape& t, const std::vector<Var>& v) { return t.dot(v[0], v[1]); }});

  cases.push_back({"pack",
                   {rand_tensor({2}, 31), rand_tensor({3}, 32)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.pack({v[0], v[1]}), 5, 111);
                   }});

  cases.push_back({"weighted_sum",
                   {rand_tensor({3}, 33), rand_tensor({4}, 34), rand_tensor({4}, 35),
                    rand_tensor({4}, 36)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.weighted_sum(v[0], {v[1], v[2], v[3]}), 4, 112);
                   }});

  cases.push_back({"mean_stack",
                   {rand_tensor({4}, 37), rand_tensor({4}, 38), rand_tensor({4}, 39)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.mean_stack({v[0], v[1], v[2]}), 4, 113);
                   }});

  cases.push_back({"attention",
                   {rand_tensor({3}, 40), rand_tensor({3}, 41), rand_tensor({3}, 42),
                    rand_tensor({3}, 43), rand_tensor({3}, 44)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.attention(v[0], {v[1], v[2]}, {v[3], v[4]}), 3, 114);
                   }});

  // Interior coordinates: fractional parts well inside [0, 1], floor cells
  // untouched by the probe step.
  cases.push_back({"trilinear_field_and_coords",
                   {rand_tensor({2, 3, 4, 2}, 45),
                    Tensor::from({3}, {1.3, 0.45, 2.3})},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.trilinear(v[0], 2, 3, 4, 2, v[1]), 2, 115);
                   }});

  cases.push_back({"lifted_sample_base",
                   {rand_tensor({2, 3, 2}, 46), rand_tensor({2, 3, 4}, 47, 0.2, 1.0)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t, t.lifted_sample(v[0], v[1], 2, 3, 4, 2, 0.6, 0.7, 1.3), 2,
                                116);
                   }});

  cases.push_back({"lifted_sample_offsets",
                   {rand_tensor({2, 3, 2}, 48), rand_tensor({2, 3, 4}, 49, 0.2, 1.0),
                    Tensor::from({6}, {0.0, 0.0, 0.0, 0.12, -0.08, 0.21})},
                   [](Tape& t, const std::vector<Var>& v) {
                     return pin(t,
                                t.lifted_sample(v[0], v[1], 2, 3, 4, 2, 0.6, 0.7, 1.3, v[2], 3),
                                2, 117);
                   }});

  cases.push_back({"bce_mean",
                   {rand_tensor({4}, 50, 0.2, 0.8)},
                   [](Tape& t, const std::vector<Var>& v) {
                     static const double labels[4] = {1.0, 0.0, 1.0, 0.0};
                     return t.bce_mean(v[0], labels, 4);
                   }});

  cases.push_back({"center_bce",
                   {rand_tensor({3, 11}, 51)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return t.center_bce(v[0], 11, {0, 2}, {0.3, 0.8});
                   }});

  {
    // Two positive rows; predicted faces and yaws kept strictly away from
    // the target faces so no min/max tie sits within an eps step.
    Tensor rows({2, 11});
    sgcdet::SplitMix64 rng(52);
    for (double& x : rows.data) x = rng.uniform(-0.5, 0.5);
    const double f0[6] = {0.6, 0.3, 0.55, 0.42, 0.25, 0.5};
    const double f1[6] = {0.7, 0.8, 0.33, 0.6, 0.45, 0.62};
    for (int c = 0; c < 6; ++c) {
      rows.at(0, 1 + c) = std::log(f0[c]);
      rows.at(1, 1 + c) = std::log(f1[c]);
    }
    rows.at(0, 7) = 0.5;
    rows.at(1, 7) = -0.35;
    std::vector<double> aux = {0.1,  -0.05, 0.2, -0.3,  -0.4,  -0.1, 0.55, 0.45, 0.58, 0.2,
                               -0.2, 0.15,  0.1, -0.75, -0.25, -0.3, 0.35, 0.7,  0.52, -0.1};
    cases.push_back({"iou_yaw_loss",
                     {std::move(rows)},
                     [aux](Tape& t, const std::vector<Var>& v) {
                       return t.iou_yaw_loss(v[0], 11, {0, 1}, aux);
                     }});
  }

  cases.push_back({"focal_loss",
                   {rand_tensor({3, 11}, 53, -1.2, 1.2)},
                   [](Tape& t, const std::vector<Var>& v) {
                     return t.focal_loss(v[0], 11, 3, 3, 8, {0, -1, 2}, 2.0, 0.25, 0.5);
                   }});

  cases.push_back({"nll_pick",
                   {rand_tensor({2, 5}, 54)},
                   [](Tape& t, const std::vector<Var>& v) {
                     Var probs = t.softmax_rows(v[0], 2, 5);
                     return t.nll_pick(probs, 2, 5, {1, 3});
                   }});

  cases.push_back({"depth_forward",
                   {rand_tensor({4, 3}, 55), rand_tensor({4, 4}, 56), rand_tensor({3, 3}, 57),
                    rand_tensor({3}, 58), rand_tensor({4, 4}, 59), rand_tensor({4}, 60),
                    rand_tensor({4, 7}, 61), rand_tensor({4}, 62)},
                   [](Tape& t, const std::vector<Var>& v) {
                     sgcdet::DepthVars dv;
                     dv.mono_W = v[2];
                     dv.mono_b = v[3];
                     dv.mv_W = v[4];
                     dv.mv_b = v[5];
                     dv.dec_W = v[6];
                     dv.dec_b = v[7];
                     return pin(t, sgcdet::depth_forward_taped(t, v[0], v[1], dv, 2, 2, 3, 4),
                                16, 118);
                   }});

  {
    // Full lifting composite: per-view deformable sampling plus the
    // cross-view attention fuse. Offset weights start at zero so the sampled
    // coordinates stay in the cell picked by make_lift_setup.
    const LiftSetup setup = make_lift_setup();
    std::vector<Tensor> inputs = {
        rand_tensor({3, 3, 3}, 63),           // view 0 features
        rand_tensor({3, 3, 4}, 64, 0.2, 1.0), // view 0 depth weights
        rand_tensor({3, 3, 3}, 65),
        rand_tensor({3, 3, 4}, 66, 0.2, 1.0),
        rand_tensor({3, 3}, 67),                                      // value W
        Tensor({6, 3}),                                               // offset W (zero)
        Tensor::from({6}, {0.12, -0.1, 0.15, -0.08, 0.05, -0.13}),    // offset b
        rand_tensor({2, 3}, 68),                                      // attn W
        rand_tensor({2}, 69),                                         // attn b
        rand_tensor({3, 3}, 70),                                      // fuse q
        rand_tensor({3, 3}, 71),                                      // fuse k
        rand_tensor({3, 3}, 72),                                      // fuse v
    };
    cases.push_back({"aggregate_point",
                     std::move(inputs),
                     [setup](Tape& t, const std::vector<Var>& v) {
                       std::vector<sgcdet::ViewFieldT> fields;
                       fields.push_back({setup.views[0], v[0], v[1]});
                       fields.push_back({setup.views[1], v[2], v[3]});
                       sgcdet::LiftVars lift;
                       lift.value_W = v[4];
                       lift.off_W = v[5];
                       lift.off_b = v[6];
                       lift.attn_W = v[7];
                       lift.attn_b = v[8];
                       sgcdet::FuseVars fuse;
                       fuse.q_W = v[9];
                       fuse.k_W = v[10];
                       fuse.v_W = v[11];
                       return pin(t,
                                  sgcdet::aggregate_point_taped(t, setup.p, fields, setup.bins,
                                                                lift, fuse, 2, 3),
                                  3, 119);
                     }});
  }

  {
    // Real assignment on a tiny grid; predicted yaws picked away from the
    // target yaw so the L1 term is differentiable at the probe point.
    sgcdet::VoxelGridSpec grid;
    grid.origin = {0.0, 0.0, 0.0};
    grid.dims[0] = 2;
    grid.dims[1] = 2;
    grid.dims[2] = 1;
    grid.voxel_size = {1.0, 1.0, 1.0};
    sgcdet::Box3D box;
    box.center = {0.6, 0.55, 0.5};
    box.size = {1.0, 0.9, 0.8};
    box.yaw = 0.3;
    box.class_id = 1;
    const sgcdet::TargetSet targets = sgcdet::assign_targets(grid, {box});
    if (targets.positives.empty())
      throw std::logic_error("gradcheck_cases: detection case has no positives");
    Tensor rows({4, 11});
    sgcdet::SplitMix64 rng(73);
    for (double& x : rows.data) x = rng.uniform(-0.8, 0.8);
    for (int r = 0; r < 4; ++r) rows.at(r, 7) = 0.8 - 0.31 * r;
    cases.push_back({"detection_loss",
                     {std::move(rows)},
                     [grid, targets](Tape& t, const std::vector<Var>& v) {
                       return sgcdet::detection_loss_taped(t, v[0], targets, grid, 3);
                     }});
  }

  return cases;
}

// Finite-difference check for gradients that accumulate into a parameter
// store. `build` must construct the loss on the given tape from the store's
// current values; it runs on a fresh tape per probe.
template <typename Build>
double store_fd_max_rel_err(sgcdet::ParameterStore& store,
                            const std::vector<std::string>& names, Build&& build, double eps) {
  store.zero_grads();
  {
    sgcdet::Tape tape;
    sgcdet::Var loss = build(tape);
    tape.backward(loss);
  }
  std::vector<sgcdet::Tensor> analytic;
  analytic.reserve(names.size());
  for (const std::string& n : names) analytic.push_back(store.grad(n));

  double max_err = 0.0;
  for (size_t k = 0; k < names.size(); ++k) {
    sgcdet::Tensor& p = store.param(names[k]);
    for (std::int64_t i = 0; i < p.size(); ++i) {
      const double keep = p.data[i];
      double fp, fm;
      p.data[i] = keep + eps;
      {
        sgcdet::Tape tape;
        fp = tape.scalar(build(tape));
      }
      p.data[i] = keep - eps;
      {
        sgcdet::Tape tape;
        fm = tape.scalar(build(tape));
      }
      p.data[i] = keep;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err =
          std::abs(analytic[k].data[i] - numeric) / std::max(1.0, std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  return max_err;
}

}  // namespace gradcases
