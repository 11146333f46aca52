#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "sgcdet/kernels.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

// Handle to one recorded node's output span.
struct Var {
  int id = -1;
  bool ok() const { return id >= 0; }
};

// Reverse-mode tape. Forward values are computed eagerly at node creation
// (callers branch on values, e.g. top-k selection), all into one arena.
// backward() sweeps nodes in reverse creation order, which is a reverse
// topological order by construction, so gradient accumulation order is fixed
// and results are bit-identical across runs.
class Tape {
 public:
  enum class Op : std::uint8_t {
    kConst,
    kInput,
    kParam,
    kLinear,
    kLinearRows,
    kTanh,
    kSigmoid,
    kSoftmax,
    kSoftmaxRows,
    kConcatRows,
    kAdd,
    kScale,
    kSum,
    kDot,
    kPack,
    kWeightedSum,
    kMeanStack,
    kAttn,
    kTrilinear,
    kLiftedSample,
    kBceMean,
    kCenterBce,
    kIouYaw,
    kFocal,
    kNllPick,
  };

  void clear() {
    nodes_.clear();
    vals_.clear();
    grads_.clear();
    ints_.clear();
    aux_.clear();
    links_.clear();
    param_vars_.clear();
    backward_done_ = false;
  }

  int node_count() const { return static_cast<int>(nodes_.size()); }

  // ---- Leaves ----

  Var constant(const double* p, int n) { return leaf(Op::kConst, p, n, false); }
  Var constant(const Tensor& t) {
    return leaf(Op::kConst, t.data.data(), static_cast<int>(t.size()), false);
  }
  Var constant_scalar(double v) { return leaf(Op::kConst, &v, 1, false); }
  Var zeros(int n) {
    Var v = alloc_node(Op::kConst, n, false);
    std::fill(val_ptr(v), val_ptr(v) + n, 0.0);
    return v;
  }

  Var input(const double* p, int n) { return leaf(Op::kInput, p, n, true); }
  Var input(const Tensor& t) {
    return leaf(Op::kInput, t.data.data(), static_cast<int>(t.size()), true);
  }

  // Parameter leaf bound to a store entry; gradients accumulate into the
  // store after backward(). Repeated requests for one name reuse the node.
  Var param(ParameterStore& store, const std::string& name, const std::vector<int>& shape) {
    auto it = param_vars_.find(name);
    if (it != param_vars_.end()) return it->second;
    Tensor& value = store.ensure(name, shape);
    Var v = leaf(Op::kParam, value.data.data(), static_cast<int>(value.size()), true);
    links_.push_back(Link{v.id, &store.grad(name)});
    param_vars_.emplace(name, v);
    return v;
  }

  // ---- Value access ----

  int len(Var v) const { return nodes_[check(v)].len; }
  const double* data(Var v) const { return vals_.data() + nodes_[check(v)].off; }
  double value_at(Var v, int i) const { return vals_[nodes_[check(v)].off + i]; }
  double scalar(Var v) const {
    if (len(v) != 1) throw std::invalid_argument("Tape::scalar: node is not a scalar");
    return vals_[nodes_[v.id].off];
  }
  Tensor value_tensor(Var v, std::vector<int> shape) const {
    Tensor t(std::move(shape));
    if (t.size() != len(v)) throw std::invalid_argument("Tape::value_tensor: shape mismatch");
    std::copy(data(v), data(v) + t.size(), t.data.begin());
    return t;
  }
  // Valid after backward(); zero for nodes the loss does not reach.
  const double* grad_data(Var v) const {
    if (!backward_done_) throw std::logic_error("Tape::grad_data: no backward pass yet");
    return grads_.data() + nodes_[check(v)].off;
  }

  // ---- Ops ----

  Var linear(Var W, Var x, Var b, int out_n, int in_n) {
    require_len(W, out_n * in_n, "linear weight");
    require_len(x, in_n, "linear input");
    if (b.ok()) require_len(b, out_n, "linear bias");
    Var y = alloc_node(Op::kLinear, out_n, any_req({W, x, b}));
    Node& n = nodes_[y.id];
    n.a = W.id;
    n.b = x.id;
    n.c = b.id;
    n.iaux_off = push_ints({out_n, in_n});
    n.iaux_n = 2;
    kernels::linear(val_ptr(y), in_ptr(W), b.ok() ? in_ptr(b) : nullptr, in_ptr(x), out_n, in_n);
    return y;
  }

  Var linear_rows(Var W, Var X, Var b, int rows, int out_n, int in_n) {
    require_len(W, out_n * in_n, "linear_rows weight");
    require_len(X, rows * in_n, "linear_rows input");
    if (b.ok()) require_len(b, out_n, "linear_rows bias");
    Var y = alloc_node(Op::kLinearRows, rows * out_n, any_req({W, X, b}));
    Node& n = nodes_[y.id];
    n.a = W.id;
    n.b = X.id;
    n.c = b.id;
    n.iaux_off = push_ints({rows, out_n, in_n});
    n.iaux_n = 3;
    kernels::linear_rows(val_ptr(y), in_ptr(W), b.ok() ? in_ptr(b) : nullptr, in_ptr(X), rows,
                         out_n, in_n);
    return y;
  }

  Var tanh(Var x) {
    Var y = alloc_node(Op::kTanh, len(x), nodes_[x.id].req);
    nodes_[y.id].a = x.id;
    const double* xp = in_ptr(x);
    double* yp = val_ptr(y);
    for (int i = 0; i < nodes_[y.id].len; ++i) yp[i] = std::tanh(xp[i]);
    return y;
  }

  Var sigmoid(Var x) {
    Var y = alloc_node(Op::kSigmoid, len(x), nodes_[x.id].req);
    nodes_[y.id].a = x.id;
    const double* xp = in_ptr(x);
    double* yp = val_ptr(y);
    for (int i = 0; i < nodes_[y.id].len; ++i) yp[i] = kernels::sigmoid(xp[i]);
    return y;
  }

  Var softmax(Var x) {
    const int n = len(x);
    if (n < 1) throw std::invalid_argument("softmax: empty input");
    Var y = alloc_node(Op::kSoftmax, n, nodes_[x.id].req);
    nodes_[y.id].a = x.id;
    kernels::softmax(val_ptr(y), in_ptr(x), n);
    return y;
  }

  Var softmax_rows(Var x, int rows, int n) {
    require_len(x, rows * n, "softmax_rows input");
    Var y = alloc_node(Op::kSoftmaxRows, rows * n, nodes_[x.id].req);
    Node& nd = nodes_[y.id];
    nd.a = x.id;
    nd.iaux_off = push_ints({rows, n});
    nd.iaux_n = 2;
    kernels::softmax_rows(val_ptr(y), in_ptr(x), rows, n);
    return y;
  }

  Var concat_rows(Var a, Var b, int rows, int n1, int n2) {
    require_len(a, rows * n1, "concat_rows lhs");
    require_len(b, rows * n2, "concat_rows rhs");
    Var y = alloc_node(Op::kConcatRows, rows * (n1 + n2), any_req({a, b}));
    Node& nd = nodes_[y.id];
    nd.a = a.id;
    nd.b = b.id;
    nd.iaux_off = push_ints({rows, n1, n2});
    nd.iaux_n = 3;
    const double* ap = in_ptr(a);
    const double* bp = in_ptr(b);
    double* yp = val_ptr(y);
    for (int r = 0; r < rows; ++r) {
      std::copy(ap + static_cast<size_t>(r) * n1, ap + static_cast<size_t>(r + 1) * n1,
                yp + static_cast<size_t>(r) * (n1 + n2));
      std::copy(bp + static_cast<size_t>(r) * n2, bp + static_cast<size_t>(r + 1) * n2,
                yp + static_cast<size_t>(r) * (n1 + n2) + n1);
    }
    return y;
  }

  Var add(Var a, Var b) {
    require_len(b, len(a), "add rhs");
    Var y = alloc_node(Op::kAdd, len(a), any_req({a, b}));
    nodes_[y.id].a = a.id;
    nodes_[y.id].b = b.id;
    const double* ap = in_ptr(a);
    const double* bp = in_ptr(b);
    double* yp = val_ptr(y);
    for (int i = 0; i < nodes_[y.id].len; ++i) yp[i] = ap[i] + bp[i];
    return y;
  }

  Var scale(double alpha, Var a) {
    Var y = alloc_node(Op::kScale, len(a), nodes_[a.id].req);
    Node& nd = nodes_[y.id];
    nd.a = a.id;
    nd.aux_off = push_aux({alpha});
    nd.aux_n = 1;
    const double* ap = in_ptr(a);
    double* yp = val_ptr(y);
    for (int i = 0; i < nd.len; ++i) yp[i] = alpha * ap[i];
    return y;
  }

  Var sum(Var a) {
    Var y = alloc_node(Op::kSum, 1, nodes_[a.id].req);
    nodes_[y.id].a = a.id;
    const double* ap = in_ptr(a);
    double acc = 0.0;
    for (int i = 0; i < len(a); ++i) acc += ap[i];
    *val_ptr(y) = acc;
    return y;
  }

  Var dot(Var a, Var b) {
    require_len(b, len(a), "dot rhs");
    Var y = alloc_node(Op::kDot, 1, any_req({a, b}));
    nodes_[y.id].a = a.id;
    nodes_[y.id].b = b.id;
    *val_ptr(y) = kernels::vdot(in_ptr(a), in_ptr(b), len(a));
    return y;
  }

  Var pack(const std::vector<Var>& parts) {
    if (parts.empty()) throw std::invalid_argument("pack: empty part list");
    int total = 0;
    bool req = false;
    for (Var p : parts) {
      total += len(p);
      req = req || nodes_[p.id].req;
    }
    Var y = alloc_node(Op::kPack, total, req);
    Node& nd = nodes_[y.id];
    nd.ext_off = push_vars(parts);
    nd.ext_n = static_cast<int>(parts.size());
    double* yp = val_ptr(y);
    for (Var p : parts) {
      const double* pp = in_ptr(p);
      yp = std::copy(pp, pp + len(p), yp);
    }
    return y;
  }

  // y = sum_m weights[m] * values[m], all value vectors of one length.
  Var weighted_sum(Var weights, const std::vector<Var>& values) {
    const int m = len(weights);
    if (m != static_cast<int>(values.size()))
      throw std::invalid_argument("weighted_sum: weight/value count mismatch");
    const int c = len(values[0]);
    bool req = nodes_[weights.id].req;
    for (Var v : values) {
      require_len(v, c, "weighted_sum value");
      req = req || nodes_[v.id].req;
    }
    Var y = alloc_node(Op::kWeightedSum, c, req);
    Node& nd = nodes_[y.id];
    nd.a = weights.id;
    nd.ext_off = push_vars(values);
    nd.ext_n = m;
    double* yp = val_ptr(y);
    std::fill(yp, yp + c, 0.0);
    const double* wp = in_ptr(weights);
    for (int i = 0; i < m; ++i) {
      const double* vp = in_ptr(values[i]);
      for (int j = 0; j < c; ++j) yp[j] += wp[i] * vp[j];
    }
    return y;
  }

  Var mean_stack(const std::vector<Var>& xs) {
    if (xs.empty()) throw std::invalid_argument("mean_stack: empty list");
    const int c = len(xs[0]);
    bool req = false;
    for (Var v : xs) {
      require_len(v, c, "mean_stack element");
      req = req || nodes_[v.id].req;
    }
    Var y = alloc_node(Op::kMeanStack, c, req);
    Node& nd = nodes_[y.id];
    nd.ext_off = push_vars(xs);
    nd.ext_n = static_cast<int>(xs.size());
    double* yp = val_ptr(y);
    std::fill(yp, yp + c, 0.0);
    for (Var v : xs) {
      const double* vp = in_ptr(v);
      for (int j = 0; j < c; ++j) yp[j] += vp[j];
    }
    const double inv = 1.0 / static_cast<double>(xs.size());
    for (int j = 0; j < c; ++j) yp[j] *= inv;
    return y;
  }

  // Scaled dot-product attention with one query; saves softmax weights for
  // the backward pass.
  Var attention(Var q, const std::vector<Var>& keys, const std::vector<Var>& values) {
    const int n = static_cast<int>(keys.size());
    if (n == 0) throw std::invalid_argument("attention: no key/value rows");
    if (values.size() != keys.size())
      throw std::invalid_argument("attention: key/value count mismatch");
    const int c = len(q);
    bool req = nodes_[q.id].req;
    for (int i = 0; i < n; ++i) {
      require_len(keys[i], c, "attention key");
      require_len(values[i], c, "attention value");
      req = req || nodes_[keys[i].id].req || nodes_[values[i].id].req;
    }
    Var y = alloc_node(Op::kAttn, c, req);
    Node& nd = nodes_[y.id];
    std::vector<Var> ext;
    ext.reserve(1 + 2 * n);
    ext.push_back(q);
    for (Var k : keys) ext.push_back(k);
    for (Var v : values) ext.push_back(v);
    nd.ext_off = push_vars(ext);
    nd.ext_n = 1 + 2 * n;
    nd.iaux_off = push_ints({n});
    nd.iaux_n = 1;
    nd.aux_off = static_cast<int>(aux_.size());
    nd.aux_n = n;
    aux_.resize(aux_.size() + n);
    // Logits in creation order of the key list; reduction order fixed.
    const double scl = 1.0 / std::sqrt(static_cast<double>(c));
    double* w = aux_.data() + nd.aux_off;
    for (int i = 0; i < n; ++i) w[i] = kernels::vdot(in_ptr(q), in_ptr(keys[i]), c) * scl;
    kernels::softmax(w, w, n);
    double* yp = val_ptr(y);
    std::fill(yp, yp + c, 0.0);
    for (int i = 0; i < n; ++i) {
      const double* vp = in_ptr(values[i]);
      for (int j = 0; j < c; ++j) yp[j] += w[i] * vp[j];
    }
    return y;
  }

  // Trilinear sample of a dense (H, W, D, C) field at (u, v, d); coordinates
  // either fixed (coords.id < 0) or read from a length-3 node.
  Var trilinear(Var field, int H, int W, int D, int C, Var coords, double u = 0.0, double v = 0.0,
                double d = 0.0) {
    require_len(field, H * W * D * C, "trilinear field");
    if (coords.ok()) require_len(coords, 3, "trilinear coords");
    Var y = alloc_node(Op::kTrilinear, C, any_req({field, coords}));
    Node& nd = nodes_[y.id];
    nd.a = field.id;
    nd.b = coords.id;
    nd.iaux_off = push_ints({H, W, D, C});
    nd.iaux_n = 4;
    if (!coords.ok()) {
      nd.aux_off = push_aux({u, v, d});
      nd.aux_n = 3;
    }
    double eu = u, ev = v, ed = d;
    if (coords.ok()) {
      const double* cp = in_ptr(coords);
      eu = cp[0];
      ev = cp[1];
      ed = cp[2];
    }
    if (!std::isfinite(eu) || !std::isfinite(ev) || !std::isfinite(ed))
      throw std::invalid_argument("trilinear: non-finite coordinate");
    const kernels::LiftStencil st = kernels::lift_stencil(eu, ev, ed, W, H, D);
    double* yp = val_ptr(y);
    std::fill(yp, yp + C, 0.0);
    const double* fp = in_ptr(field);
    for (const kernels::LiftCorner& k : st.corner) {
      const double* cell = fp + ((static_cast<size_t>(k.iv) * W + k.iu) * D + k.id) * C;
      for (int c = 0; c < C; ++c) yp[c] += k.s * cell[c];
    }
    return y;
  }

  // Lazy outer-product sample: trilinear over the implied field
  // feat(h,w,:) * depth(h,w,d) at (base + offsets[coord_off..coord_off+3)).
  // offsets.id < 0 means sample exactly at the base coordinate.
  Var lifted_sample(Var feat, Var depth, int h, int w, int D, int C, double base_u, double base_v,
                    double base_d, Var offsets = Var{}, int coord_off = 0) {
    require_len(feat, h * w * C, "lifted_sample features");
    require_len(depth, h * w * D, "lifted_sample depth");
    if (offsets.ok() && len(offsets) < coord_off + 3)
      throw std::invalid_argument("lifted_sample: offset span out of range");
    Var y = alloc_node(Op::kLiftedSample, C, any_req({feat, depth, offsets}));
    Node& nd = nodes_[y.id];
    nd.a = depth.id;
    nd.b = offsets.id;
    nd.c = feat.id;
    nd.iaux_off = push_ints({h, w, D, C, coord_off});
    nd.iaux_n = 5;
    nd.aux_off = push_aux({base_u, base_v, base_d});
    nd.aux_n = 3;
    double u = base_u, v = base_v, d = base_d;
    if (offsets.ok()) {
      const double* op = in_ptr(offsets) + coord_off;
      u += op[0];
      v += op[1];
      d += op[2];
    }
    if (!std::isfinite(u) || !std::isfinite(v) || !std::isfinite(d))
      throw std::invalid_argument("lifted_sample: non-finite coordinate");
    kernels::lifted_sample(val_ptr(y), in_ptr(feat), in_ptr(depth), h, w, D, C, u, v, d);
    return y;
  }

  // Mean binary cross entropy of probabilities against fixed labels,
  // probabilities clamped to [1e-7, 1 - 1e-7].
  Var bce_mean(Var probs, const double* labels, int n) {
    require_len(probs, n, "bce_mean probabilities");
    Var y = alloc_node(Op::kBceMean, 1, nodes_[probs.id].req);
    Node& nd = nodes_[y.id];
    nd.a = probs.id;
    nd.aux_off = static_cast<int>(aux_.size());
    nd.aux_n = n;
    aux_.insert(aux_.end(), labels, labels + n);
    const double* pp = in_ptr(probs);
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double p = std::clamp(pp[i], kProbClamp, 1.0 - kProbClamp);
      acc += -labels[i] * std::log(p) - (1.0 - labels[i]) * std::log(1.0 - p);
    }
    *val_ptr(y) = acc / static_cast<double>(n);
    return y;
  }

  // Mean stable BCE-with-logits over selected rows of a (rows x stride)
  // matrix, reading column 0 of each row; one target per selected row.
  Var center_bce(Var rows_node, int stride, const std::vector<int>& pos_rows,
                 const std::vector<double>& targets) {
    if (pos_rows.empty()) throw std::invalid_argument("center_bce: no positive rows");
    if (pos_rows.size() != targets.size())
      throw std::invalid_argument("center_bce: row/target count mismatch");
    Var y = alloc_node(Op::kCenterBce, 1, nodes_[rows_node.id].req);
    Node& nd = nodes_[y.id];
    nd.a = rows_node.id;
    std::vector<int> ia;
    ia.reserve(2 + pos_rows.size());
    ia.push_back(stride);
    ia.push_back(static_cast<int>(pos_rows.size()));
    ia.insert(ia.end(), pos_rows.begin(), pos_rows.end());
    nd.iaux_off = push_ints(ia);
    nd.iaux_n = static_cast<int>(ia.size());
    nd.aux_off = static_cast<int>(aux_.size());
    nd.aux_n = static_cast<int>(targets.size());
    aux_.insert(aux_.end(), targets.begin(), targets.end());
    const double* rp = in_ptr(rows_node);
    double acc = 0.0;
    for (size_t i = 0; i < pos_rows.size(); ++i)
      acc += kernels::bce_with_logits(rp[static_cast<size_t>(pos_rows[i]) * stride], targets[i]);
    *val_ptr(y) = acc / static_cast<double>(pos_rows.size());
    return y;
  }

  // Mean over positive rows of (1 - axis-aligned IoU of the decoded box vs
  // the target box) plus L1 yaw error. Row layout: col 0 centerness logit,
  // cols 1..6 log face distances (xm, xp, ym, yp, zm, zp), col 7 yaw.
  // aux10 holds 10 doubles per positive row:
  //   voxel center (3), target min corner (3), target max corner (3), yaw.
  Var iou_yaw_loss(Var rows_node, int stride, const std::vector<int>& pos_rows,
                   const std::vector<double>& aux10) {
    if (pos_rows.empty()) throw std::invalid_argument("iou_yaw_loss: no positive rows");
    if (aux10.size() != pos_rows.size() * 10)
      throw std::invalid_argument("iou_yaw_loss: aux size mismatch");
    Var y = alloc_node(Op::kIouYaw, 1, nodes_[rows_node.id].req);
    Node& nd = nodes_[y.id];
    nd.a = rows_node.id;
    std::vector<int> ia;
    ia.reserve(2 + pos_rows.size());
    ia.push_back(stride);
    ia.push_back(static_cast<int>(pos_rows.size()));
    ia.insert(ia.end(), pos_rows.begin(), pos_rows.end());
    nd.iaux_off = push_ints(ia);
    nd.iaux_n = static_cast<int>(ia.size());
    nd.aux_off = static_cast<int>(aux_.size());
    nd.aux_n = static_cast<int>(aux10.size());
    aux_.insert(aux_.end(), aux10.begin(), aux10.end());
    const double* rp = in_ptr(rows_node);
    double acc = 0.0;
    for (size_t i = 0; i < pos_rows.size(); ++i)
      acc += iou_yaw_row(rp + static_cast<size_t>(pos_rows[i]) * stride,
                         aux_.data() + nd.aux_off + 10 * i, nullptr);
    *val_ptr(y) = acc / static_cast<double>(pos_rows.size());
    return y;
  }

  // Focal classification loss over all rows and classes. Class logits sit in
  // columns [cls_col, cls_col + ncls); row_targets[r] is the true class or -1
  // for background. Total = inv_norm * sum of per-logit focal terms.
  Var focal_loss(Var rows_node, int stride, int n_rows, int ncls, int cls_col,
                 const std::vector<int>& row_targets, double gamma, double alpha,
                 double inv_norm) {
    if (static_cast<int>(row_targets.size()) != n_rows)
      throw std::invalid_argument("focal_loss: target count mismatch");
    Var y = alloc_node(Op::kFocal, 1, nodes_[rows_node.id].req);
    Node& nd = nodes_[y.id];
    nd.a = rows_node.id;
    std::vector<int> ia;
    ia.reserve(4 + n_rows);
    ia.push_back(stride);
    ia.push_back(ncls);
    ia.push_back(n_rows);
    ia.push_back(cls_col);
    ia.insert(ia.end(), row_targets.begin(), row_targets.end());
    nd.iaux_off = push_ints(ia);
    nd.iaux_n = static_cast<int>(ia.size());
    nd.aux_off = push_aux({gamma, alpha, inv_norm});
    nd.aux_n = 3;
    const double* rp = in_ptr(rows_node);
    double acc = 0.0;
    for (int r = 0; r < n_rows; ++r) {
      const double* row = rp + static_cast<size_t>(r) * stride + cls_col;
      for (int c = 0; c < ncls; ++c)
        acc += focal_term(row[c], c == row_targets[r], gamma, alpha, nullptr);
    }
    *val_ptr(y) = acc * inv_norm;
    return y;
  }

  // Mean negative log likelihood of picked bins from a (rows x D)
  // probability matrix; used for the optional depth supervision hook.
  Var nll_pick(Var probs, int rows, int D, const std::vector<int>& bins) {
    require_len(probs, rows * D, "nll_pick probabilities");
    if (static_cast<int>(bins.size()) != rows)
      throw std::invalid_argument("nll_pick: bin count mismatch");
    Var y = alloc_node(Op::kNllPick, 1, nodes_[probs.id].req);
    Node& nd = nodes_[y.id];
    nd.a = probs.id;
    std::vector<int> ia;
    ia.reserve(2 + rows);
    ia.push_back(rows);
    ia.push_back(D);
    ia.insert(ia.end(), bins.begin(), bins.end());
    nd.iaux_off = push_ints(ia);
    nd.iaux_n = static_cast<int>(ia.size());
    const double* pp = in_ptr(probs);
    double acc = 0.0;
    for (int r = 0; r < rows; ++r) {
      const double p =
          std::clamp(pp[static_cast<size_t>(r) * D + bins[r]], kProbClamp, 1.0 - kProbClamp);
      acc += -std::log(p);
    }
    *val_ptr(y) = acc / static_cast<double>(rows);
    return y;
  }

  // ---- Backward ----

  void backward(Var loss) {
    if (len(loss) != 1) throw std::invalid_argument("backward: loss must be a scalar");
    if (backward_done_)
      throw std::logic_error("backward: second backward pass without a new forward");
    backward_done_ = true;
    grads_.assign(vals_.size(), 0.0);
    grads_[nodes_[loss.id].off] = 1.0;
    for (int id = loss.id; id >= 0; --id) {
      const Node& n = nodes_[id];
      if (!n.req) continue;
      backward_node(n);
    }
    for (const Link& l : links_) {
      const Node& n = nodes_[l.node];
      for (int i = 0; i < n.len; ++i) l.grad->data[i] += grads_[n.off + i];
    }
  }

 private:
  static constexpr double kProbClamp = 1e-7;

  struct Node {
    Op op;
    bool req;
    int a = -1, b = -1, c = -1;
    int off = 0, len = 0;
    int ext_off = 0, ext_n = 0;
    int iaux_off = 0, iaux_n = 0;
    int aux_off = 0, aux_n = 0;
  };

  struct Link {
    int node;
    Tensor* grad;
  };

  int check(Var v) const {
    if (v.id < 0 || v.id >= static_cast<int>(nodes_.size()))
      throw std::invalid_argument("Tape: invalid Var");
    return v.id;
  }

  void require_len(Var v, int n, const char* what) {
    if (len(v) != n)
      throw std::invalid_argument(std::string("Tape: ") + what + " has length " +
                                  std::to_string(len(v)) + ", expected " + std::to_string(n));
  }

  bool any_req(std::initializer_list<Var> vs) const {
    for (Var v : vs)
      if (v.ok() && nodes_[v.id].req) return true;
    return false;
  }

  Var alloc_node(Op op, int n, bool req) {
    backward_done_ = false;
    Node nd;
    nd.op = op;
    nd.req = req;
    nd.off = static_cast<int>(vals_.size());
    nd.len = n;
    vals_.resize(vals_.size() + n);
    nodes_.push_back(nd);
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  Var leaf(Op op, const double* p, int n, bool req) {
    Var v = alloc_node(op, n, req);
    std::copy(p, p + n, val_ptr(v));
    return v;
  }

  double* val_ptr(Var v) { return vals_.data() + nodes_[v.id].off; }
  const double* in_ptr(Var v) const { return vals_.data() + nodes_[v.id].off; }

  int push_ints(const std::vector<int>& xs) {
    const int off = static_cast<int>(ints_.size());
    ints_.insert(ints_.end(), xs.begin(), xs.end());
    return off;
  }
  int push_vars(const std::vector<Var>& xs) {
    const int off = static_cast<int>(ints_.size());
    for (Var v : xs) ints_.push_back(check(v));
    return off;
  }
  int push_aux(std::initializer_list<double> xs) {
    const int off = static_cast<int>(aux_.size());
    aux_.insert(aux_.end(), xs.begin(), xs.end());
    return off;
  }

  double* gptr(int node_id) { return grads_.data() + nodes_[node_id].off; }
  bool req(int node_id) const { return node_id >= 0 && nodes_[node_id].req; }

 public:
  // Shared value+gradient evaluation for one positive row of the box loss.
  // Returns the row's loss; when gz is non-null, accumulates d(row loss)/dz
  // into gz[0..8) (not yet divided by the row count).
  static double iou_yaw_row(const double* z, const double* aux, double* gz) {
    const double* vc = aux;
    const double* tmin = aux + 3;
    const double* tmax = aux + 6;
    const double tyaw = aux[9];
    double pmin[3], pmax[3], inter[3];
    for (int i = 0; i < 3; ++i) {
      pmin[i] = vc[i] - std::exp(z[1 + 2 * i]);
      pmax[i] = vc[i] + std::exp(z[2 + 2 * i]);
      inter[i] = std::min(pmax[i], tmax[i]) - std::max(pmin[i], tmin[i]);
    }
    const double vol_p = (pmax[0] - pmin[0]) * (pmax[1] - pmin[1]) * (pmax[2] - pmin[2]);
    const double vol_t = (tmax[0] - tmin[0]) * (tmax[1] - tmin[1]) * (tmax[2] - tmin[2]);
    const bool overlap = inter[0] > 0.0 && inter[1] > 0.0 && inter[2] > 0.0;
    const double vol_i = overlap ? inter[0] * inter[1] * inter[2] : 0.0;
    const double uni = vol_p + vol_t - vol_i;
    const double iou = vol_i / uni;
    const double loss = (1.0 - iou) + std::abs(z[7] - tyaw);
    if (!gz) return loss;

    // d(1-iou)/dI = -(U+I)/U^2 (since dU/dI = -1); d(1-iou)/dVp = I/U^2.
    const double dl_dI = -(uni + vol_i) / (uni * uni);
    const double dl_dVp = vol_i / (uni * uni);
    for (int i = 0; i < 3; ++i) {
      const int j = (i + 1) % 3, k = (i + 2) % 3;
      const double dVp_dext = (pmax[j] - pmin[j]) * (pmax[k] - pmin[k]);
      const double dI_dext = overlap ? inter[j] * inter[k] : 0.0;
      // Subgradients at min/max kinks: the target face wins ties.
      const double dmax_gate = pmax[i] < tmax[i] ? 1.0 : 0.0;
      const double dmin_gate = pmin[i] > tmin[i] ? 1.0 : 0.0;
      const double dl_dpmax = dl_dI * dI_dext * dmax_gate + dl_dVp * dVp_dext;
      const double dl_dpmin = dl_dI * dI_dext * (-dmin_gate) + dl_dVp * (-dVp_dext);
      gz[1 + 2 * i] += dl_dpmin * (pmin[i] - vc[i]);  // d pmin / dz = -exp(z)
      gz[2 + 2 * i] += dl_dpmax * (pmax[i] - vc[i]);  // d pmax / dz = +exp(z)
    }
    const double dyaw = z[7] - tyaw;
    gz[7] += dyaw > 0.0 ? 1.0 : (dyaw < 0.0 ? -1.0 : 0.0);
    return loss;
  }

  // Focal term for one logit; when gz is non-null adds d(term)/dz to *gz.
  static double focal_term(double z, bool positive, double gamma, double alpha, double* gz) {
    const double p = kernels::sigmoid(z);
    const double pt = positive ? p : 1.0 - p;
    const double ptc = std::clamp(pt, kProbClamp, 1.0 - kProbClamp);
    const double one_m = 1.0 - pt;
    const double value = -alpha * std::pow(one_m, gamma) * std::log(ptc);
    if (gz) {
      const double s = positive ? 1.0 : -1.0;
      const double dz = s * alpha *
                        (gamma * std::pow(one_m, gamma) * pt * std::log(ptc) -
                         std::pow(one_m, gamma + 1.0));
      *gz += dz;
    }
    return value;
  }

 private:
  void backward_node(const Node& n) {
    const double* g = grads_.data() + n.off;
    switch (n.op) {
      case Op::kConst:
      case Op::kInput:
      case Op::kParam:
        break;
      case Op::kLinear: {
        const int out_n = ints_[n.iaux_off], in_n = ints_[n.iaux_off + 1];
        const double* W = in_ptr(Var{n.a});
        const double* x = in_ptr(Var{n.b});
        if (req(n.a)) {
          double* gW = gptr(n.a);
          for (int o = 0; o < out_n; ++o)
            for (int i = 0; i < in_n; ++i) gW[static_cast<size_t>(o) * in_n + i] += g[o] * x[i];
        }
        if (req(n.b)) {
          double* gx = gptr(n.b);
          for (int o = 0; o < out_n; ++o) {
            const double* wr = W + static_cast<size_t>(o) * in_n;
            for (int i = 0; i < in_n; ++i) gx[i] += wr[i] * g[o];
          }
        }
        if (n.c >= 0 && req(n.c)) {
          double* gb = gptr(n.c);
          for (int o = 0; o < out_n; ++o) gb[o] += g[o];
        }
        break;
      }
      case Op::kLinearRows: {
        const int rows = ints_[n.iaux_off], out_n = ints_[n.iaux_off + 1],
                  in_n = ints_[n.iaux_off + 2];
        const double* W = in_ptr(Var{n.a});
        const double* X = in_ptr(Var{n.b});
        for (int r = 0; r < rows; ++r) {
          const double* gr = g + static_cast<size_t>(r) * out_n;
          const double* xr = X + static_cast<size_t>(r) * in_n;
          if (req(n.a)) {
            double* gW = gptr(n.a);
            for (int o = 0; o < out_n; ++o)
              for (int i = 0; i < in_n; ++i)
                gW[static_cast<size_t>(o) * in_n + i] += gr[o] * xr[i];
          }
          if (req(n.b)) {
            double* gx = gptr(n.b) + static_cast<size_t>(r) * in_n;
            for (int o = 0; o < out_n; ++o) {
              const double* wr = W + static_cast<size_t>(o) * in_n;
              for (int i = 0; i < in_n; ++i) gx[i] += wr[i] * gr[o];
            }
          }
          if (n.c >= 0 && req(n.c)) {
            double* gb = gptr(n.c);
            for (int o = 0; o < out_n; ++o) gb[o] += gr[o];
          }
        }
        break;
      }
      case Op::kTanh: {
        if (!req(n.a)) break;
        const double* y = vals_.data() + n.off;
        double* gx = gptr(n.a);
        for (int i = 0; i < n.len; ++i) gx[i] += g[i] * (1.0 - y[i] * y[i]);
        break;
      }
      case Op::kSigmoid: {
        if (!req(n.a)) break;
        const double* y = vals_.data() + n.off;
        double* gx = gptr(n.a);
        for (int i = 0; i < n.len; ++i) gx[i] += g[i] * y[i] * (1.0 - y[i]);
        break;
      }
      case Op::kSoftmax: {
        if (!req(n.a)) break;
        const double* y = vals_.data() + n.off;
        double* gx = gptr(n.a);
        double dot = 0.0;
        for (int i = 0; i < n.len; ++i) dot += g[i] * y[i];
        for (int i = 0; i < n.len; ++i) gx[i] += y[i] * (g[i] - dot);
        break;
      }
      case Op::kSoftmaxRows: {
        if (!req(n.a)) break;
        const int rows = ints_[n.iaux_off], cols = ints_[n.iaux_off + 1];
        const double* y = vals_.data() + n.off;
        double* gx = gptr(n.a);
        for (int r = 0; r < rows; ++r) {
          const double* yr = y + static_cast<size_t>(r) * cols;
          const double* gr = g + static_cast<size_t>(r) * cols;
          double* gxr = gx + static_cast<size_t>(r) * cols;
          double dot = 0.0;
          for (int i = 0; i < cols; ++i) dot += gr[i] * yr[i];
          for (int i = 0; i < cols; ++i) gxr[i] += yr[i] * (gr[i] - dot);
        }
        break;
      }
      case Op::kConcatRows: {
        const int rows = ints_[n.iaux_off], n1 = ints_[n.iaux_off + 1], n2 = ints_[n.iaux_off + 2];
        for (int r = 0; r < rows; ++r) {
          const double* gr = g + static_cast<size_t>(r) * (n1 + n2);
          if (req(n.a)) {
            double* ga = gptr(n.a) + static_cast<size_t>(r) * n1;
            for (int i = 0; i < n1; ++i) ga[i] += gr[i];
          }
          if (req(n.b)) {
            double* gb = gptr(n.b) + static_cast<size_t>(r) * n2;
            for (int i = 0; i < n2; ++i) gb[i] += gr[n1 + i];
          }
        }
        break;
      }
      case Op::kAdd: {
        if (req(n.a)) {
          double* ga = gptr(n.a);
          for (int i = 0; i < n.len; ++i) ga[i] += g[i];
        }
        if (req(n.b)) {
          double* gb = gptr(n.b);
          for (int i = 0; i < n.len; ++i) gb[i] += g[i];
        }
        break;
      }
      case Op::kScale: {
        if (!req(n.a)) break;
        const double alpha = aux_[n.aux_off];
        double* ga = gptr(n.a);
        for (int i = 0; i < n.len; ++i) ga[i] += alpha * g[i];
        break;
      }
      case Op::kSum: {
        if (!req(n.a)) break;
        double* ga = gptr(n.a);
        const int m = nodes_[n.a].len;
        for (int i = 0; i < m; ++i) ga[i] += g[0];
        break;
      }
      case Op::kDot: {
        const double* a = in_ptr(Var{n.a});
        const double* b = in_ptr(Var{n.b});
        const int m = nodes_[n.a].len;
        if (req(n.a)) {
          double* ga = gptr(n.a);
          for (int i = 0; i < m; ++i) ga[i] += g[0] * b[i];
        }
        if (req(n.b)) {
          double* gb = gptr(n.b);
          for (int i = 0; i < m; ++i) gb[i] += g[0] * a[i];
        }
        break;
      }
      case Op::kPack: {
        int pos = 0;
        for (int e = 0; e < n.ext_n; ++e) {
          const int child = ints_[n.ext_off + e];
          const int m = nodes_[child].len;
          if (req(child)) {
            double* gc = gptr(child);
            for (int i = 0; i < m; ++i) gc[i] += g[pos + i];
          }
          pos += m;
        }
        break;
      }
      case Op::kWeightedSum: {
        const double* w = in_ptr(Var{n.a});
        const bool wreq = req(n.a);
        double* gw = wreq ? gptr(n.a) : nullptr;
        for (int m = 0; m < n.ext_n; ++m) {
          const int child = ints_[n.ext_off + m];
          const double* xv = in_ptr(Var{child});
          if (wreq) {
            double acc = 0.0;
            for (int i = 0; i < n.len; ++i) acc += g[i] * xv[i];
            gw[m] += acc;
          }
          if (req(child)) {
            double* gx = gptr(child);
            for (int i = 0; i < n.len; ++i) gx[i] += w[m] * g[i];
          }
        }
        break;
      }
      case Op::kMeanStack: {
        const double inv = 1.0 / static_cast<double>(n.ext_n);
        for (int e = 0; e < n.ext_n; ++e) {
          const int child = ints_[n.ext_off + e];
          if (!req(child)) continue;
          double* gx = gptr(child);
          for (int i = 0; i < n.len; ++i) gx[i] += inv * g[i];
        }
        break;
      }
      case Op::kAttn: {
        const int nk = ints_[n.iaux_off];
        const int c = n.len;
        const int qid = ints_[n.ext_off];
        const double scl = 1.0 / std::sqrt(static_cast<double>(c));
        const double* a = aux_.data() + n.aux_off;
        const double* q = in_ptr(Var{qid});
        // s_i = g . v_i ; dlogit_i = a_i (s_i - sum_j a_j s_j).
        std::vector<double> s(nk);
        double sbar = 0.0;
        for (int i = 0; i < nk; ++i) {
          const int vid = ints_[n.ext_off + 1 + nk + i];
          s[i] = kernels::vdot(g, in_ptr(Var{vid}), c);
          sbar += a[i] * s[i];
        }
        for (int i = 0; i < nk; ++i) {
          const int kid = ints_[n.ext_off + 1 + i];
          const int vid = ints_[n.ext_off + 1 + nk + i];
          const double dlogit = a[i] * (s[i] - sbar);
          if (req(qid)) {
            double* gq = gptr(qid);
            const double* k = in_ptr(Var{kid});
            for (int j = 0; j < c; ++j) gq[j] += dlogit * scl * k[j];
          }
          if (req(kid)) {
            double* gk = gptr(kid);
            for (int j = 0; j < c; ++j) gk[j] += dlogit * scl * q[j];
          }
          if (req(vid)) {
            double* gv = gptr(vid);
            for (int j = 0; j < c; ++j) gv[j] += a[i] * g[j];
          }
        }
        break;
      }
      case Op::kTrilinear: {
        const int H = ints_[n.iaux_off], W = ints_[n.iaux_off + 1], D = ints_[n.iaux_off + 2],
                  C = ints_[n.iaux_off + 3];
        double u, v, d;
        if (n.b >= 0) {
          const double* cp = in_ptr(Var{n.b});
          u = cp[0];
          v = cp[1];
          d = cp[2];
        } else {
          u = aux_[n.aux_off];
          v = aux_[n.aux_off + 1];
          d = aux_[n.aux_off + 2];
        }
        const kernels::LiftStencil st = kernels::lift_stencil(u, v, d, W, H, D);
        const double* f = in_ptr(Var{n.a});
        double du = 0.0, dv = 0.0, dd = 0.0;
        const bool want_coord = n.b >= 0 && req(n.b);
        for (const kernels::LiftCorner& k : st.corner) {
          const size_t cell = ((static_cast<size_t>(k.iv) * W + k.iu) * D + k.id) * C;
          if (req(n.a)) {
            double* gf = gptr(n.a);
            for (int c = 0; c < C; ++c) gf[cell + c] += k.s * g[c];
          }
          if (want_coord) {
            double gdotf = 0.0;
            for (int c = 0; c < C; ++c) gdotf += g[c] * f[cell + c];
            du += k.du_sign * gdotf;
            dv += k.dv_sign * gdotf;
            dd += k.dd_sign * gdotf;
          }
        }
        if (want_coord) {
          double* gc = gptr(n.b);
          if (!st.bu.clamped) gc[0] += du;
          if (!st.bv.clamped) gc[1] += dv;
          if (!st.bd.clamped) gc[2] += dd;
        }
        break;
      }
      case Op::kLiftedSample: {
        const int h = ints_[n.iaux_off], w = ints_[n.iaux_off + 1], D = ints_[n.iaux_off + 2],
                  C = ints_[n.iaux_off + 3], coord_off = ints_[n.iaux_off + 4];
        double u = aux_[n.aux_off], v = aux_[n.aux_off + 1], d = aux_[n.aux_off + 2];
        if (n.b >= 0) {
          const double* op = in_ptr(Var{n.b}) + coord_off;
          u += op[0];
          v += op[1];
          d += op[2];
        }
        const kernels::LiftStencil st = kernels::lift_stencil(u, v, d, w, h, D);
        const double* feat = in_ptr(Var{n.c});
        const double* depth = in_ptr(Var{n.a});
        const bool want_coord = n.b >= 0 && req(n.b);
        double du = 0.0, dv = 0.0, dd = 0.0;
        for (const kernels::LiftCorner& k : st.corner) {
          const size_t sp = static_cast<size_t>(k.iv) * w + k.iu;
          const double rho = depth[sp * D + k.id];
          const double* fc = feat + sp * C;
          double gdotf = 0.0;
          for (int c = 0; c < C; ++c) gdotf += g[c] * fc[c];
          if (req(n.a)) gptr(n.a)[sp * D + k.id] += k.s * gdotf;
          if (req(n.c)) {
            double* gf = gptr(n.c) + sp * C;
            const double sw = k.s * rho;
            for (int c = 0; c < C; ++c) gf[c] += sw * g[c];
          }
          if (want_coord) {
            du += k.du_sign * rho * gdotf;
            dv += k.dv_sign * rho * gdotf;
            dd += k.dd_sign * rho * gdotf;
          }
        }
        if (want_coord) {
          double* gc = gptr(n.b) + coord_off;
          if (!st.bu.clamped) gc[0] += du;
          if (!st.bv.clamped) gc[1] += dv;
          if (!st.bd.clamped) gc[2] += dd;
        }
        break;
      }
      case Op::kBceMean: {
        if (!req(n.a)) break;
        const int m = n.aux_n;
        const double* p = in_ptr(Var{n.a});
        const double* t = aux_.data() + n.aux_off;
        double* gp = gptr(n.a);
        const double inv = g[0] / static_cast<double>(m);
        for (int i = 0; i < m; ++i) {
          if (p[i] < kProbClamp || p[i] > 1.0 - kProbClamp) continue;
          gp[i] += inv * (-t[i] / p[i] + (1.0 - t[i]) / (1.0 - p[i]));
        }
        break;
      }
      case Op::kCenterBce: {
        if (!req(n.a)) break;
        const int stride = ints_[n.iaux_off];
        const int npos = ints_[n.iaux_off + 1];
        const double inv = g[0] / static_cast<double>(npos);
        const double* rp = in_ptr(Var{n.a});
        double* gr = gptr(n.a);
        for (int i = 0; i < npos; ++i) {
          const int row = ints_[n.iaux_off + 2 + i];
          const double z = rp[static_cast<size_t>(row) * stride];
          const double t = aux_[n.aux_off + i];
          gr[static_cast<size_t>(row) * stride] += inv * (kernels::sigmoid(z) - t);
        }
        break;
      }
      case Op::kIouYaw: {
        if (!req(n.a)) break;
        const int stride = ints_[n.iaux_off];
        const int npos = ints_[n.iaux_off + 1];
        const double inv = g[0] / static_cast<double>(npos);
        const double* rp = in_ptr(Var{n.a});
        double* gr = gptr(n.a);
        for (int i = 0; i < npos; ++i) {
          const int row = ints_[n.iaux_off + 2 + i];
          double gz[8] = {0, 0, 0, 0, 0, 0, 0, 0};
          iou_yaw_row(rp + static_cast<size_t>(row) * stride, aux_.data() + n.aux_off + 10 * i,
                      gz);
          for (int j = 1; j < 8; ++j) gr[static_cast<size_t>(row) * stride + j] += inv * gz[j];
        }
        break;
      }
      case Op::kFocal: {
        if (!req(n.a)) break;
        const int stride = ints_[n.iaux_off];
        const int ncls = ints_[n.iaux_off + 1];
        const int n_rows = ints_[n.iaux_off + 2];
        const int cls_col = ints_[n.iaux_off + 3];
        const double gamma = aux_[n.aux_off];
        const double alpha = aux_[n.aux_off + 1];
        const double inv = g[0] * aux_[n.aux_off + 2];
        const double* rp = in_ptr(Var{n.a});
        double* gr = gptr(n.a);
        for (int r = 0; r < n_rows; ++r) {
          const int tgt = ints_[n.iaux_off + 4 + r];
          const size_t base = static_cast<size_t>(r) * stride + cls_col;
          for (int c = 0; c < ncls; ++c) {
            double dz = 0.0;
            focal_term(rp[base + c], c == tgt, gamma, alpha, &dz);
            gr[base + c] += inv * dz;
          }
        }
        break;
      }
      case Op::kNllPick: {
        if (!req(n.a)) break;
        const int rows = ints_[n.iaux_off];
        const int D = ints_[n.iaux_off + 1];
        const double inv = g[0] / static_cast<double>(rows);
        const double* pp = in_ptr(Var{n.a});
        double* gp = gptr(n.a);
        for (int r = 0; r < rows; ++r) {
          const int bin = ints_[n.iaux_off + 2 + r];
          const double p = pp[static_cast<size_t>(r) * D + bin];
          if (p < kProbClamp || p > 1.0 - kProbClamp) continue;
          gp[static_cast<size_t>(r) * D + bin] += inv * (-1.0 / p);
        }
        break;
      }
    }
  }

  std::vector<Node> nodes_;
  std::vector<double> vals_;
  std::vector<double> grads_;
  std::vector<int> ints_;
  std::vector<double> aux_;
  std::vector<Link> links_;
  std::unordered_map<std::string, Var> param_vars_;
  bool backward_done_ = false;
};

}  // namespace sgcdet
