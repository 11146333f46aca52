#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

// Plain array kernels shared by the differentiable graph and the tape-free
// inference path. Both call exactly these routines, so forward values agree
// bit for bit between training and inference.

namespace sgcdet::kernels {

// y[o] = sum_i W[o*in_n + i] * x[i] + b[o]. b may be null.
inline void linear(double* y, const double* W, const double* b, const double* x, int out_n,
                   int in_n) {
  for (int o = 0; o < out_n; ++o) {
    double acc = b ? b[o] : 0.0;
    const double* wr = W + static_cast<size_t>(o) * in_n;
    for (int i = 0; i < in_n; ++i) acc += wr[i] * x[i];
    y[o] = acc;
  }
}

// Row-wise linear: Y[r] = W * X[r] + b for each of `rows` rows.
inline void linear_rows(double* Y, const double* W, const double* b, const double* X, int rows,
                        int out_n, int in_n) {
  for (int r = 0; r < rows; ++r)
    linear(Y + static_cast<size_t>(r) * out_n, W, b, X + static_cast<size_t>(r) * in_n, out_n,
           in_n);
}

inline void softmax(double* y, const double* x, int n) {
  double mx = x[0];
  for (int i = 1; i < n; ++i) mx = std::max(mx, x[i]);
  double sum = 0.0;
  for (int i = 0; i < n; ++i) {
    y[i] = std::exp(x[i] - mx);
    sum += y[i];
  }
  const double inv = 1.0 / sum;
  for (int i = 0; i < n; ++i) y[i] *= inv;
}

inline void softmax_rows(double* Y, const double* X, int rows, int n) {
  for (int r = 0; r < rows; ++r)
    softmax(Y + static_cast<size_t>(r) * n, X + static_cast<size_t>(r) * n, n);
}

inline double vdot(const double* a, const double* b, int n) {
  double acc = 0.0;
  for (int i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

// Scaled dot-product attention with a single query. keys/values are n_kv
// rows of width C. Writes the softmax weights to `weights` (size n_kv) so a
// backward pass can reuse them.
inline void attention(double* out, double* weights, const double* q, const double* keys,
                      const double* values, int n_kv, int C) {
  const double scale = 1.0 / std::sqrt(static_cast<double>(C));
  for (int i = 0; i < n_kv; ++i)
    weights[i] = vdot(q, keys + static_cast<size_t>(i) * C, C) * scale;
  softmax(weights, weights, n_kv);
  std::fill(out, out + C, 0.0);
  for (int i = 0; i < n_kv; ++i) {
    const double* v = values + static_cast<size_t>(i) * C;
    for (int c = 0; c < C; ++c) out[c] += weights[i] * v[c];
  }
}

// Interpolation basis along one axis: clamps coord into [0, ext-1], then
// yields the lower corner index i0 and fraction f so the sample is
// (1-f)*grid[i0] + f*grid[i0+1] (i0+1 capped to ext-1 via f=1 handling).
// `clamped` reports whether the raw coordinate was outside the grid, in which
// case the derivative with respect to the coordinate is zero.
struct AxisBasis {
  int i0;
  int i1;
  double f;
  bool clamped;
};

inline AxisBasis axis_basis(double coord, int ext) {
  AxisBasis b;
  b.clamped = coord < 0.0 || coord > static_cast<double>(ext - 1);
  double c = std::clamp(coord, 0.0, static_cast<double>(ext - 1));
  if (ext == 1) {
    b.i0 = 0;
    b.i1 = 0;
    b.f = 0.0;
    return b;
  }
  int i0 = static_cast<int>(std::floor(c));
  if (i0 > ext - 2) i0 = ext - 2;
  b.i0 = i0;
  b.i1 = i0 + 1;
  b.f = c - static_cast<double>(i0);
  return b;
}

// One corner of a trilinear stencil over (u, v, d): spatial cell (iv, iu),
// depth bin id, blend weight s = wu*wv*wd, and the per-axis weight
// derivatives needed for coordinate gradients.
struct LiftCorner {
  int iu, iv, id;
  double s;
  double du_sign, dv_sign, dd_sign;  // d s / d f_axis divided by the other two weights' product
};

struct LiftStencil {
  LiftCorner corner[8];
  AxisBasis bu, bv, bd;
};

inline LiftStencil lift_stencil(double u, double v, double d, int w, int h, int D) {
  LiftStencil st;
  st.bu = axis_basis(u, w);
  st.bv = axis_basis(v, h);
  st.bd = axis_basis(d, D);
  const double wu[2] = {1.0 - st.bu.f, st.bu.f};
  const double wv[2] = {1.0 - st.bv.f, st.bv.f};
  const double wd[2] = {1.0 - st.bd.f, st.bd.f};
  const int iu[2] = {st.bu.i0, st.bu.i1};
  const int iv[2] = {st.bv.i0, st.bv.i1};
  const int id[2] = {st.bd.i0, st.bd.i1};
  int c = 0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b)
      for (int e = 0; e < 2; ++e) {
        LiftCorner& k = st.corner[c++];
        k.iu = iu[a];
        k.iv = iv[b];
        k.id = id[e];
        k.s = wu[a] * wv[b] * wd[e];
        k.du_sign = (a ? 1.0 : -1.0) * wv[b] * wd[e];
        k.dv_sign = (b ? 1.0 : -1.0) * wu[a] * wd[e];
        k.dd_sign = (e ? 1.0 : -1.0) * wu[a] * wv[b];
      }
  return st;
}

// Samples the implicit volume F3D[v,u,d,:] = feat[v,u,:] * depth[v,u,d] at a
// fractional (u, v, d) without materializing it:
//   out[c] = sum over 8 stencil corners of s * depth[iv,iu,id] * feat[iv,iu,c].
// feat is (h, w, C) and depth is (h, w, D), both row-major.
inline void lifted_sample(double* out, const double* feat, const double* depth, int h, int w,
                          int D, int C, double u, double v, double d) {
  const LiftStencil st = lift_stencil(u, v, d, w, h, D);
  std::fill(out, out + C, 0.0);
  for (const LiftCorner& k : st.corner) {
    const double rho = depth[(static_cast<size_t>(k.iv) * w + k.iu) * D + k.id];
    const double sw = k.s * rho;
    const double* f = feat + (static_cast<size_t>(k.iv) * w + k.iu) * C;
    for (int c = 0; c < C; ++c) out[c] += sw * f[c];
  }
}

// Bilinear sample of a (h, w, C) map with zero padding outside the grid;
// corners falling off the map contribute nothing.
inline void bilinear_sample(double* out, const double* feat, int h, int w, int C, double u,
                            double v) {
  std::fill(out, out + C, 0.0);
  const int u0 = static_cast<int>(std::floor(u));
  const int v0 = static_cast<int>(std::floor(v));
  const double fu = u - u0;
  const double fv = v - v0;
  for (int a = 0; a < 2; ++a)
    for (int b = 0; b < 2; ++b) {
      const int uu = u0 + a;
      const int vv = v0 + b;
      if (uu < 0 || uu >= w || vv < 0 || vv >= h) continue;
      const double wgt = (a ? fu : 1.0 - fu) * (b ? fv : 1.0 - fv);
      if (wgt == 0.0) continue;
      const double* f = feat + (static_cast<size_t>(vv) * w + uu) * C;
      for (int c = 0; c < C; ++c) out[c] += wgt * f[c];
    }
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Numerically stable binary cross entropy on a logit:
//   max(z,0) - z*t + log(1 + exp(-|z|)).
inline double bce_with_logits(double z, double t) {
  return std::max(z, 0.0) - z * t + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace sgcdet::kernels
