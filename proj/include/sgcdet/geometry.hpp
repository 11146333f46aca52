#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

namespace sgcdet {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  double operator[](int i) const { return i == 0 ? x : (i == 1 ? y : z); }
  double& operator[](int i) { return i == 0 ? x : (i == 1 ? y : z); }
};

inline double dot(const Vec3& a, const Vec3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a.y * b.z - a.z * b.y, a.z * b.x - a.x * b.z, a.x * b.y - a.y * b.x};
}
inline double norm(const Vec3& a) { return std::sqrt(dot(a, a)); }
inline Vec3 normalized(const Vec3& a) {
  const double n = norm(a);
  if (n < 1e-12) throw std::invalid_argument("normalized: zero-length vector");
  return a * (1.0 / n);
}

// Row-major 3x3 matrix.
struct Mat3 {
  double m[9] = {1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  static Mat3 from_rows(const Vec3& r0, const Vec3& r1, const Vec3& r2) {
    Mat3 out;
    out.m[0] = r0.x;
    out.m[1] = r0.y;
    out.m[2] = r0.z;
    out.m[3] = r1.x;
    out.m[4] = r1.y;
    out.m[5] = r1.z;
    out.m[6] = r2.x;
    out.m[7] = r2.y;
    out.m[8] = r2.z;
    return out;
  }
  // Rotation by yaw about the vertical (z) axis.
  static Mat3 rot_z(double yaw) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    Mat3 out;
    out.m[0] = c;
    out.m[1] = -s;
    out.m[3] = s;
    out.m[4] = c;
    return out;
  }

  Vec3 mul(const Vec3& v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }
  Mat3 transposed() const {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) out.m[r * 3 + c] = m[c * 3 + r];
    return out;
  }
  Mat3 mul(const Mat3& o) const {
    Mat3 out;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) {
        double acc = 0.0;
        for (int k = 0; k < 3; ++k) acc += m[r * 3 + k] * o.m[k * 3 + c];
        out.m[r * 3 + c] = acc;
      }
    return out;
  }
  double det() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }
};

struct Intrinsics {
  double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
};

// World-to-camera transform: q = R p + t. Camera frame is x-right, y-down,
// z-forward; the world is z-up.
struct Extrinsics {
  Mat3 R;
  Vec3 t;
};

inline void validate_extrinsics(const Extrinsics& e, double tol = 1e-9) {
  const Mat3 rtr = e.R.transposed().mul(e.R);
  const Mat3 id = Mat3::identity();
  for (int i = 0; i < 9; ++i)
    if (std::abs(rtr.m[i] - id.m[i]) > tol)
      throw std::invalid_argument("Extrinsics: rotation is not orthonormal");
  if (std::abs(e.R.det() - 1.0) > tol)
    throw std::invalid_argument("Extrinsics: rotation determinant is not 1");
}

inline Vec3 camera_center(const Extrinsics& e) { return e.R.transposed().mul(e.t * -1.0); }

// Extrinsics for a camera at `pos` looking at `target`, world up = +z.
inline Extrinsics look_at(const Vec3& pos, const Vec3& target) {
  const Vec3 fwd = normalized(target - pos);
  const Vec3 up{0.0, 0.0, 1.0};
  const Vec3 side = cross(fwd, up);
  if (norm(side) < 1e-9) throw std::invalid_argument("look_at: view direction is vertical");
  const Vec3 right = normalized(side);
  const Vec3 down = cross(fwd, right);
  Extrinsics e;
  e.R = Mat3::from_rows(right, down, fwd);
  e.t = e.R.mul(pos) * -1.0;
  return e;
}

struct CameraView {
  Intrinsics intr;  // image-scale intrinsics
  Extrinsics ext;
  int image_h = 0, image_w = 0;
  int feat_h = 0, feat_w = 0;

  int stride() const {
    if (feat_h <= 0 || feat_w <= 0 || image_h % feat_h != 0 || image_w % feat_w != 0)
      throw std::invalid_argument("CameraView: feature size must divide image size");
    const int sh = image_h / feat_h;
    const int sw = image_w / feat_w;
    if (sh != sw) throw std::invalid_argument("CameraView: stride differs between axes");
    return sh;
  }

  // Intrinsics rescaled to feature-map pixel units. Feature pixel (0,0) is
  // centered on the mean of its stride x stride image pixels, which gives the
  // half-pixel correction below.
  Intrinsics feature_intrinsics() const {
    const double s = static_cast<double>(stride());
    Intrinsics f;
    f.fx = intr.fx / s;
    f.fy = intr.fy / s;
    f.cx = (intr.cx + 0.5) / s - 0.5;
    f.cy = (intr.cy + 0.5) / s - 0.5;
    return f;
  }
};

inline void validate_view(const CameraView& view) {
  if (view.intr.fx <= 0.0 || view.intr.fy <= 0.0)
    throw std::invalid_argument("CameraView: focal lengths must be positive");
  (void)view.stride();
  validate_extrinsics(view.ext);
}

// One camera's (u, v, depth) frame: continuous feature-map pixel coordinates
// plus metric camera-space depth.
struct PixelSpacePoint {
  double u = 0.0, v = 0.0, d = 0.0;
  bool valid = false;
};

inline PixelSpacePoint project_point(const Vec3& p, const CameraView& view) {
  const Vec3 q = view.ext.R.mul(p) + view.ext.t;
  PixelSpacePoint out;
  if (q.z <= 1e-9) return out;
  const Intrinsics f = view.feature_intrinsics();
  out.u = f.fx * q.x / q.z + f.cx;
  out.v = f.fy * q.y / q.z + f.cy;
  out.d = q.z;
  out.valid = true;
  return out;
}

// Inverse of project_point: feature pixel (u, v) at camera depth d back to a
// world point.
inline Vec3 unproject_point(const CameraView& view, double u, double v, double d) {
  const Intrinsics f = view.feature_intrinsics();
  const Vec3 q{(u - f.cx) / f.fx * d, (v - f.cy) / f.fy * d, d};
  return view.ext.R.transposed().mul(q - view.ext.t);
}

inline bool in_view(const PixelSpacePoint& pp, const CameraView& view, double d_min,
                    double d_max) {
  return pp.valid && pp.u >= 0.0 && pp.u <= static_cast<double>(view.feat_w - 1) &&
         pp.v >= 0.0 && pp.v <= static_cast<double>(view.feat_h - 1) && pp.d >= d_min &&
         pp.d <= d_max;
}

struct VoxelGridSpec {
  Vec3 origin;       // world position of the minimum corner
  int dims[3] = {0, 0, 0};
  Vec3 voxel_size;

  std::int64_t count() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
};

inline void validate_grid(const VoxelGridSpec& g) {
  if (g.dims[0] <= 0 || g.dims[1] <= 0 || g.dims[2] <= 0)
    throw std::invalid_argument("VoxelGridSpec: dims must be positive");
  if (g.voxel_size.x <= 0.0 || g.voxel_size.y <= 0.0 || g.voxel_size.z <= 0.0)
    throw std::invalid_argument("VoxelGridSpec: voxel size must be positive");
}

inline Vec3 voxel_center(const VoxelGridSpec& g, int x, int y, int z) {
  if (x < 0 || x >= g.dims[0] || y < 0 || y >= g.dims[1] || z < 0 || z >= g.dims[2])
    throw std::out_of_range("voxel_center: index outside grid");
  return {g.origin.x + (x + 0.5) * g.voxel_size.x, g.origin.y + (y + 0.5) * g.voxel_size.y,
          g.origin.z + (z + 0.5) * g.voxel_size.z};
}

// Linearized voxel index; the canonical ordering for selection sets, feature
// rows, and tie-breaking everywhere.
inline std::int64_t voxel_lin(const VoxelGridSpec& g, int x, int y, int z) {
  return (static_cast<std::int64_t>(x) * g.dims[1] + y) * g.dims[2] + z;
}

inline VoxelGridSpec upsample_spec(const VoxelGridSpec& g) {
  VoxelGridSpec out = g;
  for (int i = 0; i < 3; ++i) out.dims[i] = g.dims[i] * 2;
  out.voxel_size = {g.voxel_size.x * 0.5, g.voxel_size.y * 0.5, g.voxel_size.z * 0.5};
  return out;
}

// The K views (excluding ref) whose camera centers are closest to the ref
// camera's center; ties broken by ascending view index.
inline std::vector<int> nearest_views(const std::vector<CameraView>& views, int ref_index,
                                      int K) {
  const int n = static_cast<int>(views.size());
  if (ref_index < 0 || ref_index >= n)
    throw std::out_of_range("nearest_views: ref index outside view list");
  if (K >= n) throw std::invalid_argument("nearest_views: K must be smaller than the view count");
  const Vec3 ref_c = camera_center(views[ref_index].ext);
  std::vector<std::pair<double, int>> order;
  order.reserve(n - 1);
  for (int i = 0; i < n; ++i) {
    if (i == ref_index) continue;
    order.emplace_back(norm(camera_center(views[i].ext) - ref_c), i);
  }
  std::sort(order.begin(), order.end());
  std::vector<int> out;
  out.reserve(K);
  for (int i = 0; i < K; ++i) out.push_back(order[i].second);
  return out;
}

// Oriented 3D box: full extents, yaw about the vertical axis.
struct Box3D {
  Vec3 center;
  Vec3 size;
  double yaw = 0.0;
  int class_id = 0;
};

inline void validate_box(const Box3D& b) {
  if (b.size.x <= 0.0 || b.size.y <= 0.0 || b.size.z <= 0.0)
    throw std::invalid_argument("Box3D: size must be positive");
}

// Point transformed into the box frame (inverse yaw about the box center).
inline Vec3 box_local(const Box3D& b, const Vec3& p) {
  return Mat3::rot_z(-b.yaw).mul(p - b.center);
}

// Inclusive containment test.
inline bool point_in_box(const Box3D& b, const Vec3& p) {
  const Vec3 l = box_local(b, p);
  return std::abs(l.x) <= b.size.x * 0.5 && std::abs(l.y) <= b.size.y * 0.5 &&
         std::abs(l.z) <= b.size.z * 0.5;
}

// IoU of the two boxes' axis-aligned extents (center +- size/2); yaw ignored.
inline double iou3d_axis_aligned(const Box3D& a, const Box3D& b) {
  validate_box(a);
  validate_box(b);
  double inter = 1.0;
  for (int i = 0; i < 3; ++i) {
    const double alo = a.center[i] - a.size[i] * 0.5, ahi = a.center[i] + a.size[i] * 0.5;
    const double blo = b.center[i] - b.size[i] * 0.5, bhi = b.center[i] + b.size[i] * 0.5;
    const double ov = std::min(ahi, bhi) - std::max(alo, blo);
    if (ov <= 0.0) return 0.0;
    inter *= ov;
  }
  const double va = a.size.x * a.size.y * a.size.z;
  const double vb = b.size.x * b.size.y * b.size.z;
  return inter / (va + vb - inter);
}

// Axis-aligned bounding box of an oriented box, as half-extents about center.
inline Vec3 rotated_half_extents(const Box3D& b) {
  const double c = std::abs(std::cos(b.yaw)), s = std::abs(std::sin(b.yaw));
  return {0.5 * (c * b.size.x + s * b.size.y), 0.5 * (s * b.size.x + c * b.size.y),
          0.5 * b.size.z};
}

}  // namespace sgcdet
