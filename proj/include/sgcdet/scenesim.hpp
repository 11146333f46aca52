#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sgcdet/geometry.hpp"
#include "sgcdet/parallel.hpp"
#include "sgcdet/tensor.hpp"

namespace sgcdet {

struct GenConfig {
  Vec3 room_min{0.0, 0.0, 0.0};
  Vec3 room_max{4.0, 4.0, 1.6};
  int box_count_min = 2;
  int box_count_max = 4;
  int num_classes = 3;
  double size_min = 0.4;
  double size_max = 1.0;
  double yaw_max = 3.14159265358979323846;
  int cameras = 4;
  double orbit_radius = 3.5;
  double camera_height = 1.4;
  double focal = 60.0;
  int image_width = 64;
  int image_height = 48;
  int stride = 4;
  int channels = 16;
  double overlap_iou_max = 0.0;
  double far_plane = 5.0;
};

// Depth range for the "box center visible in some view" check.
constexpr double kVisibleDepthMin = 0.05;

inline void validate_gen_config(const GenConfig& g) {
  for (int i = 0; i < 3; ++i)
    if (!(g.room_min[i] < g.room_max[i]))
      throw std::invalid_argument("GenConfig: room_min must be below room_max");
  if (g.box_count_min < 0 || g.box_count_max < g.box_count_min)
    throw std::invalid_argument("GenConfig: bad box count range");
  if (g.num_classes < 1) throw std::invalid_argument("GenConfig: num_classes must be >= 1");
  if (!(g.size_min > 0.0 && g.size_max >= g.size_min))
    throw std::invalid_argument("GenConfig: bad size range");
  if (!(g.yaw_max >= 0.0)) throw std::invalid_argument("GenConfig: yaw_max must be >= 0");
  if (g.cameras < 1) throw std::invalid_argument("GenConfig: need at least one camera");
  if (!(g.orbit_radius > 0.0)) throw std::invalid_argument("GenConfig: orbit_radius must be > 0");
  if (!(g.focal > 0.0)) throw std::invalid_argument("GenConfig: focal must be > 0");
  if (g.image_width <= 0 || g.image_height <= 0 || g.stride <= 0 ||
      g.image_width % g.stride != 0 || g.image_height % g.stride != 0)
    throw std::invalid_argument("GenConfig: image dims must be positive multiples of stride");
  if (g.channels < g.num_classes + 2)
    throw std::invalid_argument("GenConfig: channels must be >= num_classes + 2");
  if (!(g.overlap_iou_max >= 0.0 && g.overlap_iou_max <= 1.0))
    throw std::invalid_argument("GenConfig: overlap_iou_max must lie in [0, 1]");
  if (!(g.far_plane > 0.0)) throw std::invalid_argument("GenConfig: far_plane must be > 0");
}

struct SyntheticScene {
  std::vector<Box3D> boxes;
  std::vector<CameraView> views;
  Vec3 room_min;
  Vec3 room_max;
  std::uint64_t seed = 0;
};

inline Vec3 room_center(const GenConfig& g) {
  return (g.room_min + g.room_max) * 0.5;
}

// Cameras sit on a horizontal circle around the room center, evenly spaced
// with seeded angular jitter, all looking at the center.
inline std::vector<CameraView> place_cameras(const GenConfig& g, SplitMix64& rng) {
  const Vec3 target = room_center(g);
  const double two_pi = 2.0 * 3.14159265358979323846;
  std::vector<CameraView> views;
  views.reserve(g.cameras);
  for (int k = 0; k < g.cameras; ++k) {
    const double jitter = (rng.uniform() - 0.5) * 0.25 * two_pi / g.cameras;
    const double ang = two_pi * k / g.cameras + jitter;
    const Vec3 pos{target.x + g.orbit_radius * std::cos(ang),
                   target.y + g.orbit_radius * std::sin(ang), g.camera_height};
    CameraView v;
    v.ext = look_at(pos, target);
    v.intr = {g.focal, g.focal, (g.image_width - 1) * 0.5, (g.image_height - 1) * 0.5};
    v.image_w = g.image_width;
    v.image_h = g.image_height;
    v.feat_w = g.image_width / g.stride;
    v.feat_h = g.image_height / g.stride;
    validate_view(v);
    views.push_back(v);
  }
  return views;
}

inline bool center_visible(const Vec3& c, const std::vector<CameraView>& views,
                           double far_plane) {
  for (const CameraView& v : views)
    if (in_view(project_point(c, v), v, kVisibleDepthMin, far_plane)) return true;
  return false;
}

// Rejection sampling: each box draws size, yaw, class, and center, then is
// accepted only if it fits the room at its rotated footprint, overlaps no
// placed box beyond overlap_iou_max (axis-aligned IoU), and has its center
// visible in at least one view. The draw order is fixed so the stream is the
// same no matter which test rejects.
inline SyntheticScene generate_scene(std::uint64_t seed, const GenConfig& g) {
  validate_gen_config(g);
  SplitMix64 rng(seed);
  SyntheticScene scene;
  scene.room_min = g.room_min;
  scene.room_max = g.room_max;
  scene.seed = seed;
  scene.views = place_cameras(g, rng);

  const int count =
      g.box_count_min + static_cast<int>(rng.below(g.box_count_max - g.box_count_min + 1));
  for (int b = 0; b < count; ++b) {
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
      Box3D box;
      box.size = {g.size_min + rng.uniform() * (g.size_max - g.size_min),
                  g.size_min + rng.uniform() * (g.size_max - g.size_min),
                  g.size_min + rng.uniform() * (g.size_max - g.size_min)};
      box.yaw = (rng.uniform() * 2.0 - 1.0) * g.yaw_max;
      box.class_id = static_cast<int>(rng.below(g.num_classes));
      const double ux = rng.uniform(), uy = rng.uniform(), uz = rng.uniform();
      const Vec3 rhe = rotated_half_extents(box);
      const Vec3 lo = g.room_min + rhe;
      const Vec3 hi = g.room_max - rhe;
      if (!(lo.x <= hi.x && lo.y <= hi.y && lo.z <= hi.z)) continue;
      box.center = {lo.x + ux * (hi.x - lo.x), lo.y + uy * (hi.y - lo.y),
                    lo.z + uz * (hi.z - lo.z)};
      bool ok = true;
      for (const Box3D& other : scene.boxes)
        if (iou3d_axis_aligned(box, other) > g.overlap_iou_max) {
          ok = false;
          break;
        }
      if (ok && !center_visible(box.center, scene.views, g.far_plane)) ok = false;
      if (ok) {
        scene.boxes.push_back(box);
        placed = true;
      }
    }
    if (!placed)
      throw std::runtime_error("generate_scene: rejection budget exhausted placing box " +
                               std::to_string(b) + " of " + std::to_string(count));
  }
  return scene;
}

// Checks the generator's postconditions on an arbitrary scene.
inline void validate_scene(const SyntheticScene& scene, const GenConfig& g) {
  for (const CameraView& v : scene.views) validate_view(v);
  for (size_t i = 0; i < scene.boxes.size(); ++i) {
    const Box3D& b = scene.boxes[i];
    validate_box(b);
    const Vec3 rhe = rotated_half_extents(b);
    for (int a = 0; a < 3; ++a)
      if (b.center[a] - rhe[a] < scene.room_min[a] - 1e-9 ||
          b.center[a] + rhe[a] > scene.room_max[a] + 1e-9)
        throw std::runtime_error("validate_scene: box outside room bounds");
    for (size_t j = 0; j < i; ++j)
      if (iou3d_axis_aligned(b, scene.boxes[j]) > g.overlap_iou_max + 1e-12)
        throw std::runtime_error("validate_scene: box overlap above limit");
    if (!center_visible(b.center, scene.views, g.far_plane))
      throw std::runtime_error("validate_scene: box center not visible in any view");
  }
}

struct RenderedView {
  Tensor feat;      // (h, w, C)
  Tensor gt_depth;  // (h, w), background = far_plane
};

// Ray-slab intersection in the box's yaw frame. The ray is p = o + t * dir
// with dir unnormalized (unit camera-space z), so t is camera-space depth.
// Returns the entry depth and the world face normal, or t < 0 on miss.
struct RayHit {
  double t = -1.0;
  Vec3 normal;
};

inline RayHit ray_box_entry(const Vec3& o, const Vec3& dir, const Box3D& b) {
  const Mat3 to_local = Mat3::rot_z(-b.yaw);
  const Vec3 ol = to_local.mul(o - b.center);
  const Vec3 dl = to_local.mul(dir);
  double t_in = -1e300, t_out = 1e300;
  int axis_in = -1;
  double sign_in = 0.0;
  for (int a = 0; a < 3; ++a) {
    const double half = b.size[a] * 0.5;
    if (std::abs(dl[a]) < 1e-12) {
      if (ol[a] < -half || ol[a] > half) return {};
      continue;
    }
    double t0 = (-half - ol[a]) / dl[a];
    double t1 = (half - ol[a]) / dl[a];
    double face = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      face = 1.0;
    }
    if (t0 > t_in) {
      t_in = t0;
      axis_in = a;
      sign_in = face;
    }
    t_out = std::min(t_out, t1);
  }
  if (t_in > t_out || t_out < 0.0 || axis_in < 0) return {};
  RayHit hit;
  hit.t = t_in;
  Vec3 nl{};
  nl[axis_in] = sign_in;
  hit.normal = Mat3::rot_z(b.yaw).mul(nl);
  return hit;
}

// Analytic feature renderer at feature resolution. Channels [0, ncls) carry
// the hit box's one-hot class scaled by headlight Lambertian shading; the
// next two carry room-normalized hit-point x and y; any remaining channels
// are zero. Background pixels: class channels 0, coordinate channels -1,
// depth = far_plane. All outputs pass through f32 so in-memory values equal
// their serialized form.
inline RenderedView render_view(const SyntheticScene& scene, const CameraView& view,
                                int channels, int num_classes, double far_plane,
                                int threads = 1) {
  if (channels < num_classes + 2)
    throw std::invalid_argument("render_view: channels must be >= num_classes + 2");
  validate_view(view);
  const int h = view.feat_h, w = view.feat_w;
  const Intrinsics fi = view.feature_intrinsics();
  const Vec3 origin = camera_center(view.ext);
  const Mat3 Rt = view.ext.R.transposed();
  RenderedView out;
  out.feat = Tensor({h, w, channels});
  out.gt_depth = Tensor({h, w});
  const Vec3 span = scene.room_max - scene.room_min;

  parallel_for(static_cast<std::int64_t>(h) * w, threads, [&](std::int64_t px) {
    const int i = static_cast<int>(px / w);
    const int j = static_cast<int>(px % w);
    const Vec3 dir_cam{(j - fi.cx) / fi.fx, (i - fi.cy) / fi.fy, 1.0};
    const Vec3 dir = Rt.mul(dir_cam);
    int best_box = -1;
    RayHit best;
    best.t = far_plane;
    for (size_t b = 0; b < scene.boxes.size(); ++b) {
      const RayHit hit = ray_box_entry(origin, dir, scene.boxes[b]);
      if (hit.t > 1e-9 && hit.t < best.t) {
        best = hit;
        best_box = static_cast<int>(b);
      }
    }
    double* f = &out.feat.at(i, j, 0);
    if (best_box < 0) {
      f[num_classes] = -1.0;
      f[num_classes + 1] = -1.0;
      out.gt_depth.at(i, j) = static_cast<double>(static_cast<float>(far_plane));
      return;
    }
    const Box3D& bx = scene.boxes[best_box];
    Vec3 p = origin + dir * best.t;
    // Pull the hit fractionally inside so containment predicates accept it.
    p = p + (bx.center - p) * 1e-12;
    const double inv_len = 1.0 / norm(dir);
    const double shade = std::abs(dot(best.normal, dir)) * inv_len;
    f[bx.class_id] = static_cast<double>(static_cast<float>(shade));
    f[num_classes] = static_cast<double>(static_cast<float>((p.x - scene.room_min.x) / span.x));
    f[num_classes + 1] =
        static_cast<double>(static_cast<float>((p.y - scene.room_min.y) / span.y));
    out.gt_depth.at(i, j) = static_cast<double>(static_cast<float>(best.t));
  });
  return out;
}

inline std::vector<RenderedView> render_scene(const SyntheticScene& scene, int channels,
                                              int num_classes, double far_plane,
                                              int threads = 1) {
  std::vector<RenderedView> out;
  out.reserve(scene.views.size());
  for (const CameraView& v : scene.views)
    out.push_back(render_view(scene, v, channels, num_classes, far_plane, threads));
  return out;
}

}  // namespace sgcdet
