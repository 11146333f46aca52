#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sgcdet/scenesim.hpp"

using namespace sgcdet;

namespace {

bool views_equal(const CameraView& a, const CameraView& b) {
  for (int k = 0; k < 9; ++k)
    if (a.ext.R.m[k] != b.ext.R.m[k]) return false;
  return a.ext.t.x == b.ext.t.x && a.ext.t.y == b.ext.t.y && a.ext.t.z == b.ext.t.z &&
         a.intr.fx == b.intr.fx && a.intr.cx == b.intr.cx && a.image_w == b.image_w &&
         a.feat_h == b.feat_h;
}

}  // namespace

TEST(GenConfigValidation, RejectsInconsistentSettings) {
  GenConfig g;
  EXPECT_NO_THROW(validate_gen_config(g));
  g.box_count_max = 1;  // below box_count_min = 2
  EXPECT_THROW(validate_gen_config(g), std::invalid_argument);
  g = GenConfig{};
  g.channels = 4;  // below num_classes + 2 = 5
  EXPECT_THROW(validate_gen_config(g), std::invalid_argument);
  g = GenConfig{};
  g.image_width = 62;  // not a multiple of stride 4
  EXPECT_THROW(validate_gen_config(g), std::invalid_argument);
  g = GenConfig{};
  g.room_min = {4, 0, 0};
  EXPECT_THROW(validate_gen_config(g), std::invalid_argument);
  g = GenConfig{};
  g.size_min = 0.0;
  EXPECT_THROW(validate_gen_config(g), std::invalid_argument);
}

TEST(CameraPlacement, OrbitsTheRoomCenterDeterministically) {
  const GenConfig g;
  SplitMix64 rng_a(9), rng_b(9);
  const std::vector<CameraView> a = place_cameras(g, rng_a);
  const std::vector<CameraView> b = place_cameras(g, rng_b);
  ASSERT_EQ(a.size(), 4u);
  for (size_t k = 0; k < a.size(); ++k) EXPECT_TRUE(views_equal(a[k], b[k]));

  const Vec3 target = room_center(g);
  for (const CameraView& v : a) {
    const Vec3 c = camera_center(v.ext);
    EXPECT_NEAR(c.z, g.camera_height, 1e-9);
    const double dx = c.x - target.x, dy = c.y - target.y;
    EXPECT_NEAR(std::sqrt(dx * dx + dy * dy), g.orbit_radius, 1e-9);
    EXPECT_EQ(v.feat_w, 16);
    EXPECT_EQ(v.feat_h, 12);
  }
}

TEST(SceneGeneration, IsDeterministicPerSeed) {
  const GenConfig g;
  const SyntheticScene a = generate_scene(42, g);
  const SyntheticScene b = generate_scene(42, g);
  ASSERT_EQ(a.boxes.size(), b.boxes.size());
  for (size_t i = 0; i < a.boxes.size(); ++i) {
    EXPECT_EQ(a.boxes[i].center.x, b.boxes[i].center.x);
    EXPECT_EQ(a.boxes[i].size.y, b.boxes[i].size.y);
    EXPECT_EQ(a.boxes[i].yaw, b.boxes[i].yaw);
    EXPECT_EQ(a.boxes[i].class_id, b.boxes[i].class_id);
  }
  ASSERT_EQ(a.views.size(), b.views.size());
  for (size_t k = 0; k < a.views.size(); ++k) EXPECT_TRUE(views_equal(a.views[k], b.views[k]));
  EXPECT_GE(static_cast<int>(a.boxes.size()), g.box_count_min);
  EXPECT_LE(static_cast<int>(a.boxes.size()), g.box_count_max);

  const SyntheticScene c = generate_scene(43, g);
  bool differs = a.boxes.size() != c.boxes.size();
  for (size_t i = 0; !differs && i < a.boxes.size(); ++i)
    differs = a.boxes[i].center.x != c.boxes[i].center.x;
  EXPECT_TRUE(differs);
}

TEST(SceneGeneration, SatisfiesItsPostconditionsAcrossSeeds) {
  const GenConfig g;
  for (std::uint64_t seed = 1; seed <= 60; ++seed)
    EXPECT_NO_THROW(validate_scene(generate_scene(seed, g), g)) << "seed " << seed;
}

TEST(SceneGeneration, ThrowsWhenPlacementIsImpossible) {
  GenConfig g;
  g.room_min = {0, 0, 0};
  g.room_max = {1.2, 1.2, 1.0};
  g.box_count_min = 2;
  g.box_count_max = 2;
  g.size_min = 1.0;
  g.size_max = 1.0;
  g.yaw_max = 0.0;
  g.orbit_radius = 2.5;
  // Two unit boxes cannot coexist without overlap inside a 1.2 x 1.2 x 1.0 room.
  EXPECT_THROW(generate_scene(1, g), std::runtime_error);
}

TEST(RayIntersection, EntryDepthMatchesTheOracle) {
  SplitMix64 rng(31);
  int hits = 0;
  for (int t = 0; t < 100; ++t) {
    Box3D b;
    b.center = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    b.size = {rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5), rng.uniform(0.3, 1.5)};
    b.yaw = rng.uniform(-3.1, 3.1);
    const Vec3 o{rng.uniform(2.5, 4.0), rng.uniform(2.5, 4.0), rng.uniform(2.5, 4.0)};
    Vec3 dir;
    if (t % 2 == 0) {
      // Aim through a point inside the box so the ray must hit.
      const Vec3 q = b.center + Vec3{rng.uniform(-0.1, 0.1), rng.uniform(-0.1, 0.1),
                                     rng.uniform(-0.1, 0.1)};
      dir = q - o;
    } else {
      dir = {rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)};
    }
    const RayHit hit = ray_box_entry(o, dir, b);
    const double ol[3] = {o.x, o.y, o.z}, dl[3] = {dir.x, dir.y, dir.z};
    const double want = oracle::ray_entry_depth(ol, dl, b.center.x, b.center.y, b.center.z,
                                                b.size.x, b.size.y, b.size.z, b.yaw);
    if (want < 0.0) {
      EXPECT_LT(hit.t, 0.0);
    } else {
      ASSERT_GE(hit.t, 0.0);
      EXPECT_NEAR(hit.t, want, 1e-9);
      EXPECT_NEAR(norm(hit.normal), 1.0, 1e-12);
      EXPECT_LE(dot(hit.normal, dir), 0.0);  // entry face opposes the ray
      ++hits;
    }
  }
  EXPECT_GE(hits, 40);
}

TEST(Rendering, ProducesTheAnalyticSolutionForASingleBox) {
  const int ncls = 3, channels = 6;
  SyntheticScene scene;
  scene.room_min = {0, 0, 0};
  scene.room_max = {4, 4, 1.6};
  Box3D b;
  b.center = {2, 2, 0.8};
  b.size = {1, 1, 0.8};
  b.yaw = 0.0;
  b.class_id = 1;
  scene.boxes.push_back(b);

  CameraView view;
  view.ext = look_at({2, -1, 0.8}, {2, 2, 0.8});
  view.intr = {60, 60, 31.5, 23.5};
  view.image_w = 64;
  view.image_h = 48;
  view.feat_w = 16;
  view.feat_h = 12;
  scene.views.push_back(view);

  const RenderedView rv = render_view(scene, view, channels, ncls, 5.0);
  ASSERT_EQ(rv.feat.shape, (std::vector<int>{12, 16, channels}));

  // Pixel (5, 7): feature intrinsics are fx = 15, cx = 7.5, cy = 5.5, so the
  // camera ray is (-1/30, -1/30, 1) and enters the box's y = 1.5 face at
  // camera depth 2.5 exactly.
  EXPECT_EQ(rv.gt_depth.at(5, 7), 2.5);
  const double shade = 1.0 / std::sqrt(1.0 + 2.0 / 900.0);
  EXPECT_NEAR(rv.feat.at(5, 7, 1), shade, 1e-6);
  EXPECT_EQ(rv.feat.at(5, 7, 0), 0.0);
  EXPECT_EQ(rv.feat.at(5, 7, 2), 0.0);
  const double px = 2.0 - 2.5 / 30.0;
  EXPECT_NEAR(rv.feat.at(5, 7, 3), px / 4.0, 1e-6);
  EXPECT_NEAR(rv.feat.at(5, 7, 4), 1.5 / 4.0, 1e-6);
  EXPECT_EQ(rv.feat.at(5, 7, 5), 0.0);

  // Pixel (0, 0) misses the box: background encoding.
  EXPECT_EQ(rv.gt_depth.at(0, 0), 5.0);
  EXPECT_EQ(rv.feat.at(0, 0, 0), 0.0);
  EXPECT_EQ(rv.feat.at(0, 0, 1), 0.0);
  EXPECT_EQ(rv.feat.at(0, 0, 3), -1.0);
  EXPECT_EQ(rv.feat.at(0, 0, 4), -1.0);

  // Every stored value survives a float round trip unchanged.
  for (double v : rv.feat.data)
    EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));
  for (double v : rv.gt_depth.data)
    EXPECT_EQ(v, static_cast<double>(static_cast<float>(v)));

  EXPECT_THROW(render_view(scene, view, ncls + 1, ncls, 5.0), std::invalid_argument);
}

TEST(Rendering, ThreadCountDoesNotChangePixels) {
  const GenConfig g;
  const SyntheticScene scene = generate_scene(11, g);
  const RenderedView a = render_view(scene, scene.views[0], g.channels, g.num_classes,
                                     g.far_plane, 1);
  const RenderedView b = render_view(scene, scene.views[0], g.channels, g.num_classes,
                                     g.far_plane, 4);
  EXPECT_EQ(a.feat.data, b.feat.data);
  EXPECT_EQ(a.gt_depth.data, b.gt_depth.data);
}
