#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "sgcdet/depthnet.hpp"
#include "sgcdet/geometry.hpp"
#include "sgcdet/tensor.hpp"

using namespace sgcdet;

namespace {

CameraView make_view(const Vec3& pos, const Vec3& target) {
  CameraView v;
  v.intr = {30.0, 30.0, 31.5, 23.5};
  v.ext = look_at(pos, target);
  v.image_h = 48;
  v.image_w = 64;
  v.feat_h = 12;
  v.feat_w = 16;
  validate_view(v);
  return v;
}

Tensor rand_tensor(std::vector<int> shape, std::uint64_t seed, double lo = -1.0,
                   double hi = 1.0) {
  Tensor t(std::move(shape));
  SplitMix64 rng(seed);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST(DepthBinsMath, CentersAndCoordinates) {
  const DepthBins bins{0.2, 5.0, 12};
  validate_bins(bins);
  EXPECT_NEAR(bins.delta(), 0.4, 1e-15);
  EXPECT_NEAR(bins.center(0), 0.4, 1e-15);
  EXPECT_NEAR(bins.center(11), 4.8, 1e-15);
  for (int i = 0; i < bins.D; ++i)
    EXPECT_NEAR(metric_to_bin_coord(bins.center(i), bins), i, 1e-12);
  EXPECT_EQ(metric_to_bin_coord(0.0, bins), 0.0);
  EXPECT_EQ(metric_to_bin_coord(100.0, bins), 11.0);
}

TEST(DepthBinsMath, IndexPicksContainingInterval) {
  const DepthBins bins{0.2, 5.0, 12};
  for (int i = 0; i < bins.D; ++i) EXPECT_EQ(metric_to_bin_index(bins.center(i), bins), i);
  EXPECT_EQ(metric_to_bin_index(0.6 - 1e-9, bins), 0);
  EXPECT_EQ(metric_to_bin_index(0.6 + 1e-9, bins), 1);
  EXPECT_EQ(metric_to_bin_index(-3.0, bins), 0);
  EXPECT_EQ(metric_to_bin_index(50.0, bins), 11);
}

TEST(DepthBinsMath, ValidationRejectsDegenerateRanges) {
  EXPECT_THROW(validate_bins(DepthBins{2.0, 1.0, 4}), std::invalid_argument);
  EXPECT_THROW(validate_bins(DepthBins{0.2, 5.0, 1}), std::invalid_argument);
}

TEST(PlaneSweep, IdenticalPosesWarpToIdentity) {
  const CameraView view = make_view({4, 1, 1.5}, {0.5, 0.5, 0.5});
  const Tensor feat = rand_tensor({12, 16, 5}, 41);
  for (const double d : {0.8, 2.0, 3.7}) {
    const Tensor warped = warp_features(feat, d, view, view);
    for (std::int64_t i = 0; i < feat.size(); ++i)
      EXPECT_NEAR(warped.data[i], feat.data[i], 1e-9);
  }
}

TEST(PlaneSweep, BehindCameraSamplesAreZero) {
  const CameraView ref = make_view({4, 1, 1.5}, {0.5, 0.5, 0.5});
  const CameraView away = make_view({4, 1, 1.5}, {7.5, 1.5, 2.5});
  const Tensor feat = rand_tensor({12, 16, 5}, 42);
  const Tensor warped = warp_features(feat, 2.0, ref, away);
  for (double v : warped.data) EXPECT_EQ(v, 0.0);
}

TEST(PlaneSweep, MismatchedResolutionThrows) {
  const CameraView ref = make_view({4, 1, 1.5}, {0.5, 0.5, 0.5});
  EXPECT_THROW(warp_features(rand_tensor({6, 8, 5}, 43), 2.0, ref, ref),
               std::invalid_argument);
}

TEST(CostVolume, MatchesBruteForceCorrelation) {
  const int h = 3, w = 4, C = 5, D = 4, K = 2;
  const Tensor ref = rand_tensor({h, w, C}, 44);
  std::vector<std::vector<Tensor>> warped(K);
  std::vector<std::vector<std::vector<double>>> oracle_warped(K);
  SplitMix64 rng(45);
  for (int k = 0; k < K; ++k)
    for (int d = 0; d < D; ++d) {
      Tensor t({h, w, C});
      for (double& v : t.data) v = rng.uniform(-1, 1);
      oracle_warped[k].push_back(t.data);
      warped[k].push_back(std::move(t));
    }
  const Tensor cost = build_cost_volume(ref, warped);
  ASSERT_EQ(cost.shape, (std::vector<int>{h, w, D}));
  const std::vector<double> want = oracle::cost_volume(ref.data, oracle_warped, h, w, C);
  for (std::int64_t i = 0; i < cost.size(); ++i) EXPECT_NEAR(cost.data[i], want[i], 1e-12);
}

TEST(CostVolume, IdenticalPosesGiveDepthInvariantCost) {
  std::vector<CameraView> views = {make_view({4, 1, 1.5}, {0.5, 0.5, 0.5}),
                                   make_view({4, 1, 1.5}, {0.5, 0.5, 0.5})};
  std::vector<Tensor> feats = {rand_tensor({12, 16, 5}, 46), rand_tensor({12, 16, 5}, 47)};
  const DepthBins bins{0.2, 5.0, 4};
  const Tensor cost = cost_volume_for_view(feats, views, 0, bins, 1);
  for (int i = 0; i < 12; ++i)
    for (int j = 0; j < 16; ++j) {
      double expect = 0.0;
      for (int c = 0; c < 5; ++c) expect += feats[0].at(i, j, c) * feats[1].at(i, j, c);
      expect /= std::sqrt(5.0);
      for (int d = 0; d < 4; ++d) EXPECT_NEAR(cost.at(i, j, d), expect, 1e-9);
    }
}

TEST(DepthNetwork, DistributionsAreNormalized) {
  ParameterStore store(51);
  ensure_depth_params(store, 5, 6);
  const Tensor feat = rand_tensor({3, 4, 5}, 48);
  const Tensor cost = rand_tensor({3, 4, 6}, 49);
  const Tensor probs = depth_forward(feat, cost, store);
  ASSERT_EQ(probs.shape, (std::vector<int>{3, 4, 6}));
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 4; ++j) {
      double sum = 0.0;
      for (int d = 0; d < 6; ++d) {
        EXPECT_GT(probs.at(i, j, d), 0.0);
        sum += probs.at(i, j, d);
      }
      EXPECT_NEAR(sum, 1.0, 1e-12);
    }
}

TEST(DepthNetwork, TapedForwardIsBitIdentical) {
  ParameterStore store(52);
  ensure_depth_params(store, 5, 6);
  const Tensor feat = rand_tensor({3, 4, 5}, 53);
  const Tensor cost = rand_tensor({3, 4, 6}, 54);
  const Tensor plain = depth_forward(feat, cost, store);

  Tape tape;
  DepthVars dv = make_depth_vars(tape, store, 5, 6);
  Var probs = depth_forward_taped(tape, tape.constant(feat), tape.constant(cost), dv, 3, 4, 5, 6);
  ASSERT_EQ(tape.len(probs), static_cast<int>(plain.size()));
  for (std::int64_t i = 0; i < plain.size(); ++i)
    EXPECT_EQ(tape.value_at(probs, static_cast<int>(i)), plain.data[i]);
}

TEST(DepthNetwork, ParameterShapesAreFixed) {
  ParameterStore store(55);
  ensure_depth_params(store, 7, 9);
  EXPECT_EQ(store.param("depth.mono.W").shape, (std::vector<int>{7, 7}));
  EXPECT_EQ(store.param("depth.mv.W").shape, (std::vector<int>{9, 9}));
  EXPECT_EQ(store.param("depth.dec.W").shape, (std::vector<int>{9, 16}));
  EXPECT_EQ(store.param("depth.dec.b").shape, (std::vector<int>{9}));
}
