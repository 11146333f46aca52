#include <gtest/gtest.h>

#include <utility>
#include <vector>

#include "gradcheck_cases.hpp"
#include "oracles.hpp"
#include "sgcdet/lifting.hpp"
#include "sgcdet/tensor.hpp"

using namespace sgcdet;

namespace {

Tensor identity_matrix(int n) {
  Tensor t({n, n});
  for (int i = 0; i < n; ++i) t.at(i, i) = 1.0;
  return t;
}

}  // namespace

TEST(OffsetStencil, UnitAxesThenGrowingMagnitude) {
  const std::vector<double> s4 = offset_stencil(4);
  ASSERT_EQ(s4.size(), 12u);
  const std::vector<double> want4 = {1, 0, 0, -1, 0, 0, 0, 1, 0, 0, -1, 0};
  EXPECT_EQ(s4, want4);
  const std::vector<double> s8 = offset_stencil(8);
  const std::vector<double> want8 = {1, 0, 0, -1, 0, 0, 0, 1,  0, 0, -1, 0,
                                     0, 0, 1, 0,  0, -1, 2, 0, 0, -2, 0, 0};
  EXPECT_EQ(s8, want8);
}

TEST(LiftParams, OffsetsAndWeightsStartNeutral) {
  ParameterStore store(7);
  ensure_lift_params(store, 5, 8);
  for (double v : store.param("lift.offset.W").data) EXPECT_EQ(v, 0.0);
  for (double v : store.param("lift.attn.W").data) EXPECT_EQ(v, 0.0);
  for (double v : store.param("lift.attn.b").data) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(store.param("lift.offset.b").data, offset_stencil(8));
  bool any_nonzero = false;
  for (double v : store.param("lift.value.W").data) any_nonzero |= (v != 0.0);
  EXPECT_TRUE(any_nonzero);
}

TEST(LiftedSampling, MatchesMaterializedVolume) {
  const Tensor feat = gradcases::rand_tensor({4, 5, 3}, 11);
  const Tensor depth = gradcases::rand_tensor({4, 5, 6}, 12, 0.05, 1.0);
  const std::vector<double> vol =
      oracle::materialize_lift(feat.data, depth.data, 4, 5, 6, 3);
  SplitMix64 rng(13);
  for (int t = 0; t < 20; ++t) {
    const double u = rng.uniform(0.0, 4.0);
    const double v = rng.uniform(0.0, 3.0);
    const double d = rng.uniform(0.0, 5.0);
    const std::vector<double> got = sample_lifted(feat, depth, u, v, d);
    const std::vector<double> want = oracle::trilinear(vol, 4, 5, 6, 3, v, u, d);
    for (int c = 0; c < 3; ++c) EXPECT_NEAR(got[c], want[c], 1e-12);
  }
  EXPECT_THROW(sample_lifted(feat, gradcases::rand_tensor({3, 5, 6}, 14), 1, 1, 1),
               std::invalid_argument);
  EXPECT_THROW(sample_lifted(feat, depth, std::nan(""), 1, 1), std::invalid_argument);
}

TEST(IntraView, NeutralInitAveragesTheStencilSamples) {
  const int M = 8, C = 3;
  ParameterStore store(21);
  ensure_lift_params(store, C, M);
  store.set("lift.value.W", identity_matrix(C));

  const Tensor feat = gradcases::rand_tensor({4, 5, C}, 22);
  const Tensor depth = gradcases::rand_tensor({4, 5, 4}, 23, 0.05, 1.0);
  ViewField f;
  f.feat = &feat;
  f.depth = &depth;

  const double u = 1.4, v = 1.6, d = 1.3;
  const std::vector<double> got = intra_view_aggregate(f, u, v, d, store, M);
  const std::vector<double> stencil = offset_stencil(M);
  std::vector<double> want(C, 0.0);
  for (int m = 0; m < M; ++m) {
    const std::vector<double> smp = sample_lifted(
        feat, depth, u + stencil[3 * m], v + stencil[3 * m + 1], d + stencil[3 * m + 2]);
    for (int c = 0; c < C; ++c) want[c] += 0.125 * smp[c];
  }
  for (int c = 0; c < C; ++c) EXPECT_EQ(got[c], want[c]);
}

TEST(InterView, EmptyInputYieldsZeros) {
  ParameterStore store(31);
  ensure_fuse_params(store, 4);
  const std::vector<double> out = inter_view_fuse({}, store, 4);
  ASSERT_EQ(out.size(), 4u);
  for (double v : out) EXPECT_EQ(v, 0.0);
}

TEST(InterView, SingleViewPassesThroughValueProjection) {
  const int C = 4;
  ParameterStore store(32);
  ensure_fuse_params(store, C);
  const std::vector<double> f = gradcases::rand_values(C, 33);
  const std::vector<double> out = inter_view_fuse({{2, f}}, store, C);
  const std::vector<double> want =
      oracle::linear(store.param("fuse.v.W").data, {}, f, C, C);
  for (int c = 0; c < C; ++c) EXPECT_EQ(out[c], want[c]);
}

TEST(InterView, OrderOfInputsDoesNotMatter) {
  const int C = 4;
  ParameterStore store(34);
  ensure_fuse_params(store, C);
  const std::vector<double> f0 = gradcases::rand_values(C, 35);
  const std::vector<double> f1 = gradcases::rand_values(C, 36);
  const std::vector<double> f2 = gradcases::rand_values(C, 37);
  const std::vector<double> a = inter_view_fuse({{0, f0}, {1, f1}, {2, f2}}, store, C);
  const std::vector<double> b = inter_view_fuse({{2, f2}, {0, f0}, {1, f1}}, store, C);
  EXPECT_EQ(a, b);
}

TEST(PointAggregation, CountsCallsSamplesAndCorners) {
  const int M = 4, C = 3;
  gradcases::LiftSetup setup = gradcases::make_lift_setup();
  ParameterStore store(41);
  ensure_lift_params(store, C, M);
  ensure_fuse_params(store, C);

  std::vector<Tensor> feats, depths;
  std::vector<ViewField> fields;
  for (size_t i = 0; i < setup.views.size(); ++i) {
    feats.push_back(gradcases::rand_tensor({3, 3, C}, 50 + i));
    depths.push_back(gradcases::rand_tensor({3, 3, setup.bins.D}, 60 + i, 0.05, 1.0));
  }
  for (size_t i = 0; i < setup.views.size(); ++i)
    fields.push_back(ViewField{setup.views[i], &feats[i], &depths[i]});

  Counters both;
  aggregate_point(setup.p, fields, store, setup.bins, M, C, &both);
  EXPECT_EQ(both.aggregate_calls, 1);
  EXPECT_EQ(both.deformable_samples, 2 * M);
  EXPECT_EQ(both.corner_fetches, 2 * 8 * (1 + M));

  Counters none;
  const std::vector<double> far = aggregate_point({100, 100, 100}, fields, store,
                                                  setup.bins, M, C, &none);
  EXPECT_EQ(none.aggregate_calls, 1);
  EXPECT_EQ(none.deformable_samples, 0);
  EXPECT_EQ(none.corner_fetches, 0);
  for (double v : far) EXPECT_EQ(v, 0.0);

  both.add(none);
  EXPECT_EQ(both.aggregate_calls, 2);
  EXPECT_EQ(both.deformable_samples, 2 * M);
}

TEST(PointAggregation, TapedForwardIsBitIdentical) {
  const int M = 4, C = 3;
  gradcases::LiftSetup setup = gradcases::make_lift_setup();
  ParameterStore store(42);
  ensure_lift_params(store, C, M);
  ensure_fuse_params(store, C);

  std::vector<Tensor> feats, depths;
  for (size_t i = 0; i < setup.views.size(); ++i) {
    feats.push_back(gradcases::rand_tensor({3, 3, C}, 70 + i));
    depths.push_back(gradcases::rand_tensor({3, 3, setup.bins.D}, 80 + i, 0.05, 1.0));
  }
  std::vector<ViewField> fields;
  for (size_t i = 0; i < setup.views.size(); ++i)
    fields.push_back(ViewField{setup.views[i], &feats[i], &depths[i]});
  const std::vector<double> plain = aggregate_point(setup.p, fields, store, setup.bins, M, C);

  Tape tape;
  LiftVars lift = make_lift_vars(tape, store, C, M);
  FuseVars fuse = make_fuse_vars(tape, store, C);
  std::vector<ViewFieldT> fields_t;
  for (size_t i = 0; i < setup.views.size(); ++i)
    fields_t.push_back(
        ViewFieldT{setup.views[i], tape.constant(feats[i]), tape.constant(depths[i])});
  const Var out = aggregate_point_taped(tape, setup.p, fields_t, setup.bins, lift, fuse, M, C);
  ASSERT_EQ(tape.len(out), C);
  for (int c = 0; c < C; ++c) EXPECT_EQ(tape.value_at(out, c), plain[c]);
}
