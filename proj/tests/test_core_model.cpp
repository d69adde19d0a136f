#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "mtmfg/core_model.hpp"

using namespace mtmfg;

TEST(TargetDistance, Ball) {
  const auto g = TargetSet::ball({0.0, 0.0}, 1.0);
  EXPECT_DOUBLE_EQ(target_distance(g, std::vector<double>{2.0, 0.0}), 1.0);
  EXPECT_EQ(target_distance(g, std::vector<double>{0.5, 0.0}), 0.0);
}

TEST(TargetDistance, NearestOfTwoBalls) {
  const TargetSet g(2, {Ball{{3.0, 0.0}, 1.0}, Ball{{-3.0, 0.0}, 1.0}});
  EXPECT_DOUBLE_EQ(target_distance(g, std::vector<double>{0.0, 0.0}), 2.0);
}

TEST(TargetDistance, BoxAndPointCloud) {
  const TargetSet box(2, {Box{{0.0, 0.0}, {1.0, 1.0}}});
  EXPECT_DOUBLE_EQ(target_distance(box, std::vector<double>{4.0, 5.0}), 5.0);
  EXPECT_EQ(target_distance(box, std::vector<double>{0.5, 1.0}), 0.0);
  const TargetSet cloud(2, {PointCloud{{0.0, 0.0, 2.0, 0.0}, 0.25}});
  EXPECT_DOUBLE_EQ(target_distance(cloud, std::vector<double>{1.5, 0.0}), 0.25);
  EXPECT_EQ(target_distance(cloud, std::vector<double>{2.1, 0.1}), 0.0);
}

TEST(TargetSet, RejectsInvalidPrimitives) {
  EXPECT_THROW(TargetSet(2, {}), InvalidArgument);
  EXPECT_THROW(TargetSet(2, {Ball{{0.0}, 1.0}}), InvalidArgument);
  EXPECT_THROW(TargetSet(2, {Ball{{0.0, 0.0}, -1.0}}), InvalidArgument);
  EXPECT_THROW(TargetSet(2, {Box{{1.0, 0.0}, {0.0, 1.0}}}), InvalidArgument);
  EXPECT_THROW(TargetSet(2, {PointCloud{{0.0, 0.0, 1.0}, 0.0}}), InvalidArgument);
}

TEST(PsiTBounds, FormulaValues) {
  const auto at_origin = TargetSet::point({0.0, 0.0});
  const auto b = psi_T_bounds(at_origin, 0.5, 2.0, 1.0);
  EXPECT_DOUBLE_EQ(b.exit_time, 2.0);
  EXPECT_DOUBLE_EQ(b.radius, 1.0 + 2.0 * 2.0);
  const auto away = TargetSet::point({1.0, 0.0});
  EXPECT_DOUBLE_EQ(psi_T_bounds(away, 1.0, 1.0, 0.0).exit_time, 1.0);
  EXPECT_THROW(psi_T_bounds(away, 0.0, 1.0, 1.0), InvalidArgument);
  EXPECT_THROW(psi_T_bounds(away, -1.0, 1.0, 1.0), InvalidArgument);
}

TEST(PsiTBounds, MonotoneWithLinearGrowth) {
  const TargetSet g(2, {Ball{{2.0, 1.0}, 0.5}, Box{{-3.0, -3.0}, {-2.0, -2.5}}});
  const double kmin = 0.3, kmax = 1.7;
  auto prev = psi_T_bounds(g, kmin, kmax, 0.0);
  for (int i = 1; i <= 50; ++i) {
    const double r0 = 0.1 * (i - 1), r1 = 0.1 * i;
    const auto cur = psi_T_bounds(g, kmin, kmax, r1);
    EXPECT_GE(cur.exit_time, prev.exit_time);
    EXPECT_GE(cur.radius, prev.radius);
    EXPECT_LE(cur.exit_time - prev.exit_time, (r1 - r0) / kmin + 1e-12);
    EXPECT_LE(cur.radius - prev.radius, (r1 - r0) * (1.0 + kmax / kmin) + 1e-12);
    prev = cur;
  }
}

TEST(PhiSupportProfile, Examples) {
  const auto inside = EmpiricalMeasure::uniform(2, {0.1, 0.2, -0.5, 0.5});
  EXPECT_EQ(phi_support_profile(std::vector<EmpiricalMeasure>{inside}, 1.0), 1.0);
  const auto half = EmpiricalMeasure::uniform(2, {0.0, 0.0, 5.0, 0.0});
  EXPECT_DOUBLE_EQ(phi_support_profile(std::vector<EmpiricalMeasure>{half}, 1.0), 0.5);
  const auto off = EmpiricalMeasure::uniform(2, {0.3, 0.0, 0.0, 0.4});
  EXPECT_EQ(phi_support_profile(std::vector<EmpiricalMeasure>{off}, 0.0), 0.0);
}

TEST(PhiSupportProfile, NondecreasingAndReachesOne) {
  std::mt19937_64 rng(4);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<EmpiricalMeasure> m0;
  for (int i = 0; i < 3; ++i) {
    std::vector<double> pts(60);
    for (auto& v : pts) v = g(rng);
    m0.push_back(EmpiricalMeasure::uniform(2, pts));
  }
  double prev = 0.0, rmax = 0.0;
  for (const auto& m : m0) rmax = std::max(rmax, m.support_radius());
  for (int i = 0; i <= 100; ++i) {
    const double v = phi_support_profile(m0, 0.05 * i);
    EXPECT_GE(v, prev);
    prev = v;
  }
  EXPECT_EQ(phi_support_profile(m0, rmax), 1.0);
}

TEST(EmpiricalMeasure, Validation) {
  EXPECT_THROW(EmpiricalMeasure(2, {0.0, 0.0, 1.0, 1.0}, {0.5, 0.4}), InvalidArgument);
  EXPECT_THROW(EmpiricalMeasure(2, {0.0, 0.0, 1.0, 1.0}, {1.5, -0.5}), InvalidArgument);
  EXPECT_THROW(EmpiricalMeasure(2, {0.0, 0.0, 1.0}, {0.5, 0.5}), InvalidArgument);
  EXPECT_NO_THROW(EmpiricalMeasure(2, {0.0, 0.0, 1.0, 1.0}, {0.5, 0.5}));
  EXPECT_TRUE(EmpiricalMeasure::empty(2).is_empty());
  const auto u = EmpiricalMeasure::uniform(1, {0.0, 1.0, 2.0});
  EXPECT_NEAR(u.total_mass(), 1.0, 1e-15);
}

TEST(SpaceTimeGrid, Layout) {
  const SpaceTimeGrid g({-1.0, -0.5}, {1.0, 0.5}, 0.1, 0.05, 1.0);
  EXPECT_EQ(g.count(0), 21u);
  EXPECT_EQ(g.count(1), 11u);
  EXPECT_EQ(g.n_nodes(), 231u);
  EXPECT_EQ(g.steps(), 20u);
  EXPECT_NEAR(g.t_max(), 1.0, 1e-12);
  const auto x = g.node_point(1 * g.stride(0) + 3);
  EXPECT_NEAR(x[0], -0.9, 1e-12);
  EXPECT_NEAR(x[1], -0.2, 1e-12);
  EXPECT_NEAR(g.inner_radius(), 0.5, 1e-12);
  EXPECT_THROW(SpaceTimeGrid({0.0}, {1.0}, 0.0, 0.1, 1.0), InvalidArgument);
  EXPECT_THROW(SpaceTimeGrid({0.0}, {1.0}, 0.1, 0.1, 0.01), InvalidArgument);
}

TEST(SpaceTimeGrid, InterpolationReproducesAffineFunctions) {
  const SpaceTimeGrid g({-1.0, -1.0}, {1.0, 1.0}, 0.25, 0.1, 1.0);
  std::vector<double> f(g.n_nodes());
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    const auto x = g.node_point(i);
    f[i] = 2.0 * x[0] - 3.0 * x[1] + 0.5;
  }
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  for (int s = 0; s < 100; ++s) {
    const double x[2] = {u(rng), u(rng)};
    EXPECT_NEAR(g.interpolate(f, x), 2.0 * x[0] - 3.0 * x[1] + 0.5, 1e-12);
  }
  const double out[2] = {1.5, 0.0};
  EXPECT_EQ(g.interpolate(f, out), kInf);
}

TEST(PolylineTrajectory, Invariants) {
  // Moves before its start step.
  EXPECT_THROW(PolylineTrajectory(1, 0.1, 1, {0.0, 1.0, 1.0}, kInf), InvalidArgument);
  // Moves after its exit.
  EXPECT_THROW(PolylineTrajectory(1, 0.1, 0, {0.0, 0.1, 0.2}, 0.1), InvalidArgument);
  const PolylineTrajectory tr(1, 0.1, 1, {0.0, 0.0, 0.1, 0.2, 0.2}, 0.2);
  EXPECT_NEAR(tr.t0(), 0.1, 1e-15);
  EXPECT_NEAR(tr.position_at(0.25)[0], 0.15, 1e-12);
  EXPECT_EQ(tr.position_at(10.0)[0], 0.2);
  EXPECT_TRUE(is_admissible(tr, 1.0));
  EXPECT_FALSE(is_admissible(tr, 0.9));
}
