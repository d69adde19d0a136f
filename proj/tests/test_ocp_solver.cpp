#include <gtest/gtest.h>

#include <chrono>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "mtmfg/ocp_solver.hpp"
#include "oracles.hpp"

using namespace mtmfg;

namespace {

std::span<const double> sp(const Coord& x, std::size_t d = 2) { return {x.data(), d}; }

double varying_k(std::span<const double> x) { return 1.0 + 0.5 * std::sin(x[0]) * std::sin(x[1]); }

struct Analytic {
  SpaceTimeGrid grid{{-1.0, -1.0}, {1.0, 1.0}, 0.02, 0.02, 2.0};
  TargetSet target = TargetSet::point({0.0, 0.0});
  ConstantSpeed k{1.0};
  ValueField phi = solve_value_function(k, target, grid);
};

const Analytic& analytic() {
  static const Analytic a;
  return a;
}

}  // namespace

TEST(SolveValueFunction, AnalyticEikonalWithinBudget) {
  const auto start = std::chrono::steady_clock::now();
  const Analytic a;
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const auto& g = a.grid;
  double err = 0.0;
  for (std::size_t i = 0; i < g.n_nodes(); ++i) {
    const Coord x = g.node_point(i);
    ASSERT_TRUE(std::isfinite(a.phi.at(0, i)));
    err = std::max(err, std::abs(a.phi.at(0, i) - norm(sp(x))));
  }
  EXPECT_LE(err, 3.0 * (g.h() + g.dt()));
  EXPECT_LE(secs, 10.0);
  EXPECT_TRUE(a.phi.stationary_converged());
}

TEST(SolveValueFunction, TargetNodesAreZeroAtAllTimes) {
  const auto& a = analytic();
  for (std::size_t i = 0; i < a.grid.n_nodes(); ++i) {
    if (!a.phi.on_target(i)) continue;
    for (std::size_t k = 0; k < a.grid.n_times(); ++k) EXPECT_EQ(a.phi.at(k, i), 0.0);
  }
}

TEST(SolveValueFunction, BoundedByExitTimeProfile) {
  const auto& a = analytic();
  const double kmin = 1.0, kmax = 1.0;
  for (std::size_t k = 0; k < a.grid.n_times(); k += 17)
    for (std::size_t i = 0; i < a.grid.n_nodes(); ++i) {
      const Coord x = a.grid.node_point(i);
      const double r = norm(sp(x));
      if (!a.phi.box_certified(r)) continue;
      EXPECT_LE(a.phi.at(k, i), psi_T_bounds(a.target, kmin, kmax, r).exit_time + a.grid.dt());
    }
}

TEST(SolveValueFunction, MatchesDijkstraOnVaryingSpeed) {
  const double h = 0.1;
  const SpaceTimeGrid grid({-2.0, -2.0}, {2.0, 2.0}, h, h / 1.5, 1.0);
  ASSERT_EQ(grid.count(0), 41u);
  const FunctionSpeed k{varying_k, 1.5, 0.5};
  const auto phi = solve_value_function(k, TargetSet::point({0.0, 0.0}), grid);
  const auto oracle_dist = oracle::dijkstra_grid(41, 41, -2.0, -2.0, h, {20 * 41 + 20}, [](double x, double y) {
    const double p[2] = {x, y};
    return varying_k(p);
  });
  double err = 0.0;
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) err = std::max(err, std::abs(phi.at(0, i) - oracle_dist[i]));
  EXPECT_LE(err, 5.0 * (grid.h() + grid.dt()));
}

TEST(SolveValueFunction, RejectsCflViolationAndEmptyTarget) {
  const SpaceTimeGrid grid({-1.0, -1.0}, {1.0, 1.0}, 0.1, 0.1, 1.0);
  EXPECT_THROW(solve_value_function(ConstantSpeed{2.0}, TargetSet::point({0.0, 0.0}), grid), CflViolation);
  EXPECT_THROW(solve_value_function(ConstantSpeed{1.0}, TargetSet::point({5.0, 0.0}), grid), InvalidArgument);
}

TEST(StationarySolve, ConstantSpeedScalesDistance) {
  const SpaceTimeGrid grid({-1.0, -1.0}, {1.0, 1.0}, 0.05, 0.05, 0.05);
  const double c = 0.5;
  // dt = h is only allowed for c <= 1; c < 1 shortens the step.
  const auto phi = solve_value_function(ConstantSpeed{c}, TargetSet::point({0.0, 0.0}), grid);
  for (std::size_t i = 0; i < grid.n_nodes(); ++i)
    EXPECT_NEAR(phi.at(grid.steps(), i), norm(sp(grid.node_point(i))) / c, 3.0 * (grid.h() + grid.dt()) / c);
}

TEST(StationarySolve, FullBoxTargetIsZero) {
  const SpaceTimeGrid grid({-1.0, -1.0}, {1.0, 1.0}, 0.1, 0.1, 0.1);
  const TargetSet all(2, {Box{{-1.0, -1.0}, {1.0, 1.0}}});
  const auto phi = solve_value_function(ConstantSpeed{1.0}, all, grid);
  for (double v : phi.values()) EXPECT_EQ(v, 0.0);
}

TEST(StationarySolve, UnitCircleFromInside) {
  const SpaceTimeGrid grid({-1.2, -1.2}, {1.2, 1.2}, 0.04, 0.04, 0.04);
  std::vector<double> circle;
  for (int j = 0; j < 720; ++j) {
    const double th = 2.0 * std::numbers::pi * j / 720.0;
    circle.insert(circle.end(), {std::cos(th), std::sin(th)});
  }
  const TargetSet ring(2, {PointCloud{circle, 0.0}});
  const auto phi = solve_value_function(ConstantSpeed{1.0}, ring, grid);
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
    const double r = norm(sp(grid.node_point(i)));
    if (r < 1.0) {
      EXPECT_NEAR(phi.at(0, i), 1.0 - r, 3.0 * (grid.h() + grid.dt()));
    }
  }
}

TEST(DescentDirections, AnalyticFieldPointsAtTarget) {
  const SpaceTimeGrid grid({-2.0, -2.0}, {2.0, 2.0}, 0.05, 0.05, 1.0);
  const ConstantSpeed k{1.0};
  const auto phi = solve_value_function(k, TargetSet::point({0.0, 0.0}), grid);
  const std::vector<double> x{1.0, 0.0};
  const auto ds = descent_directions(phi, k, 0.0, x);
  ASSERT_FALSE(ds.empty());
  EXPECT_TRUE(ds.unique);
  EXPECT_NEAR(ds.directions[ds.argmin][0], -1.0, 1e-12);
  EXPECT_NEAR(ds.min_ratio, -1.0, 0.05);
  for (double r : ds.ratios) EXPECT_GE(r, -1.0 - 0.05);
  const auto g = normalized_gradient(phi, k, 0.0, std::vector<double>{0.0, 1.0});
  ASSERT_TRUE(g.has_value());
  EXPECT_NEAR((*g)[0], 0.0, 0.02);
  EXPECT_NEAR((*g)[1], 1.0, 1e-3);
}

TEST(DescentDirections, OnTargetIsEmpty) {
  const auto& a = analytic();
  const std::vector<double> x{0.0, 0.0};
  EXPECT_TRUE(descent_directions(a.phi, a.k, 0.0, x).empty());
  EXPECT_THROW(normalized_gradient(a.phi, a.k, 0.0, x), InvalidArgument);
}

TEST(DescentDirections, SymmetricTargetsGiveTwoMirrorDirections) {
  const SpaceTimeGrid grid({-1.0, -1.0}, {1.0, 1.0}, 0.05, 0.05, 0.5);
  const ConstantSpeed k{1.0};
  const TargetSet two(2, {PointCloud{{-0.5, 0.0, 0.5, 0.0}, 0.0}});
  const auto phi = solve_value_function(k, two, grid);
  const std::vector<double> x{0.0, 0.5};
  const auto ds = descent_directions(phi, k, 0.0, x);
  EXPECT_FALSE(ds.unique);
  EXPECT_GT(ds.diameter, std::numbers::pi / 3.0);
  bool left = false, right = false;
  for (auto j : ds.selected) {
    const auto& u = ds.directions[j];
    EXPECT_LT(u[1], 0.0);
    if (u[0] < -0.5) left = true;
    if (u[0] > 0.5) right = true;
    // Mirror image is selected too.
    bool mirrored = false;
    for (auto i : ds.selected)
      if (std::abs(ds.directions[i][0] + u[0]) < 1e-9 && std::abs(ds.directions[i][1] - u[1]) < 1e-9) mirrored = true;
    EXPECT_TRUE(mirrored);
  }
  EXPECT_TRUE(left && right);
  EXPECT_FALSE(normalized_gradient(phi, k, 0.0, x).has_value());
}

TEST(TraceOptimalTrajectory, StraightSegmentToOrigin) {
  const auto& a = analytic();
  const std::vector<double> x0{0.8, 0.0};
  const auto tr = trace_optimal_trajectory(a.phi, a.k, a.target, 0.0, x0);
  ASSERT_TRUE(tr.exited());
  EXPECT_NEAR(tr.exit_time(), 0.8, 3.0 * (a.grid.h() + a.grid.dt()));
  for (std::size_t k = 0; k < tr.n_nodes(); ++k) EXPECT_NEAR(tr.node(k)[1], 0.0, 1e-9);
  EXPECT_TRUE(is_admissible(tr, 1.0));
  EXPECT_EQ(tr.n_nodes(), a.grid.n_times());
}

TEST(TraceOptimalTrajectory, OnTargetStartIsConstant) {
  const auto& a = analytic();
  const std::vector<double> x0{0.01, 0.0};
  const auto tr = trace_optimal_trajectory(a.phi, a.k, a.target, 0.0, x0);
  EXPECT_EQ(tr.exit_time(), 0.0);
  EXPECT_EQ(tr.max_step(), 0.0);
}

TEST(TraceOptimalTrajectory, LateStartIsConstantBeforeT0) {
  const auto& a = analytic();
  const std::vector<double> x0{-0.3, 0.4};
  const auto tr = trace_optimal_trajectory(a.phi, a.k, a.target, 0.5, x0);
  EXPECT_NEAR(tr.t0(), 0.5, 1e-12);
  EXPECT_EQ(tr.node(0)[0], -0.3);
  EXPECT_EQ(tr.node(tr.start_step())[0], -0.3);
  EXPECT_NEAR(tr.exit_time(), 0.5, 3.0 * (a.grid.h() + a.grid.dt()));
}

TEST(TraceOptimalTrajectory, DppEqualityAlongPathAndBoundedGap) {
  const auto& a = analytic();
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  const double tol = 2.0 * (a.grid.h() + a.grid.dt());
  for (int s = 0; s < 20; ++s) {
    const std::vector<double> x0{u(rng), u(rng)};
    const auto tr = trace_optimal_trajectory(a.phi, a.k, a.target, 0.0, x0);
    ASSERT_TRUE(tr.exited());
    const auto steps = static_cast<std::size_t>(std::llround(tr.exit_time() / a.grid.dt()));
    for (std::size_t k = 0; k < steps; ++k) {
      const double now = a.phi.value_at(a.grid.time(k), tr.node(k));
      const double next = a.phi.value_at(a.grid.time(k + 1), tr.node(k + 1));
      EXPECT_LE(std::abs(next - now + a.grid.dt()), tol);
    }
    const double v0 = a.phi.value_at(0.0, x0);
    EXPECT_LE(tr.exit_time() - v0, 5.0 * (a.grid.h() + a.grid.dt()) * (1.0 + v0));
    // Stays within the psi-ball of its start.
    const double r0 = norm(x0);
    const double psi = psi_T_bounds(a.target, 1.0, 1.0, r0).radius;
    for (std::size_t k = 0; k < tr.n_nodes(); ++k) EXPECT_LE(norm(tr.node(k)), psi + 1e-12);
  }
}

TEST(ValueFunction, DppInequalityForRandomOneSteps) {
  const auto& a = analytic();
  std::mt19937_64 rng(14);
  std::uniform_real_distribution<double> u(-0.95, 0.95), ang(0.0, 2.0 * std::numbers::pi);
  std::uniform_int_distribution<std::size_t> kk(0, a.grid.steps() - 1);
  for (int s = 0; s < 300; ++s) {
    const std::vector<double> x{u(rng), u(rng)};
    const double th = ang(rng), t = a.grid.time(kk(rng));
    const std::vector<double> y{x[0] + a.grid.dt() * std::cos(th), x[1] + a.grid.dt() * std::sin(th)};
    if (!a.grid.inside(y)) continue;
    EXPECT_GE(a.phi.value_at(t + a.grid.dt(), y) + a.grid.dt(),
              a.phi.value_at(t, x) - 2.0 * (a.grid.h() + a.grid.dt()));
  }
}

TEST(ValueFunction, TimeDependentFieldHasBoundedTimeQuotients) {
  // Speed rises from 0.5 to 1 over the first second.
  const SpaceTimeGrid grid({-1.0, -1.0}, {1.0, 1.0}, 0.04, 0.04, 2.0);
  struct Ramp {
    double speed(double t, std::span<const double>) const { return 0.5 + 0.5 * std::min(t, 1.0); }
    double max_speed() const { return 1.0; }
    double min_speed() const { return 0.5; }
  };
  const auto phi = solve_value_function(Ramp{}, TargetSet::point({0.0, 0.0}), grid);
  double min_q = kInf;
  for (std::size_t i = 0; i < grid.n_nodes(); i += 3) {
    if (phi.on_target(i)) continue;
    for (std::size_t k = 0; k + 5 < grid.n_times(); k += 5) {
      const double q = (phi.at(k + 5, i) - phi.at(k, i)) / (5.0 * grid.dt());
      min_q = std::min(min_q, q);
    }
  }
  // Faster later means waiting costs less than one second per second.
  EXPECT_GT(min_q + 1.0, 0.0);
  EXPECT_LE(min_q, 0.0);
  // At t = 0 the value exceeds the frozen-speed answer |x|.
  const Coord x = grid.node_point(0);
  EXPECT_GT(phi.at(0, 0), norm(sp(x)));
}

TEST(ValueFieldExport, CsvAndBinaryLayout) {
  const SpaceTimeGrid grid({0.0}, {1.0}, 0.5, 0.5, 0.5);
  const auto phi = solve_value_function(ConstantSpeed{1.0}, TargetSet::point({0.0}), grid);
  std::ostringstream csv;
  phi.write_csv(csv);
  EXPECT_EQ(csv.str(), "t,x0,phi\n0,0,0\n0,0.5,0\n0,1,0.5\n0.5,0,0\n0.5,0.5,0\n0.5,1,0.5\n");
  std::ostringstream bin;
  phi.write_binary(bin);
  const std::string s = bin.str();
  EXPECT_EQ(s.substr(0, 8), "MTMFGVF1");
  EXPECT_EQ(s.size(), 8u + 8 + 8 + 8 + 8 + 8 + 8 + 6 * 8);
}
