#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "mtmfg/transport.hpp"
#include "oracles.hpp"

using namespace mtmfg;

namespace {

EmpiricalMeasure make(std::size_t d, std::vector<double> pts, std::vector<double> w) {
  return EmpiricalMeasure(d, std::move(pts), std::move(w));
}

void expect_marginals(const TransportPlan& plan, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  std::vector<double> a(mu.size(), 0.0), b(nu.size(), 0.0);
  for (const auto& p : plan.pairs) {
    EXPECT_GE(p.mass, 0.0);
    a[p.source] += p.mass;
    b[p.target] += p.mass;
  }
  for (std::size_t i = 0; i < mu.size(); ++i) EXPECT_NEAR(a[i], mu.weight(i), 1e-10);
  for (std::size_t j = 0; j < nu.size(); ++j) EXPECT_NEAR(b[j], nu.weight(j), 1e-10);
}

PolylineTrajectory moving_right(double speed, double dt, std::size_t steps) {
  std::vector<double> pts;
  for (std::size_t k = 0; k <= steps; ++k) {
    pts.push_back(speed * dt * static_cast<double>(k));
    pts.push_back(0.0);
  }
  return PolylineTrajectory(2, dt, 0, pts, kInf);
}

}  // namespace

TEST(Wasserstein, SinglePairIsEuclideanDistance) {
  const auto mu = EmpiricalMeasure::dirac(std::vector<double>{0.0, 0.0});
  const auto nu = EmpiricalMeasure::dirac(std::vector<double>{3.0, 4.0});
  EXPECT_NEAR(wasserstein(mu, nu, 2.0).distance, 5.0, 1e-14);
  EXPECT_NEAR(wasserstein(mu, nu, 1.0).distance, 5.0, 1e-14);
}

TEST(Wasserstein, IdenticalMeasuresAreAtDistanceZero) {
  std::mt19937_64 rng(3);
  const auto pts = oracle::random_points(rng, 7, 2);
  const auto mu = make(2, pts, oracle::random_weights(rng, 7));
  const auto r = wasserstein(mu, mu, 2.0);
  EXPECT_NEAR(r.distance, 0.0, 1e-7);
  EXPECT_NEAR(r.plan.cost, 0.0, 1e-14);
  expect_marginals(r.plan, mu, mu);
}

TEST(Wasserstein, FourAtomsSeed17MatchesPermutationOracle) {
  std::mt19937_64 rng(17);
  const auto x = oracle::random_points(rng, 4, 2);
  const auto y = oracle::random_points(rng, 4, 2);
  const auto mu = EmpiricalMeasure::uniform(2, x);
  const auto nu = EmpiricalMeasure::uniform(2, y);
  for (double p : {1.0, 2.0}) {
    const double expected = std::pow(oracle::permutation_wasserstein_cost(x, y, 2, p), 1.0 / p);
    const auto r = wasserstein(mu, nu, p);
    EXPECT_NEAR(r.distance, expected, 1e-9);
    expect_marginals(r.plan, mu, nu);
  }
}

TEST(Wasserstein, RandomEqualWeightInstancesMatchPermutationOracle) {
  std::mt19937_64 rng(101);
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t n = 2 + static_cast<std::size_t>(inst % 5);
    const std::size_t d = 1 + static_cast<std::size_t>(inst % 3);
    const double p = inst % 2 == 0 ? 1.0 : 2.0;
    const auto x = oracle::random_points(rng, n, d);
    const auto y = oracle::random_points(rng, n, d);
    const double expected = std::pow(oracle::permutation_wasserstein_cost(x, y, d, p), 1.0 / p);
    const auto r = wasserstein(EmpiricalMeasure::uniform(d, x), EmpiricalMeasure::uniform(d, y), p);
    EXPECT_NEAR(r.distance, expected, 1e-9) << "instance " << inst;
  }
}

TEST(Wasserstein, OneDimensionalMatchesQuantileOracle) {
  std::mt19937_64 rng(5);
  for (int inst = 0; inst < 50; ++inst) {
    const std::size_t n = 3 + static_cast<std::size_t>(inst % 20);
    const std::size_t m = 2 + static_cast<std::size_t>((inst * 7) % 25);
    const auto xs = oracle::random_points(rng, n, 1, -2.0, 2.0);
    const auto ys = oracle::random_points(rng, m, 1, -1.0, 3.0);
    const auto xw = oracle::random_weights(rng, n);
    const auto yw = oracle::random_weights(rng, m);
    const auto r = wasserstein(make(1, xs, xw), make(1, ys, yw), 1.0);
    EXPECT_NEAR(r.distance, oracle::quantile_w1(xs, xw, ys, yw), 1e-10) << "instance " << inst;
    expect_marginals(r.plan, make(1, xs, xw), make(1, ys, yw));
  }
}

TEST(Wasserstein, PointsOnACommonLineInThePlaneMatchQuantileOracle) {
  std::mt19937_64 rng(8);
  const double c = std::cos(0.7), s = std::sin(0.7);
  for (int inst = 0; inst < 20; ++inst) {
    const auto xs = oracle::random_points(rng, 12, 1);
    const auto ys = oracle::random_points(rng, 9, 1);
    const auto xw = oracle::random_weights(rng, 12);
    const auto yw = oracle::random_weights(rng, 9);
    std::vector<double> x2, y2;
    for (double t : xs) x2.insert(x2.end(), {1.0 + c * t, -0.5 + s * t});
    for (double t : ys) y2.insert(y2.end(), {1.0 + c * t, -0.5 + s * t});
    const auto r = wasserstein(make(2, x2, xw), make(2, y2, yw), 1.0);
    EXPECT_NEAR(r.distance, oracle::quantile_w1(xs, xw, ys, yw), 1e-10);
  }
}

TEST(Wasserstein, MetricAxiomsOnRandomTriples) {
  std::mt19937_64 rng(23);
  for (int inst = 0; inst < 100; ++inst) {
    const double p = 1.0 + static_cast<double>(inst % 3) * 0.5;
    std::vector<EmpiricalMeasure> ms;
    for (int k = 0; k < 3; ++k) {
      const std::size_t n = 2 + static_cast<std::size_t>((inst + k) % 6);
      ms.push_back(make(2, oracle::random_points(rng, n, 2), oracle::random_weights(rng, n)));
    }
    const double ab = wasserstein(ms[0], ms[1], p).distance;
    const double ba = wasserstein(ms[1], ms[0], p).distance;
    const double bc = wasserstein(ms[1], ms[2], p).distance;
    const double ac = wasserstein(ms[0], ms[2], p).distance;
    EXPECT_NEAR(ab, ba, 1e-9);
    EXPECT_LE(ac, ab + bc + 1e-9);
    EXPECT_GE(ab, 0.0);
  }
}

TEST(Wasserstein, DualPotentialsCertifyOptimality) {
  std::mt19937_64 rng(31);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t n = 5 + static_cast<std::size_t>(inst % 30), m = 4 + static_cast<std::size_t>(inst % 17);
    const auto x = oracle::random_points(rng, n, 2);
    const auto y = oracle::random_points(rng, m, 2);
    const auto a = oracle::random_weights(rng, n);
    const auto b = oracle::random_weights(rng, m);
    std::vector<double> cost(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j)
        cost[i * m + j] = distance(std::span<const double>(x).subspan(2 * i, 2),
                                   std::span<const double>(y).subspan(2 * j, 2));
    detail::TransportSimplex solver(a, b, cost);
    solver.run();
    const auto u = solver.source_potentials();
    const auto v = solver.target_potentials();
    double dual = 0.0;
    for (std::size_t i = 0; i < n; ++i) dual += a[i] * u[i];
    for (std::size_t j = 0; j < m; ++j) dual += b[j] * v[j];
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) EXPECT_GE(cost[i * m + j] - u[i] - v[j], -1e-9);
    for (const auto& f : solver.flows())
      EXPECT_NEAR(cost[f.source * m + f.target] - u[f.source] - v[f.target], 0.0, 1e-9);
    EXPECT_NEAR(dual, solver.total_cost(), 1e-9);
  }
}

TEST(Wasserstein, LargerInstanceHasFeasiblePlan) {
  std::mt19937_64 rng(2);
  const auto mu = make(2, oracle::random_points(rng, 300, 2), oracle::random_weights(rng, 300));
  const auto nu = make(2, oracle::random_points(rng, 250, 2), oracle::random_weights(rng, 250));
  const auto r = wasserstein(mu, nu, 1.0);
  expect_marginals(r.plan, mu, nu);
  EXPECT_GT(r.distance, 0.0);
}

TEST(Wasserstein, RejectsBadInput) {
  const auto mu = EmpiricalMeasure::dirac(std::vector<double>{0.0, 0.0});
  const auto nu = EmpiricalMeasure::dirac(std::vector<double>{1.0});
  EXPECT_THROW(wasserstein(mu, nu, 1.0), InvalidArgument);
  EXPECT_THROW(wasserstein(mu, mu, 0.5), InvalidArgument);
}

TEST(W1Distance, CancellationAgreesWithFullProblem) {
  std::mt19937_64 rng(44);
  for (int inst = 0; inst < 30; ++inst) {
    const std::size_t n = 20;
    auto x = oracle::random_points(rng, n, 2);
    auto y = x;
    // Move a few atoms; the rest coincide.
    for (std::size_t i = 0; i < 2 * n; i += 7) y[i] += 0.3;
    const auto w = oracle::random_weights(rng, n);
    WeightedPoints a{2, x, w}, b{2, y, w};
    const double full = wasserstein(make(2, x, w), make(2, y, w), 1.0).distance;
    EXPECT_NEAR(w1_distance(a, b), full, 1e-10);
  }
}

TEST(Pushforward, StationaryBundleReturnsInitialMeasure) {
  std::mt19937_64 rng(9);
  const auto pts = oracle::random_points(rng, 5, 2);
  const auto w = oracle::random_weights(rng, 5);
  TrajectoryBundle q;
  for (std::size_t i = 0; i < 5; ++i) {
    q.trajectories.push_back(
        PolylineTrajectory::stationary(std::span<const double>(pts).subspan(2 * i, 2), 0.1, 20, kInf));
    q.weights.push_back(w[i]);
    q.sources.push_back(i);
  }
  for (double t : {0.0, 0.37, 1.0, 2.0}) {
    const auto m = pushforward_at(q, t);
    EXPECT_EQ(m.coords(), pts);
    EXPECT_EQ(m.weights(), w);
  }
  EXPECT_THROW(pushforward_at(q, 2.5), InvalidArgument);
  EXPECT_THROW(pushforward_at(q, -0.1), InvalidArgument);
}

TEST(Pushforward, MovingAtomIsInterpolated) {
  TrajectoryBundle q{{moving_right(1.0, 0.1, 10)}, {1.0}, {0}};
  const auto m = pushforward_at(q, 0.55);
  EXPECT_NEAR(m.point(0)[0], 0.55, 1e-14);
  EXPECT_EQ(m.point(0)[1], 0.0);
  EXPECT_EQ(pushforward_at(q, 0.0).point(0)[0], 0.0);
}

TEST(Pushforward, FlowIsLipschitzInTime) {
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> ang(0.0, 2.0 * M_PI), sp(0.0, 1.0);
  TrajectoryBundle q;
  const double dt = 0.05;
  for (std::size_t j = 0; j < 12; ++j) {
    const double th = ang(rng), s = sp(rng);
    std::vector<double> pts;
    double x = 0.0, y = 0.0;
    for (std::size_t k = 0; k <= 40; ++k) {
      pts.insert(pts.end(), {x, y});
      x += dt * s * std::cos(th + 0.1 * static_cast<double>(k));
      y += dt * s * std::sin(th + 0.1 * static_cast<double>(k));
    }
    q.trajectories.emplace_back(2, dt, 0, pts, kInf);
    q.weights.push_back(1.0 / 12.0);
    q.sources.push_back(j);
  }
  q.weights.back() = 1.0 - 11.0 / 12.0;
  for (int s = 0; s < 20; ++s) {
    const double t0 = 0.1 * s, t1 = t0 + 0.013 * (s + 1);
    const double w = wasserstein(pushforward_at(q, t0), pushforward_at(q, std::min(t1, 2.0)), 1.0).distance;
    EXPECT_LE(w, 1.0 * std::abs(std::min(t1, 2.0) - t0) + 1e-12);
  }
}

TEST(TrajectoryMetric, BasicProperties) {
  const double dt = 0.1;
  const auto a = PolylineTrajectory::stationary(std::vector<double>{0.0, 0.0}, dt, 30, kInf);
  const auto b = PolylineTrajectory::stationary(std::vector<double>{0.3, 0.4}, dt, 30, kInf);
  EXPECT_EQ(trajectory_metric(a, a), 0.0);
  // Constant paths: s_n = c for all n, so the series sums to c/(1+c).
  EXPECT_NEAR(trajectory_metric(a, b), 0.5 / 1.5, 1e-15);
  EXPECT_EQ(trajectory_metric(a, b), trajectory_metric(b, a));
  const auto c = moving_right(1.0, dt, 30);
  EXPECT_LT(trajectory_metric(a, c), 1.0);
  EXPECT_NEAR(trajectory_metric_tail_bound(3.0), 0.125, 0.0);
  const auto other = PolylineTrajectory::stationary(std::vector<double>{0.0, 0.0}, dt, 20, kInf);
  EXPECT_THROW(trajectory_metric(a, other), InvalidArgument);
}

TEST(TrajectoryMetric, SymmetricOnRandomPairs) {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g(0.0, 0.05);
  for (int inst = 0; inst < 20; ++inst) {
    std::vector<double> p1, p2;
    double a = 0.0, b = 0.0;
    for (int k = 0; k <= 25; ++k) {
      p1.insert(p1.end(), {a, -a});
      p2.insert(p2.end(), {b, 2.0 * b});
      a += g(rng);
      b += g(rng);
    }
    const PolylineTrajectory t1(2, 0.1, 0, p1, kInf), t2(2, 0.1, 0, p2, kInf);
    const double d12 = trajectory_metric(t1, t2);
    EXPECT_EQ(d12, trajectory_metric(t2, t1));
    EXPECT_GE(d12, 0.0);
    EXPECT_LT(d12, 1.0);
  }
}

TEST(TransportPlan, CsvExport) {
  TransportPlan plan{{{0, 1, 0.25}, {1, 0, 0.75}}, 1.0};
  std::ostringstream os;
  write_plan_csv(os, plan);
  EXPECT_EQ(os.str(), "source,target,mass\n0,1,0.25\n1,0,0.75\n");
}
