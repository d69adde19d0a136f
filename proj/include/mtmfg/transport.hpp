#pragma once

// Exact discrete Wasserstein distances, pushforwards of trajectory bundles
// under evaluation maps, and the metric on continuous paths.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstring>
#include <map>
#include <ostream>
#include <span>
#include <vector>

#include "mtmfg/core_model.hpp"
#include "mtmfg/error.hpp"
#include "mtmfg/network_simplex.hpp"

namespace mtmfg {

struct TransportPair {
  std::size_t source;
  std::size_t target;
  double mass;
};

struct TransportPlan {
  std::vector<TransportPair> pairs;
  double cost = 0.0;  // total p-cost, i.e. W_p^p
};

struct WassersteinResult {
  double distance = 0.0;
  TransportPlan plan;
};

namespace detail {

inline double pcost(std::span<const double> x, std::span<const double> y, double p) {
  const double d = distance(x, y);
  if (p == 1.0) return d;
  if (p == 2.0) return d * d;
  return std::pow(d, p);
}

}  // namespace detail

/// Exact W_p between two particle measures by network simplex.
inline WassersteinResult wasserstein(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu,
                                     double p) {
  if (!(p >= 1.0)) throw InvalidArgument("wasserstein: order p must be at least 1");
  if (mu.dim() != nu.dim()) throw InvalidArgument("wasserstein: dimension mismatch");
  if (mu.is_empty() || nu.is_empty()) throw InvalidArgument("wasserstein: empty measure");
  const std::size_t n = mu.size(), m = nu.size();
  WassersteinResult out;
  if (n == 1 || m == 1) {
    // Only one coupling exists.
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) {
        const double mass = n == 1 ? nu.weight(j) : mu.weight(i);
        if (mass <= 0.0) continue;
        out.plan.pairs.push_back({i, j, mass});
        out.plan.cost += mass * detail::pcost(mu.point(i), nu.point(j), p);
      }
  } else {
    std::vector<double> cost(n * m);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) cost[i * m + j] = detail::pcost(mu.point(i), nu.point(j), p);
    detail::TransportSimplex solver(mu.weights(), nu.weights(), cost);
    solver.run();
    for (const auto& f : solver.flows()) out.plan.pairs.push_back({f.source, f.target, f.mass});
    out.plan.cost = solver.total_cost();
  }
  out.distance = std::pow(std::max(out.plan.cost, 0.0), 1.0 / p);
  return out;
}

namespace detail {

struct CoordKey {
  Coord c;
  bool operator<(const CoordKey& o) const {
    return std::memcmp(c.data(), o.c.data(), sizeof(double) * kMaxDim) < 0;
  }
};

}  // namespace detail

/// Atoms with their weights; duplicates allowed, mass need not be one.
struct WeightedPoints {
  std::size_t dim = 0;
  std::vector<double> coords;
  std::vector<double> weights;

  std::size_t size() const { return weights.size(); }
  std::span<const double> point(std::size_t i) const {
    return std::span<const double>(coords).subspan(i * dim, dim);
  }
  void push(std::span<const double> x, double w) {
    coords.insert(coords.end(), x.begin(), x.end());
    weights.push_back(w);
  }
};

/// Exact W_1 between two measures of equal mass. W_1 only depends on the
/// difference of the measures, so mass sitting on identical positions in both
/// is cancelled before the transport problem is solved.
inline double w1_distance(const WeightedPoints& a, const WeightedPoints& b) {
  if (a.dim != b.dim) throw InvalidArgument("w1_distance: dimension mismatch");
  std::map<detail::CoordKey, double> net;
  auto add = [&](const WeightedPoints& s, double sign) {
    for (std::size_t i = 0; i < s.size(); ++i) {
      detail::CoordKey k{};
      std::copy_n(s.coords.begin() + static_cast<std::ptrdiff_t>(i * s.dim), s.dim, k.c.begin());
      net[k] += sign * s.weights[i];
    }
  };
  add(a, 1.0);
  add(b, -1.0);
  double scale = 0.0;
  for (double w : a.weights) scale += w;
  const double drop = 1e-15 * std::max(scale, 1.0);
  std::vector<double> pos_c, neg_c, pos_w, neg_w;
  for (const auto& [k, w] : net) {
    if (w > drop) {
      pos_c.insert(pos_c.end(), k.c.begin(), k.c.begin() + static_cast<std::ptrdiff_t>(a.dim));
      pos_w.push_back(w);
    } else if (w < -drop) {
      neg_c.insert(neg_c.end(), k.c.begin(), k.c.begin() + static_cast<std::ptrdiff_t>(a.dim));
      neg_w.push_back(-w);
    }
  }
  if (pos_w.empty() || neg_w.empty()) return 0.0;
  const std::size_t n = pos_w.size(), m = neg_w.size(), d = a.dim;
  std::vector<double> cost(n * m);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < m; ++j)
      cost[i * m + j] = distance(std::span<const double>(pos_c).subspan(i * d, d),
                                 std::span<const double>(neg_c).subspan(j * d, d));
  if (n == 1 || m == 1) {
    double c = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) c += (n == 1 ? neg_w[j] : pos_w[i]) * cost[i * m + j];
    return c;
  }
  // Residual imbalance is rounding only; the solver absorbs it.
  detail::TransportSimplex solver(pos_w, neg_w, cost);
  solver.run();
  return solver.total_cost();
}

/// Positions of a bundle's members at time t, with the bundle weights.
inline WeightedPoints bundle_points_at(const TrajectoryBundle& q, double t) {
  WeightedPoints out;
  out.dim = q.dim();
  out.coords.reserve(q.size() * out.dim);
  out.weights.reserve(q.size());
  for (std::size_t j = 0; j < q.size(); ++j) {
    const Coord x = q.trajectories[j].position_at(t);
    out.push(std::span<const double>(x.data(), out.dim), q.weights[j]);
  }
  return out;
}

/// Pushforward of a bundle by the evaluation map at time t.
inline EmpiricalMeasure pushforward_at(const TrajectoryBundle& q, double t) {
  if (q.size() == 0) throw InvalidArgument("pushforward_at: empty bundle");
  const double horizon = q.horizon();
  if (!(t >= 0.0) || t > horizon * (1.0 + 1e-12) + 1e-12)
    throw InvalidArgument("pushforward_at: time outside [0, T_max]");
  WeightedPoints pts = bundle_points_at(q, t);
  return EmpiricalMeasure(pts.dim, std::move(pts.coords), std::move(pts.weights));
}

/// Truncation index of the path metric: terms n = 1..ceil(T_max) are summed
/// from node data, the remainder uses the frozen tail.
inline std::size_t trajectory_metric_terms(double horizon) {
  return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(horizon - 1e-9)));
}

/// Bound on the tail sum_{n > n_max} 2^-n s_n / (1 + s_n) for paths that are
/// not known to be frozen past the horizon.
inline double trajectory_metric_tail_bound(double horizon) {
  return std::ldexp(1.0, -static_cast<int>(trajectory_metric_terms(horizon)));
}

/// sum_n 2^-n s_n / (1 + s_n) with s_n the sup-distance on [0, n], sampled at
/// grid nodes. Paths are treated as constant after the horizon, which closes
/// the tail of the series exactly.
inline double trajectory_metric(const PolylineTrajectory& a, const PolylineTrajectory& b) {
  if (a.dim() != b.dim() || a.dt() != b.dt() || a.n_nodes() != b.n_nodes())
    throw InvalidArgument("trajectory_metric: paths are not on a common grid");
  const std::size_t n_max = trajectory_metric_terms(a.horizon());
  const double dt = a.dt();
  double sup = 0.0;
  double total = 0.0;
  std::size_t k = 0;
  for (std::size_t n = 1; n <= n_max; ++n) {
    const double tn = static_cast<double>(n);
    while (k < a.n_nodes() && static_cast<double>(k) * dt <= tn + 1e-9 * dt) {
      sup = std::max(sup, distance(a.node(k), b.node(k)));
      ++k;
    }
    total += std::ldexp(sup / (1.0 + sup), -static_cast<int>(n));
  }
  while (k < a.n_nodes()) {
    sup = std::max(sup, distance(a.node(k), b.node(k)));
    ++k;
  }
  total += std::ldexp(sup / (1.0 + sup), -static_cast<int>(n_max));
  return total;
}

inline void write_plan_csv(std::ostream& os, const TransportPlan& plan) {
  const auto prec = os.precision(17);
  os << "source,target,mass\n";
  for (const auto& p : plan.pairs) os << p.source << ',' << p.target << ',' << p.mass << '\n';
  os.precision(prec);
}

}  // namespace mtmfg
