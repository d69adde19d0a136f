#pragma once

// Best-response iteration on trajectory bundles: fictitious play and Picard.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <string>
#include <vector>

#include "mtmfg/congestion.hpp"
#include "mtmfg/core_model.hpp"
#include "mtmfg/ocp_solver.hpp"
#include "mtmfg/parallel.hpp"
#include "mtmfg/scenario.hpp"
#include "mtmfg/transport.hpp"

namespace mtmfg {

/// Each atom of m0^i becomes a stationary path carrying its weight.
inline std::vector<TrajectoryBundle> initial_bundle(const Scenario& sc) {
  std::vector<TrajectoryBundle> out(sc.populations());
  const double h = sc.grid.h();
  for (std::size_t i = 0; i < sc.populations(); ++i) {
    const auto& m = sc.m0[i];
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double exit = sc.targets[i].distance(m.point(j)) <= h * (1.0 + 1e-12) ? 0.0 : kInf;
      out[i].trajectories.push_back(PolylineTrajectory::stationary(m.point(j), sc.grid.dt(), sc.grid.steps(), exit));
      out[i].weights.push_back(m.weight(j));
      out[i].sources.push_back(j);
    }
  }
  return out;
}

struct BestResponse {
  std::vector<TrajectoryBundle> bundles;
  /// Value fields of the field the responses were traced against.
  std::vector<ValueField> values;
};

/// Speed field of Q, value functions, and one traced optimal path per
/// initial atom.
inline BestResponse best_response_detail(std::span<const TrajectoryBundle> q, const Scenario& sc,
                                         std::size_t workers = 1) {
  const auto field = build_speed_field(q, sc.speed_model, sc.grid, workers);
  BestResponse br;
  SolverOptions opt;
  opt.directions = sc.directions;
  opt.workers = workers;
  DirectionOptions dopt;
  dopt.directions = sc.directions;
  for (std::size_t i = 0; i < sc.populations(); ++i) {
    const auto view = field.population(i);
    br.values.push_back(solve_value_function(view, sc.targets[i], sc.grid, opt));
    const auto& m = sc.m0[i];
    TrajectoryBundle b;
    b.trajectories.resize(m.size());
    b.weights.assign(m.weights().begin(), m.weights().end());
    b.sources.resize(m.size());
    std::iota(b.sources.begin(), b.sources.end(), std::size_t{0});
    parallel_for(m.size(), workers, [&](std::size_t j) {
      try {
        b.trajectories[j] = trace_optimal_trajectory(br.values.back(), view, sc.targets[i], 0.0, m.point(j), dopt);
      } catch (const TraceFailure& e) {
        throw TraceFailure("population " + std::to_string(i) + ", atom " + std::to_string(j) + ": " + e.what(), j);
      }
    });
    br.bundles.push_back(std::move(b));
  }
  return br;
}

inline std::vector<TrajectoryBundle> best_response(std::span<const TrajectoryBundle> q, const Scenario& sc,
                                                   std::size_t workers = 1) {
  return best_response_detail(q, sc, workers).bundles;
}

/// Per-population mass-weighted suboptimality max(0, tau(gamma) - phi_i(0, gamma(0))).
struct EquilibriumResidual {
  std::vector<double> residual;
  std::vector<double> mean_exit_time;
  /// Mass of paths that never reach the target (charged T_max - phi).
  std::vector<double> unexited_mass;
  std::vector<std::size_t> unexited_count;

  double max_relative() const {
    double r = 0.0;
    for (std::size_t i = 0; i < residual.size(); ++i)
      r = std::max(r, mean_exit_time[i] > 0.0 ? residual[i] / mean_exit_time[i] : (residual[i] > 0.0 ? kInf : 0.0));
    return r;
  }
};

/// Residual of q against precomputed value functions of its own field.
inline EquilibriumResidual equilibrium_residual(std::span<const TrajectoryBundle> q,
                                                std::span<const ValueField> phi, const Scenario& sc) {
  EquilibriumResidual out;
  const double t_max = sc.grid.t_max();
  for (std::size_t i = 0; i < q.size(); ++i) {
    double res = 0.0, mean_exit = 0.0, lost = 0.0;
    std::size_t lost_count = 0;
    for (std::size_t j = 0; j < q[i].size(); ++j) {
      const auto& tr = q[i].trajectories[j];
      const double w = q[i].weights[j];
      const double v = phi[i].value_at(0.0, tr.initial_point());
      double tau = tr.exit_time();
      if (!tr.exited()) {
        tau = t_max;
        lost += w;
        ++lost_count;
      }
      mean_exit += w * tau;
      if (v < kInf) res += w * std::max(0.0, tau - v);
    }
    out.residual.push_back(res);
    out.mean_exit_time.push_back(mean_exit);
    out.unexited_mass.push_back(lost);
    out.unexited_count.push_back(lost_count);
  }
  return out;
}

/// Rebuilds the field of q, solves each phi_i and measures suboptimality.
inline EquilibriumResidual equilibrium_residual(std::span<const TrajectoryBundle> q, const Scenario& sc,
                                                std::size_t workers = 1) {
  const auto field = build_speed_field(q, sc.speed_model, sc.grid, workers);
  SolverOptions opt;
  opt.directions = sc.directions;
  opt.workers = workers;
  std::vector<ValueField> phi;
  for (std::size_t i = 0; i < sc.populations(); ++i)
    phi.push_back(solve_value_function(field.population(i), sc.targets[i], sc.grid, opt));
  return equilibrium_residual(q, phi, sc);
}

// ---------------------------------------------------------------------------
// Bundle arithmetic
// ---------------------------------------------------------------------------

/// (1 - lambda) a + lambda b, concatenated.
inline TrajectoryBundle mix_bundles(const TrajectoryBundle& a, const TrajectoryBundle& b, double lambda) {
  if (lambda >= 1.0) return b;
  TrajectoryBundle out;
  for (std::size_t j = 0; j < a.size(); ++j) {
    out.trajectories.push_back(a.trajectories[j]);
    out.weights.push_back((1.0 - lambda) * a.weights[j]);
    out.sources.push_back(a.sources[j]);
  }
  for (std::size_t j = 0; j < b.size(); ++j) {
    out.trajectories.push_back(b.trajectories[j]);
    out.weights.push_back(lambda * b.weights[j]);
    out.sources.push_back(b.sources[j]);
  }
  return out;
}

/// Merges paths of the same source atom that are within `merge_tol` in the
/// path metric, then merges closest pairs until at most `max_per_atom` paths
/// remain per atom. A merge keeps the heavier path and sums the weights.
/// Per-atom weights are finally resummed to the m0 weights exactly.
inline TrajectoryBundle compact_bundle(const TrajectoryBundle& q, const EmpiricalMeasure& m0, double merge_tol,
                                       std::size_t max_per_atom) {
  std::vector<std::vector<std::size_t>> by_source(m0.size());
  for (std::size_t j = 0; j < q.size(); ++j) by_source.at(q.sources[j]).push_back(j);
  TrajectoryBundle out;
  for (std::size_t s = 0; s < m0.size(); ++s) {
    std::vector<std::size_t> ids = by_source[s];
    std::vector<double> w;
    for (auto j : ids) w.push_back(q.weights[j]);
    // Pairwise distances among this atom's paths.
    const std::size_t n = ids.size();
    std::vector<double> dist(n * n, 0.0);
    for (std::size_t a = 0; a < n; ++a)
      for (std::size_t b = a + 1; b < n; ++b)
        dist[a * n + b] = dist[b * n + a] = trajectory_metric(q.trajectories[ids[a]], q.trajectories[ids[b]]);
    std::vector<char> alive(n, 1);
    std::size_t count = n;
    auto merge = [&](std::size_t a, std::size_t b) {
      // Keep the heavier path (earlier one on ties).
      const bool keep_a = w[a] > w[b] || (w[a] == w[b] && a < b);
      const std::size_t keep = keep_a ? a : b, drop = keep_a ? b : a;
      w[keep] += w[drop];
      alive[drop] = 0;
      --count;
    };
    for (;;) {
      double best = kInf;
      std::size_t ba = 0, bb = 0;
      for (std::size_t a = 0; a < n; ++a) {
        if (!alive[a]) continue;
        for (std::size_t b = a + 1; b < n; ++b)
          if (alive[b] && dist[a * n + b] < best) {
            best = dist[a * n + b];
            ba = a;
            bb = b;
          }
      }
      if (best == kInf) break;
      if (best <= merge_tol || count > max_per_atom) {
        merge(ba, bb);
      } else {
        break;
      }
    }
    double total = 0.0;
    std::size_t heaviest = out.size();
    double heaviest_w = -1.0;
    for (std::size_t a = 0; a < n; ++a) {
      if (!alive[a]) continue;
      out.trajectories.push_back(q.trajectories[ids[a]]);
      out.weights.push_back(w[a]);
      out.sources.push_back(s);
      total += w[a];
      if (w[a] > heaviest_w) {
        heaviest_w = w[a];
        heaviest = out.size() - 1;
      }
    }
    if (n > 0) out.weights[heaviest] += m0.weight(s) - total;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Flow distances
// ---------------------------------------------------------------------------

namespace detail {

/// Upper bound on W_1(e_t#a, e_t#b) from the coupling that only transports
/// mass between paths of the same source atom (both bundles carry the m0
/// weight on every atom). Each per-atom problem is solved exactly.
inline double source_coupling_bound(const TrajectoryBundle& a, const TrajectoryBundle& b, std::size_t k,
                                    std::size_t n_sources) {
  std::vector<std::vector<std::size_t>> sa(n_sources), sb(n_sources);
  for (std::size_t j = 0; j < a.size(); ++j) sa[a.sources[j]].push_back(j);
  for (std::size_t j = 0; j < b.size(); ++j) sb[b.sources[j]].push_back(j);
  double total = 0.0;
  for (std::size_t s = 0; s < n_sources; ++s) {
    if (sa[s].empty() || sb[s].empty()) continue;
    WeightedPoints pa, pb;
    pa.dim = pb.dim = a.dim();
    for (auto j : sa[s]) pa.push(a.trajectories[j].node(k), a.weights[j]);
    for (auto j : sb[s]) pb.push(b.trajectories[j].node(k), b.weights[j]);
    total += w1_distance(pa, pb);
  }
  return total;
}

inline double mean_gap(const WeightedPoints& a, const WeightedPoints& b) {
  Coord ma{}, mb{};
  for (std::size_t j = 0; j < a.size(); ++j)
    for (std::size_t d = 0; d < a.dim; ++d) ma[d] += a.weights[j] * a.coords[j * a.dim + d];
  for (std::size_t j = 0; j < b.size(); ++j)
    for (std::size_t d = 0; d < b.dim; ++d) mb[d] += b.weights[j] * b.coords[j * b.dim + d];
  double s = 0.0;
  for (std::size_t d = 0; d < a.dim; ++d) s += (ma[d] - mb[d]) * (ma[d] - mb[d]);
  return std::sqrt(s);
}

inline WeightedPoints nodes_at(const TrajectoryBundle& q, std::size_t k) {
  WeightedPoints p;
  p.dim = q.dim();
  for (std::size_t j = 0; j < q.size(); ++j) p.push(q.trajectories[j].node(k), q.weights[j]);
  return p;
}

}  // namespace detail

/// max over grid times of W_1(e_t#a, e_t#b). Exact: times are visited in
/// decreasing order of an upper bound (per-atom coupling, refined by the
/// 2 k_max time-Lipschitz bound from solved times) and the search stops once
/// no remaining bound exceeds the best exact value.
inline double max_w1_over_times(const TrajectoryBundle& a, const TrajectoryBundle& b, std::size_t n_sources,
                                double k_max, std::size_t* exact_solves = nullptr) {
  const std::size_t nt = a.trajectories.front().n_nodes();
  const double dt = a.dt();
  std::vector<double> upper(nt), lower(nt);
  for (std::size_t k = 0; k < nt; ++k) {
    upper[k] = detail::source_coupling_bound(a, b, k, n_sources);
    lower[k] = detail::mean_gap(detail::nodes_at(a, k), detail::nodes_at(b, k));
  }
  double best = *std::max_element(lower.begin(), lower.end());
  std::vector<char> done(nt, 0);
  std::vector<std::size_t> solved;
  std::size_t solves = 0;
  for (;;) {
    std::size_t pick = nt;
    double pick_ub = best;
    for (std::size_t k = 0; k < nt; ++k) {
      if (done[k]) continue;
      double ub = upper[k];
      for (auto s : solved) {
        const double lip = upper[s] + 2.0 * k_max * dt * (k > s ? static_cast<double>(k - s) : static_cast<double>(s - k));
        ub = std::min(ub, lip);
      }
      upper[k] = ub;
      if (ub > pick_ub * (1.0 + 1e-12) + 1e-15) {
        pick_ub = ub;
        pick = k;
      }
    }
    if (pick == nt) break;
    const double w = upper[pick] <= lower[pick] * (1.0 + 1e-12)
                         ? upper[pick]
                         : w1_distance(detail::nodes_at(a, pick), detail::nodes_at(b, pick));
    ++solves;
    done[pick] = 1;
    upper[pick] = w;
    solved.push_back(pick);
    best = std::max(best, w);
  }
  if (exact_solves) *exact_solves = solves;
  return best;
}

// ---------------------------------------------------------------------------
// Fixed-point iteration
// ---------------------------------------------------------------------------

enum class DampingMode { fictitious, picard };

struct IterateOptions {
  std::size_t max_iters = 60;
  double tol = 1e-3;
  DampingMode mode = DampingMode::fictitious;
  std::size_t workers = 1;
  double merge_tol = 1e-4;
  std::size_t max_paths_per_atom = 4;
};

struct IterationRecord {
  std::size_t n = 0;
  double lambda = 1.0;
  /// r_n = max_i max_t W_1(e_t#Q^n_i, e_t#Q^{n+1}_i)
  double residual = 0.0;
  std::vector<double> population_residual;
  /// Suboptimality of Q^n against its own field (by-product of the best response).
  EquilibriumResidual equilibrium;
  std::vector<std::size_t> bundle_sizes;
  std::size_t exact_w1_solves = 0;
};

struct IterationState {
  std::size_t n = 0;
  std::vector<TrajectoryBundle> bundles;
  std::vector<IterationRecord> history;
  bool converged = false;
  /// Iteration index at which r_n <= tol was first met.
  std::size_t converged_at = 0;
};

/// Q^0 = b#m0; Q^{n+1} = (1 - l_n) Q^n + l_n BR(Q^n) with l_n = 1/(n+1)
/// (fictitious play) or 1 (Picard). Stops when r_n <= tol for some n >= 1 or
/// after max_iters best responses. `on_iterate(record, Q^{n+1})` is called
/// after each step.
inline IterationState fixed_point_iterate(
    const Scenario& sc, const IterateOptions& opt,
    const std::function<void(const IterationRecord&, const std::vector<TrajectoryBundle>&)>& on_iterate = {}) {
  IterationState st;
  st.bundles = initial_bundle(sc);
  for (std::size_t n = 0; n < opt.max_iters; ++n) {
    const auto br = best_response_detail(st.bundles, sc, opt.workers);
    IterationRecord rec;
    rec.n = n;
    rec.lambda = opt.mode == DampingMode::picard ? 1.0 : 1.0 / static_cast<double>(n + 1);
    rec.equilibrium = equilibrium_residual(st.bundles, br.values, sc);
    std::vector<TrajectoryBundle> next;
    for (std::size_t i = 0; i < sc.populations(); ++i) {
      auto mixed = mix_bundles(st.bundles[i], br.bundles[i], rec.lambda);
      next.push_back(compact_bundle(mixed, sc.m0[i], opt.merge_tol, opt.max_paths_per_atom));
    }
    for (std::size_t i = 0; i < sc.populations(); ++i) {
      std::size_t solves = 0;
      const double r = max_w1_over_times(st.bundles[i], next[i], sc.m0[i].size(), sc.speed_model.k_max, &solves);
      rec.population_residual.push_back(r);
      rec.residual = std::max(rec.residual, r);
      rec.exact_w1_solves += solves;
      rec.bundle_sizes.push_back(next[i].size());
    }
    st.bundles = std::move(next);
    st.n = n + 1;
    st.history.push_back(rec);
    if (on_iterate) on_iterate(st.history.back(), st.bundles);
    if (n >= 1 && rec.residual <= opt.tol) {
      st.converged = true;
      st.converged_at = n;
      break;
    }
  }
  return st;
}

}  // namespace mtmfg
