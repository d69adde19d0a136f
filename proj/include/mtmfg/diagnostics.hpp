#pragma once

// Numerical checks of structural properties of value functions, traced
// paths and equilibria, collected into a machine-readable report.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <iomanip>
#include <numbers>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "mtmfg/congestion.hpp"
#include "mtmfg/core_model.hpp"
#include "mtmfg/equilibrium.hpp"
#include "mtmfg/ocp_solver.hpp"
#include "mtmfg/scenario.hpp"
#include "mtmfg/transport.hpp"

namespace mtmfg {

enum class CheckStatus { pass, fail, info };

inline const char* to_string(CheckStatus s) {
  switch (s) {
    case CheckStatus::pass: return "pass";
    case CheckStatus::fail: return "fail";
    default: return "info";
  }
}

struct CheckResult {
  std::string name;
  CheckStatus status = CheckStatus::info;
  /// Measured quantities in insertion order.
  std::vector<std::pair<std::string, double>> values;
  double tolerance = 0.0;
  std::string anchor;
  std::string note;

  double value(const std::string& key) const {
    for (const auto& [k, v] : values)
      if (k == key) return v;
    throw InvalidArgument("check '" + name + "' has no value '" + key + "'");
  }
  void set(const std::string& key, double v) { values.emplace_back(key, v); }
  bool passed() const { return status != CheckStatus::fail; }
};

/// Names every full verification run must contain.
inline const std::vector<std::string>& required_checks() {
  static const std::vector<std::string> names{
      "dpp",          "hj_residual",         "time_monotonicity", "u_equals_w", "normalized_gradient",
      "equilibrium_residual", "support_bound", "asymptotics",       "mfg_system_residual"};
  return names;
}

struct DiagnosticsReport {
  std::vector<CheckResult> checks;

  void add(CheckResult c) { checks.push_back(std::move(c)); }

  const CheckResult* find(const std::string& name) const {
    for (const auto& c : checks)
      if (c.name == name) return &c;
    return nullptr;
  }

  std::vector<std::string> missing() const {
    std::vector<std::string> out;
    for (const auto& n : required_checks()) {
      bool found = false;
      for (const auto& c : checks)
        if (c.name == n || c.name.rfind(n + "[", 0) == 0) found = true;
      if (!found) out.push_back(n);
    }
    return out;
  }

  /// True when no check failed and no required check is missing.
  bool passed() const {
    for (const auto& c : checks)
      if (!c.passed()) return false;
    return missing().empty();
  }

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["passed"] = passed();
    j["missing"] = missing();
    auto arr = nlohmann::ordered_json::array();
    for (const auto& c : checks) {
      nlohmann::ordered_json e;
      e["name"] = c.name;
      e["status"] = to_string(c.status);
      e["tolerance"] = c.tolerance;
      e["anchor"] = c.anchor;
      nlohmann::ordered_json vals = nlohmann::ordered_json::object();
      for (const auto& [k, v] : c.values) {
        if (std::isfinite(v)) {
          vals[k] = v;
        } else {
          vals[k] = v > 0 ? "inf" : (v < 0 ? "-inf" : "nan");
        }
      }
      e["values"] = vals;
      if (!c.note.empty()) e["note"] = c.note;
      arr.push_back(e);
    }
    j["checks"] = arr;
    return j;
  }

  void write_table(std::ostream& os) const {
    const auto prec = os.precision(6);
    os << std::left << std::setw(32) << "check" << std::setw(7) << "status" << std::setw(14) << "tolerance"
       << "values\n";
    for (const auto& c : checks) {
      os << std::setw(32) << c.name << std::setw(7) << to_string(c.status) << std::setw(14) << c.tolerance;
      bool first = true;
      for (const auto& [k, v] : c.values) {
        os << (first ? "" : ", ") << k << '=' << v;
        first = false;
      }
      os << '\n';
    }
    for (const auto& m : missing()) os << std::setw(32) << m << std::setw(7) << "fail" << "missing\n";
    os.precision(prec);
  }
};

namespace detail {

inline double grid_tol(const SpaceTimeGrid& g) { return g.h() + g.dt(); }

/// Distance from the target below which difference stencils and descent
/// probes see the discretized target boundary.
inline double smooth_clearance(const SpaceTimeGrid& g, double k_max) { return 2.0 * g.h() + k_max * g.dt(); }

inline std::span<const double> cs(const Coord& x, std::size_t d) { return {x.data(), d}; }

/// Random point of the box at least `clearance` away from the target.
inline std::optional<Coord> random_off_target(std::mt19937_64& rng, const SpaceTimeGrid& g, const TargetSet& target,
                                              double clearance, double margin = 0.0) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    Coord x{};
    for (std::size_t a = 0; a < g.dim(); ++a) {
      std::uniform_real_distribution<double> u(g.lo(a) + margin, g.hi(a) - margin);
      x[a] = u(rng);
    }
    if (target.distance(cs(x, g.dim())) > clearance) return x;
  }
  return std::nullopt;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Value-function checks
// ---------------------------------------------------------------------------

/// Equality residual |phi(t+dt, g(t+dt)) - phi(t, g(t)) + dt| along traced
/// paths before exit, plus the inequality phi(t+dt, x+dt k u) + dt >= phi(t,x)
/// on random admissible one-steps.
template <SpeedFieldLike F>
CheckResult check_dpp(const ValueField& phi, const TrajectoryBundle& bundle, const F& field, const TargetSet& target,
                      std::size_t samples = 200, std::uint64_t seed = 0) {
  const auto& g = phi.grid();
  const std::size_t d = g.dim();
  const double tol = 2.0 * detail::grid_tol(g);
  CheckResult r{"dpp", CheckStatus::pass, {}, tol, "dynamic programming principle", ""};
  double max_eq = 0.0, sum_eq = 0.0, min_path_slack = kInf;
  std::size_t steps = 0;
  for (const auto& tr : bundle.trajectories) {
    const std::size_t k0 = tr.start_step();
    const std::size_t end = tr.exited() ? k0 + static_cast<std::size_t>(std::llround(tr.exit_time() / g.dt()))
                                        : g.steps();
    for (std::size_t k = k0; k < std::min(end, g.steps()); ++k) {
      const double a = phi.value_at(g.time(k), tr.node(k));
      const double b = phi.value_at(g.time(k + 1), tr.node(k + 1));
      if (!std::isfinite(a) || !std::isfinite(b)) continue;
      const double res = std::abs(b - a + g.dt());
      max_eq = std::max(max_eq, res);
      sum_eq += res;
      min_path_slack = std::min(min_path_slack, b + g.dt() - a);
      ++steps;
    }
  }
  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ULL);
  double worst = kInf;
  std::size_t tested = 0;
  const auto dirs = make_directions(d, 64);
  std::uniform_int_distribution<std::size_t> pick_dir(0, dirs.size() - 1), pick_t(0, g.steps() - 1);
  std::uniform_real_distribution<double> frac(0.0, 1.0);
  while (tested < samples) {
    const auto x = detail::random_off_target(rng, g, target, g.h());
    if (!x) break;
    const std::size_t k = pick_t(rng);
    const double t = g.time(k);
    const auto& u = dirs[pick_dir(rng)];
    const double len = g.dt() * field.speed(t, detail::cs(*x, d)) * frac(rng);
    Coord y = *x;
    for (std::size_t a = 0; a < d; ++a) y[a] += len * u[a];
    if (!g.inside(detail::cs(y, d))) continue;
    const double now = phi.value_at(t, detail::cs(*x, d));
    const double next = phi.value_at(t + g.dt(), detail::cs(y, d));
    if (!std::isfinite(now) || !std::isfinite(next)) continue;
    worst = std::min(worst, next + g.dt() - now);
    ++tested;
  }
  r.set("max_equality_residual", max_eq);
  r.set("mean_equality_residual", steps ? sum_eq / static_cast<double>(steps) : 0.0);
  r.set("path_steps", static_cast<double>(steps));
  r.set("min_path_slack", steps ? min_path_slack : 0.0);
  r.set("min_inequality_slack", tested ? worst : 0.0);
  r.set("random_steps", static_cast<double>(tested));
  if (max_eq > tol || (tested && worst < -tol)) r.status = CheckStatus::fail;
  if (steps == 0) r.note = "no pre-exit steps; equality part vacuous";
  return r;
}

struct FdGradient {
  Coord grad{};
  double norm = 0.0;
  bool defined = false;
  bool kink = false;
};

/// Central-difference spatial gradient at node idx of slice k. Undefined at
/// the box boundary, next to the target or where a neighbour is infinite; a
/// kink is flagged when a second difference exceeds kink_factor * h.
inline FdGradient fd_gradient(const ValueField& phi, std::size_t k, std::size_t idx, double kink_factor = 0.5) {
  const auto& g = phi.grid();
  FdGradient out;
  const double c = phi.at(k, idx);
  if (!std::isfinite(c) || phi.on_target(idx)) return out;
  double s = 0.0;
  for (std::size_t a = 0; a < g.dim(); ++a) {
    const std::size_t ia = g.axis_index(idx, a);
    if (ia == 0 || ia + 1 == g.count(a)) return out;
    const std::size_t lo = idx - g.stride(a), hi = idx + g.stride(a);
    if (phi.on_target(lo) || phi.on_target(hi)) return out;
    const double vl = phi.at(k, lo), vh = phi.at(k, hi);
    if (!std::isfinite(vl) || !std::isfinite(vh)) return out;
    out.grad[a] = (vh - vl) / (2.0 * g.h());
    s += out.grad[a] * out.grad[a];
    if (std::abs(vh - 2.0 * c + vl) > kink_factor * g.h()) out.kink = true;
  }
  out.norm = std::sqrt(s);
  out.defined = true;
  return out;
}

/// |-d_t phi + k |grad phi| - 1| at interior off-target nodes by central
/// differences; kinks are excluded and counted.
template <SpeedFieldLike F>
CheckResult check_hj_residual(const ValueField& phi, const F& field) {
  const auto& g = phi.grid();
  const double tol = 5.0 * detail::grid_tol(g);
  CheckResult r{"hj_residual", CheckStatus::pass, {}, tol, "Hamilton-Jacobi equation", ""};
  std::vector<double> res;
  std::size_t kinks = 0, skipped = 0;
  for (std::size_t k = 1; k + 1 < g.n_times(); ++k)
    for (std::size_t i = 0; i < g.n_nodes(); ++i) {
      if (phi.on_target(i)) continue;
      const auto fd = fd_gradient(phi, k, i);
      if (!fd.defined) {
        ++skipped;
        continue;
      }
      if (fd.kink) {
        ++kinks;
        continue;
      }
      const double a = phi.at(k + 1, i), b = phi.at(k - 1, i);
      if (!std::isfinite(a) || !std::isfinite(b)) {
        ++skipped;
        continue;
      }
      const double dtphi = (a - b) / (2.0 * g.dt());
      const double kk = detail::node_speed(field, g, k, i);
      res.push_back(std::abs(-dtphi + kk * fd.norm - 1.0));
    }
  double median = 0.0, frac = 0.0, mx = 0.0;
  if (!res.empty()) {
    std::vector<double> sorted = res;
    std::nth_element(sorted.begin(), sorted.begin() + static_cast<std::ptrdiff_t>(sorted.size() / 2), sorted.end());
    median = sorted[sorted.size() / 2];
    std::size_t small = 0;
    for (double v : res) {
      if (v <= 0.1) ++small;
      mx = std::max(mx, v);
    }
    frac = static_cast<double>(small) / static_cast<double>(res.size());
  }
  r.set("median", median);
  r.set("max", mx);
  r.set("fraction_below_0.1", frac);
  r.set("tested_nodes", static_cast<double>(res.size()));
  r.set("kink_nodes", static_cast<double>(kinks));
  r.set("undefined_nodes", static_cast<double>(skipped));
  if (res.empty() || median > tol) r.status = CheckStatus::fail;
  if (res.empty()) r.note = "no interior nodes with defined differences";
  return r;
}

/// Lower bound on time difference quotients of phi: c_est = 1 + min quotient.
inline CheckResult check_time_monotonicity(const ValueField& phi, std::size_t samples = 2000, std::uint64_t seed = 0) {
  const auto& g = phi.grid();
  CheckResult r{"time_monotonicity", CheckStatus::pass, {}, 2.0 * detail::grid_tol(g),
                "lower bound on the time derivative of the value function", ""};
  std::mt19937_64 rng(seed ^ 0x51ed2701ULL);
  std::uniform_int_distribution<std::size_t> node(0, g.n_nodes() - 1), step(0, g.steps());
  double min_q = kInf, min_q_tol = kInf;
  std::size_t tested = 0;
  for (std::size_t s = 0; s < 20 * samples && tested < samples; ++s) {
    const std::size_t i = node(rng);
    if (phi.on_target(i)) continue;
    std::size_t k0 = step(rng), k1 = step(rng);
    if (k0 == k1) continue;
    if (k0 > k1) std::swap(k0, k1);
    const double a = phi.at(k0, i), b = phi.at(k1, i);
    if (!std::isfinite(a) || !std::isfinite(b)) continue;
    const double dt = g.time(k1) - g.time(k0);
    const double q = (b - a) / dt;
    min_q = std::min(min_q, q);
    min_q_tol = std::min(min_q_tol, q + 2.0 * detail::grid_tol(g) / dt);
    ++tested;
  }
  const double c_est = tested ? std::min(1.0 + min_q, 1.0) : 1.0;
  const double c_tol = tested ? 1.0 + min_q_tol : 1.0;
  r.set("c_est", c_est);
  r.set("c_est_with_tolerance", c_tol);
  r.set("samples", static_cast<double>(tested));
  if (!(c_tol > 0.0)) r.status = CheckStatus::fail;
  return r;
}

/// Angular agreement between the first traced step (optimal direction) and
/// the minimizer of the descent ratio probed at dt/2 (maximal descent).
template <SpeedFieldLike F>
CheckResult check_U_equals_W(const ValueField& phi, const F& field, const TargetSet& target,
                             std::size_t samples = 100, std::uint64_t seed = 0, std::size_t directions = 64) {
  const auto& g = phi.grid();
  const std::size_t d = g.dim();
  const double max_gap = 10.0 * std::numbers::pi / 180.0;
  CheckResult r{"u_equals_w", CheckStatus::pass, {}, 10.0, "optimal directions equal maximal-descent directions", ""};
  std::mt19937_64 rng(seed ^ 0x7f4a7c15ULL);
  std::uniform_int_distribution<std::size_t> step(0, g.steps() > 4 ? g.steps() / 2 : 0);
  DirectionOptions trace_opt;
  trace_opt.directions = directions;
  DirectionOptions w_opt = trace_opt;
  w_opt.probe = 0.5 * g.dt();
  DirectionOptions coarse = trace_opt;
  coarse.probe = 2.0 * g.dt();
  std::size_t unique = 0, agree = 0, multi = 0, failed_trace = 0;
  double max_seen = 0.0, sens = 0.0;
  std::size_t drawn = 0;
  while (drawn < samples) {
    const auto x = detail::random_off_target(rng, g, target, detail::smooth_clearance(g, field.max_speed()), g.h());
    if (!x) break;
    ++drawn;
    const double t = g.time(step(rng));
    const auto xs = detail::cs(*x, d);
    const auto w = descent_directions(phi, field, t, xs, w_opt);
    if (w.empty()) {
      ++failed_trace;
      continue;
    }
    if (!w.unique) {
      ++multi;
      continue;
    }
    PolylineTrajectory tr;
    try {
      tr = trace_optimal_trajectory(phi, field, target, t, xs, trace_opt);
    } catch (const TraceFailure&) {
      ++failed_trace;
      continue;
    }
    const std::size_t k0 = tr.start_step();
    Coord u{};
    double len = 0.0;
    for (std::size_t a = 0; a < d; ++a) {
      u[a] = tr.node(k0 + 1)[a] - tr.node(k0)[a];
      len += u[a] * u[a];
    }
    len = std::sqrt(len);
    if (len == 0.0) {
      ++failed_trace;
      continue;
    }
    for (std::size_t a = 0; a < d; ++a) u[a] /= len;
    ++unique;
    const double gap = angle_between(u, w.best, d);
    max_seen = std::max(max_seen, gap);
    if (gap <= max_gap) ++agree;
    const auto w2 = descent_directions(phi, field, t, xs, coarse);
    if (!w2.empty() && w2.unique) sens = std::max(sens, angle_between(w.best, w2.best, d));
  }
  const double frac = unique ? static_cast<double>(agree) / static_cast<double>(unique) : 0.0;
  r.set("agreement_fraction", frac);
  r.set("unique_samples", static_cast<double>(unique));
  r.set("multi_valued_samples", static_cast<double>(multi));
  r.set("untraceable_samples", static_cast<double>(failed_trace));
  r.set("max_gap_deg", max_seen * 180.0 / std::numbers::pi);
  r.set("probe_sensitivity_deg", sens * 180.0 / std::numbers::pi);
  if (unique == 0 || frac < 0.95) r.status = CheckStatus::fail;
  return r;
}

/// Normalized gradient from descent directions against central finite
/// differences, on nodes with |grad phi| > 0.2, no kink and at least
/// smooth_clearance() away from the target.
template <SpeedFieldLike F>
CheckResult check_normalized_gradient(const ValueField& phi, const F& field, const TargetSet& target,
                                      std::size_t samples = 200,
                                      std::uint64_t seed = 0, std::size_t directions = 64) {
  const auto& g = phi.grid();
  const std::size_t d = g.dim();
  const double max_gap = 10.0 * std::numbers::pi / 180.0;
  CheckResult r{"normalized_gradient", CheckStatus::pass, {}, 10.0,
                "normalized gradient of a differentiable value function", ""};
  std::mt19937_64 rng(seed ^ 0x2545f491ULL);
  std::uniform_int_distribution<std::size_t> node(0, g.n_nodes() - 1),
      step(g.steps() > 2 ? 1 : 0, g.steps() > 2 ? g.steps() - 1 : 0);
  DirectionOptions opt;
  opt.directions = directions;
  const double clearance = detail::smooth_clearance(g, field.max_speed());
  std::size_t tested = 0, agree = 0, non_unique = 0;
  double max_seen = 0.0;
  for (std::size_t s = 0; s < 100 * samples && tested < samples; ++s) {
    const std::size_t i = node(rng), k = step(rng);
    const auto fd = fd_gradient(phi, k, i);
    if (!fd.defined || fd.kink || fd.norm <= 0.2) continue;
    const Coord x = g.node_point(i);
    if (target.distance(detail::cs(x, d)) <= clearance) continue;
    std::optional<Coord> ng;
    try {
      ng = normalized_gradient(phi, field, g.time(k), detail::cs(x, d), opt);
    } catch (const InvalidArgument&) {
      continue;
    }
    ++tested;
    if (!ng) {
      ++non_unique;
      continue;
    }
    Coord fdn{};
    for (std::size_t a = 0; a < d; ++a) fdn[a] = fd.grad[a] / fd.norm;
    const double gap = angle_between(*ng, fdn, d);
    max_seen = std::max(max_seen, gap);
    if (gap <= max_gap) ++agree;
  }
  const double frac = tested ? static_cast<double>(agree) / static_cast<double>(tested) : 0.0;
  r.set("agreement_fraction", frac);
  r.set("samples", static_cast<double>(tested));
  r.set("non_unique_samples", static_cast<double>(non_unique));
  r.set("max_gap_deg", max_seen * 180.0 / std::numbers::pi);
  if (tested == 0 || frac < 0.95) r.status = CheckStatus::fail;
  return r;
}

// ---------------------------------------------------------------------------
// Equilibrium checks
// ---------------------------------------------------------------------------

/// Suboptimality of q against the value functions of its own field, relative
/// to the mass-weighted mean exit time.
inline CheckResult check_equilibrium_residual(const EquilibriumResidual& res, double rel_tol = 0.05) {
  CheckResult r{"equilibrium_residual", CheckStatus::pass, {}, rel_tol, "equilibrium optimality", ""};
  double unexited = 0.0;
  for (std::size_t i = 0; i < res.residual.size(); ++i) {
    const std::string p = "pop" + std::to_string(i) + ".";
    r.set(p + "residual", res.residual[i]);
    r.set(p + "mean_exit_time", res.mean_exit_time[i]);
    r.set(p + "unexited_mass", res.unexited_mass[i]);
    unexited += res.unexited_mass[i];
  }
  r.set("max_relative", res.max_relative());
  if (res.max_relative() > rel_tol) r.status = CheckStatus::fail;
  if (unexited > 0.0) r.note = "paths that never exit are charged t_max - phi";
  return r;
}

/// e_t#Q_i(B_psi(R)) >= min_j m0^j(B_R) for all grid times and R on a grid.
inline CheckResult check_support_bound(std::span<const TrajectoryBundle> q, const Scenario& sc, std::size_t radii = 20) {
  CheckResult r{"support_bound", CheckStatus::pass, {}, 1e-10, "mass confinement to the psi-ball", ""};
  const double r0 = sc.support_radius();
  std::size_t violations = 0;
  double worst = kInf;
  for (std::size_t l = 0; l < radii; ++l) {
    const double R = r0 * 1.2 * static_cast<double>(l) / static_cast<double>(radii - 1);
    const double need = phi_support_profile(sc.m0, R);
    for (std::size_t i = 0; i < q.size(); ++i) {
      const double psi = sc.bounds(i, R).radius;
      for (std::size_t k = 0; k < q[i].trajectories.front().n_nodes(); ++k) {
        double mass = 0.0;
        for (std::size_t j = 0; j < q[i].size(); ++j)
          if (norm(q[i].trajectories[j].node(k)) <= psi * (1.0 + 1e-12) + 1e-15) mass += q[i].weights[j];
        const double slack = mass - need;
        worst = std::min(worst, slack);
        if (slack < -1e-10) ++violations;
      }
    }
  }
  r.set("violations", static_cast<double>(violations));
  r.set("min_slack", worst);
  r.set("radii", static_cast<double>(radii));
  if (violations > 0) r.status = CheckStatus::fail;
  return r;
}

/// Convergence of m_t^i to m_inf^i = (final node)#Q_i: monotone decay, the
/// tail bound W_p^p <= 2^p int_{|x| > a(t - t0)} psi(|x|)^p dm0 with a = k_min,
/// t0 = D0 / k_min, and W_p <= h for t >= T(R0) + 2 dt.
inline CheckResult asymptotics_report(std::span<const TrajectoryBundle> q, const Scenario& sc,
                                      std::vector<std::vector<double>>* curves = nullptr) {
  const auto& g = sc.grid;
  const double jitter = 2.0 * detail::grid_tol(g), h = g.h(), p = sc.p;
  CheckResult r{"asymptotics", CheckStatus::pass, {}, jitter, "convergence of the flow to its limit measure", ""};
  const double alpha = sc.speed_model.k_min;
  const double settle = sc.exit_time_bound() + 2.0 * g.dt();
  bool ok = true;
  double max_increase = 0.0, max_bound_excess = -kInf, max_after_settle = 0.0, settle_time = 0.0;
  std::size_t unexited = 0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    for (const auto& tr : q[i].trajectories)
      if (!tr.exited()) ++unexited;
    const std::size_t nt = q[i].trajectories.front().n_nodes();
    WeightedPoints inf = detail::nodes_at(q[i], nt - 1);
    const EmpiricalMeasure m_inf(inf.dim, inf.coords, inf.weights);
    const Coord origin{};
    const double d0 = sc.targets[i].distance(std::span<const double>(origin.data(), g.dim()));
    const double t0 = d0 / alpha;
    std::vector<double> curve(nt);
    for (std::size_t k = 0; k < nt; ++k) {
      const auto at = detail::nodes_at(q[i], k);
      if (p == 1.0) {
        curve[k] = w1_distance(at, inf);
      } else {
        curve[k] = wasserstein(EmpiricalMeasure(at.dim, at.coords, at.weights), m_inf, p).distance;
      }
    }
    double last_positive = 0.0;
    for (std::size_t k = 0; k < nt; ++k) {
      const double t = g.time(k);
      if (k > 0) max_increase = std::max(max_increase, curve[k] - curve[k - 1]);
      double tail = 0.0;
      const auto& m0 = sc.m0[i];
      for (std::size_t j = 0; j < m0.size(); ++j) {
        const double rx = norm(m0.point(j));
        if (rx > alpha * (t - t0)) tail += m0.weight(j) * std::pow(sc.bounds(i, rx).radius, p);
      }
      const double bound = 2.0 * std::pow(tail, 1.0 / p);
      max_bound_excess = std::max(max_bound_excess, curve[k] - bound);
      if (t >= settle) max_after_settle = std::max(max_after_settle, curve[k]);
      if (curve[k] > h) last_positive = t + g.dt();
    }
    settle_time = std::max(settle_time, last_positive);
    if (curves) curves->push_back(std::move(curve));
  }
  if (max_increase > jitter) ok = false;
  if (max_bound_excess > h) ok = false;
  if (max_after_settle > h) ok = false;
  if (unexited > 0) {
    ok = false;
    r.note = "paths without exit: the limit measure is undefined";
  }
  if (settle > g.t_max()) r.note += (r.note.empty() ? "" : "; ") + std::string("horizon ends before T(R0) + 2 dt");
  r.set("max_increase", max_increase);
  r.set("max_bound_excess", max_bound_excess);
  r.set("max_after_settle", max_after_settle);
  r.set("settle_time", settle_time);
  r.set("settle_bound", settle);
  r.set("unexited_paths", static_cast<double>(unexited));
  r.status = ok ? CheckStatus::pass : CheckStatus::fail;
  return r;
}

// ---------------------------------------------------------------------------
// Continuity equation residual
// ---------------------------------------------------------------------------

/// Tensor bump zeta(t, x) = b((t - tc)/rt) prod_a b((x_a - c_a)/rx) with
/// b(s) = (1 - s^2)^4 on |s| < 1.
struct Bump {
  double tc = 0.0, rt = 1.0;
  Coord c{};
  double rx = 1.0;

  static double b(double s) {
    if (std::abs(s) >= 1.0) return 0.0;
    const double q = 1.0 - s * s;
    return q * q * q * q;
  }
  static double db(double s) {
    if (std::abs(s) >= 1.0) return 0.0;
    const double q = 1.0 - s * s;
    return -8.0 * s * q * q * q;
  }

  /// d_t zeta and grad_x zeta at (t, x).
  void derivatives(double t, std::span<const double> x, std::size_t dim, double& dt, Coord& grad) const {
    const double st = (t - tc) / rt;
    const double bt = b(st);
    std::array<double, kMaxDim> bx{}, dbx{};
    double prod = 1.0;
    for (std::size_t a = 0; a < dim; ++a) {
      const double s = (x[a] - c[a]) / rx;
      bx[a] = b(s);
      dbx[a] = db(s) / rx;
      prod *= bx[a];
    }
    dt = db(st) / rt * prod;
    for (std::size_t a = 0; a < dim; ++a) {
      double p = bt * dbx[a];
      for (std::size_t o = 0; o < dim; ++o)
        if (o != a) p *= bx[o];
      grad[a] = p;
    }
  }
};

/// Bumps centred on points of the flow, kept at least rx sqrt(d) + 2h away
/// from the target and inside (rt, t_max - rt).
inline std::vector<Bump> make_bumps(const TrajectoryBundle& q, const TargetSet& target, const SpaceTimeGrid& g,
                                    std::size_t count, double rx, double rt, std::uint64_t seed) {
  std::vector<Bump> out;
  std::mt19937_64 rng(seed ^ 0xb5297a4dULL);
  std::uniform_int_distribution<std::size_t> pick(0, q.size() - 1);
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  const double clearance = rx * std::sqrt(static_cast<double>(g.dim())) + 2.0 * g.h();
  for (int attempt = 0; attempt < 20000 && out.size() < count; ++attempt) {
    const auto& tr = q.trajectories[pick(rng)];
    const double end = tr.exited() ? tr.t0() + tr.exit_time() : g.t_max();
    std::uniform_real_distribution<double> tt(tr.t0(), std::max(tr.t0(), end));
    Bump b;
    b.rt = rt;
    b.rx = rx;
    b.tc = tt(rng);
    if (b.tc < rt || b.tc > g.t_max() - rt) continue;
    const Coord x = tr.position_at(b.tc);
    for (std::size_t a = 0; a < g.dim(); ++a) b.c[a] = x[a] + u(rng) * rx;
    if (target.distance(std::span<const double>(b.c.data(), g.dim())) < clearance) continue;
    bool inside = true;
    for (std::size_t a = 0; a < g.dim(); ++a)
      if (b.c[a] - rx < g.lo(a) || b.c[a] + rx > g.hi(a)) inside = false;
    if (!inside) continue;
    out.push_back(b);
  }
  return out;
}

/// Weak continuity-equation residual
///   sum_j w_j int (d_t zeta - k grad^phi . grad zeta)(t, g_j(t)) dt
/// by the trapezoid rule on the grid times; the velocity vanishes once a path
/// has reached its target. Returns one value per bump.
template <SpeedFieldLike F>
std::vector<double> continuity_residuals(const TrajectoryBundle& q, const ValueField& phi, const F& field,
                                         std::span<const Bump> bumps, std::size_t directions = 64) {
  const auto& g = phi.grid();
  const std::size_t d = g.dim();
  DirectionOptions opt;
  opt.directions = directions;
  std::vector<double> out(bumps.size(), 0.0);
  for (std::size_t j = 0; j < q.size(); ++j) {
    const auto& tr = q.trajectories[j];
    for (std::size_t k = 0; k < tr.n_nodes(); ++k) {
      const double t = g.time(k);
      const auto x = tr.node(k);
      const double wq = (k == 0 || k + 1 == tr.n_nodes()) ? 0.5 : 1.0;
      // Velocity is only needed where some bump is active.
      bool active = false;
      for (const auto& b : bumps) {
        if (std::abs(t - b.tc) >= b.rt) continue;
        bool in = true;
        for (std::size_t a = 0; a < d; ++a)
          if (std::abs(x[a] - b.c[a]) >= b.rx) in = false;
        if (in) active = true;
      }
      if (!active) continue;
      Coord v{};
      const bool arrived = tr.exited() && t >= tr.t0() + tr.exit_time() - 1e-9 * g.dt();
      const auto ds = arrived ? DirectionSet{} : descent_directions(phi, field, t, x, opt);
      if (!ds.empty()) {
        Coord u = ds.best;
        if (!ds.unique && k + 1 < tr.n_nodes()) {
          // Set-valued gradient: take the optimal direction nearest the
          // particle's own step, as the tracer does.
          Coord step{};
          double len = 0.0;
          for (std::size_t a = 0; a < d; ++a) {
            step[a] = tr.node(k + 1)[a] - x[a];
            len += step[a] * step[a];
          }
          len = std::sqrt(len);
          std::size_t pick = ds.argmin;
          double best = kInf;
          for (std::size_t a = 0; a < d; ++a) step[a] = len > 0.0 ? step[a] / len : 0.0;
          for (auto jj : ds.selected) {
            if (len == 0.0) break;
            const double ang = angle_between(ds.directions[jj], step, d);
            if (ang < best - 1e-12) {
              best = ang;
              pick = jj;
            }
          }
          u = detail::refine_around(ds, pick, directions);
        }
        const double kk = field.speed(t, x);
        for (std::size_t a = 0; a < d; ++a) v[a] = kk * u[a];
      }
      for (std::size_t l = 0; l < bumps.size(); ++l) {
        double zt = 0.0;
        Coord gz{};
        bumps[l].derivatives(t, x, d, zt, gz);
        double integrand = zt;
        for (std::size_t a = 0; a < d; ++a) integrand += v[a] * gz[a];
        out[l] += q.weights[j] * wq * g.dt() * integrand;
      }
    }
  }
  for (auto& v : out) v = std::abs(v);
  return out;
}

/// Test-bump radii in space and time: a quarter of the narrowest box side,
/// and the time to cross two radii at full speed.
struct BumpShape {
  double rx = 0.25;
  double rt = 0.5;
};

inline BumpShape default_bump_shape(const Scenario& sc) {
  double w = kInf;
  for (std::size_t a = 0; a < sc.dim(); ++a) w = std::min(w, sc.grid.hi(a) - sc.grid.lo(a));
  return {0.25 * w, 0.5 * w / sc.speed_model.k_max};
}

/// Single-atom transport reference: every atom of m0^i is transported alone
/// with congestion off, which is an exact equilibrium, and tested against the
/// bumps of population i. The mixture of such flows obeys the same bound, so
/// C = max residual / (h + dt) measures pure discretization error.
struct TransportCalibration {
  double C = 0.0;
  double max_residual = 0.0;
  /// Largest single-atom residual per bump, population-major.
  std::vector<double> residuals;
};

inline TransportCalibration calibrate_transport_constant(const Scenario& sc,
                                                         std::span<const std::vector<Bump>> bumps,
                                                         std::size_t workers = 1) {
  if (bumps.size() != sc.populations()) throw InvalidArgument("calibration: one bump family per population");
  Scenario off = sc;
  off.speed_model.a_self = 0.0;
  off.speed_model.a_cross = 0.0;
  const auto br = best_response_detail(initial_bundle(off), off, workers);
  const auto field = build_speed_field(br.bundles, off.speed_model, off.grid, workers);
  TransportCalibration out;
  for (std::size_t i = 0; i < sc.populations(); ++i) {
    const auto& q = br.bundles[i];
    std::vector<std::vector<double>> per_atom(q.size());
    parallel_for(q.size(), workers, [&](std::size_t j) {
      TrajectoryBundle one;
      one.trajectories.push_back(q.trajectories[j]);
      one.weights.push_back(1.0);
      one.sources.push_back(0);
      per_atom[j] = continuity_residuals(one, br.values[i], field.population(i), bumps[i], sc.directions);
    });
    for (std::size_t l = 0; l < bumps[i].size(); ++l) {
      double m = 0.0;
      for (const auto& r : per_atom) m = std::max(m, r[l]);
      out.residuals.push_back(m);
      out.max_residual = std::max(out.max_residual, m);
    }
  }
  out.C = out.max_residual / detail::grid_tol(sc.grid);
  return out;
}

/// Continuity-equation residual check; `c_calibrated` is the constant C in
/// the tolerance C (h + dt).
template <SpeedFieldLike F>
CheckResult mfg_system_residual(const TrajectoryBundle& q, const ValueField& phi, const F& field,
                                std::span<const Bump> bumps, double c_calibrated, std::size_t directions = 64,
                                const std::string& name = "mfg_system_residual") {
  const auto& g = phi.grid();
  const double tol = c_calibrated * detail::grid_tol(g);
  CheckResult r{name, CheckStatus::pass, {}, tol, "continuity equation of the MFG system", ""};
  const auto res = continuity_residuals(q, phi, field, bumps, directions);
  double mx = 0.0;
  for (std::size_t l = 0; l < res.size(); ++l) {
    r.set("bump" + std::to_string(l), res[l]);
    mx = std::max(mx, res[l]);
  }
  r.set("max", mx);
  r.set("C", c_calibrated);
  if (bumps.empty() || mx > tol) r.status = CheckStatus::fail;
  if (bumps.empty()) r.note = "no admissible test bumps";
  return r;
}

}  // namespace mtmfg
