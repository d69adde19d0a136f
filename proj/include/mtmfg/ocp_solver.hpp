#pragma once

// Semi-Lagrangian solver for the minimal-time problem with a space-time
// speed cap, descent-direction sets and optimal trajectory tracing.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <numbers>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "mtmfg/congestion.hpp"
#include "mtmfg/core_model.hpp"
#include "mtmfg/error.hpp"
#include "mtmfg/parallel.hpp"

namespace mtmfg {

struct SolverOptions {
  std::size_t directions = 64;
  std::size_t workers = 1;
  std::size_t max_sweeps = 1000;
  /// Stationary sweeps stop once the largest node change is below
  /// stationary_tol * dt.
  double stationary_tol = 1e-6;
};

/// Sampled value function on a space-time grid. Node values are +inf where
/// the target cannot be reached through the box.
class ValueField {
 public:
  ValueField() = default;

  ValueField(SpaceTimeGrid grid, std::vector<double> values, std::vector<char> mask)
      : grid_(std::move(grid)), values_(std::move(values)), mask_(std::move(mask)) {
    if (values_.size() != grid_.n_times() * grid_.n_nodes())
      throw InvalidArgument("value field: value count does not match grid");
    if (mask_.size() != grid_.n_nodes()) throw InvalidArgument("value field: mask size does not match grid");
  }

  const SpaceTimeGrid& grid() const noexcept { return grid_; }
  const std::vector<double>& values() const noexcept { return values_; }
  const std::vector<char>& mask() const noexcept { return mask_; }
  bool on_target(std::size_t idx) const { return mask_[idx] != 0; }

  std::span<const double> slice(std::size_t k) const {
    return std::span<const double>(values_).subspan(k * grid_.n_nodes(), grid_.n_nodes());
  }
  double at(std::size_t k, std::size_t idx) const { return values_[k * grid_.n_nodes() + idx]; }

  /// Multilinear in space, linear in time; frozen past the horizon.
  double value_at(double t, std::span<const double> x) const {
    const double s = std::max(t, 0.0) / grid_.dt();
    if (s >= static_cast<double>(grid_.steps())) return grid_.interpolate(slice(grid_.steps()), x.data());
    const auto k = static_cast<std::size_t>(std::floor(s));
    double f = s - static_cast<double>(k);
    if (f < 1e-9) return grid_.interpolate(slice(k), x.data());
    if (f > 1.0 - 1e-9) return grid_.interpolate(slice(k + 1), x.data());
    const double a = grid_.interpolate(slice(k), x.data());
    const double b = grid_.interpolate(slice(k + 1), x.data());
    if (a == kInf || b == kInf) return kInf;
    return (1.0 - f) * a + f * b;
  }

  /// Largest R with psi(R) inside the box; the a-priori bounds hold for
  /// initial points in B_R.
  double certified_radius() const noexcept { return certified_radius_; }
  bool box_certified(double r0) const { return r0 <= certified_radius_ + 1e-12; }
  std::size_t stationary_sweeps() const noexcept { return sweeps_; }
  bool stationary_converged() const noexcept { return stationary_converged_; }

  void set_certification(double radius) { certified_radius_ = radius; }
  void set_stationary_report(std::size_t sweeps, bool converged) {
    sweeps_ = sweeps;
    stationary_converged_ = converged;
  }

  /// CSV with columns t, x0.., phi.
  void write_csv(std::ostream& os) const {
    const auto prec = os.precision(17);
    os << "t";
    for (std::size_t a = 0; a < grid_.dim(); ++a) os << ",x" << a;
    os << ",phi\n";
    for (std::size_t k = 0; k < grid_.n_times(); ++k)
      for (std::size_t i = 0; i < grid_.n_nodes(); ++i) {
        const Coord x = grid_.node_point(i);
        os << grid_.time(k);
        for (std::size_t a = 0; a < grid_.dim(); ++a) os << ',' << x[a];
        os << ',' << at(k, i) << '\n';
      }
    os.precision(prec);
  }

  /// Binary dump: 8-byte magic "MTMFGVF1", u64 dim, u64 count per axis,
  /// f64 lo per axis, f64 h, f64 dt, u64 number of time nodes, then the
  /// values as f64, time-major and row-major within a slice (last axis
  /// fastest). Native byte order.
  void write_binary(std::ostream& os) const {
    os.write("MTMFGVF1", 8);
    auto put_u64 = [&](std::uint64_t v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    auto put_f64 = [&](double v) { os.write(reinterpret_cast<const char*>(&v), sizeof v); };
    put_u64(grid_.dim());
    for (std::size_t a = 0; a < grid_.dim(); ++a) put_u64(grid_.count(a));
    for (std::size_t a = 0; a < grid_.dim(); ++a) put_f64(grid_.lo(a));
    put_f64(grid_.h());
    put_f64(grid_.dt());
    put_u64(grid_.n_times());
    os.write(reinterpret_cast<const char*>(values_.data()),
             static_cast<std::streamsize>(values_.size() * sizeof(double)));
  }

 private:
  SpaceTimeGrid grid_;
  std::vector<double> values_;
  std::vector<char> mask_;
  double certified_radius_ = 0.0;
  std::size_t sweeps_ = 0;
  bool stationary_converged_ = true;
};

/// M unit vectors: +-1 in 1-D, equally spaced angles in 2-D and a Fibonacci
/// lattice on the sphere in 3-D.
inline std::vector<Coord> make_directions(std::size_t dim, std::size_t m) {
  std::vector<Coord> out;
  if (dim == 1) {
    out.push_back({-1.0, 0.0, 0.0});
    out.push_back({1.0, 0.0, 0.0});
    return out;
  }
  if (m < 4) throw InvalidArgument("direction count must be at least 4");
  if (dim == 2) {
    for (std::size_t j = 0; j < m; ++j) {
      const double th = 2.0 * std::numbers::pi * static_cast<double>(j) / static_cast<double>(m);
      out.push_back({std::cos(th), std::sin(th), 0.0});
    }
    return out;
  }
  if (dim == 3) {
    const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
    for (std::size_t j = 0; j < m; ++j) {
      const double z = 1.0 - (2.0 * static_cast<double>(j) + 1.0) / static_cast<double>(m);
      const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double th = golden * static_cast<double>(j);
      out.push_back({r * std::cos(th), r * std::sin(th), z});
    }
    return out;
  }
  throw InvalidArgument("unsupported dimension");
}

inline double angle_between(const Coord& a, const Coord& b, std::size_t dim) {
  double dot = 0.0;
  for (std::size_t i = 0; i < dim; ++i) dot += a[i] * b[i];
  return std::acos(std::clamp(dot, -1.0, 1.0));
}

namespace detail {

inline std::vector<char> target_mask(const SpaceTimeGrid& grid, const TargetSet& target) {
  if (target.dim() != grid.dim()) throw InvalidArgument("target and grid dimensions differ");
  std::vector<char> mask(grid.n_nodes(), 0);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < grid.n_nodes(); ++i) {
    const Coord x = grid.node_point(i);
    if (target.distance(std::span<const double>(x.data(), grid.dim())) <= grid.h() * (1.0 + 1e-12)) {
      mask[i] = 1;
      ++hits;
    }
  }
  if (hits == 0) throw InvalidArgument("target set contains no grid node after masking");
  return mask;
}

inline void check_cfl(const SpaceTimeGrid& grid, double k_max) {
  if (grid.dt() * k_max > grid.h() * (1.0 + 1e-12))
    throw CflViolation("CFL condition violated: dt * k_max = " + std::to_string(grid.dt() * k_max) +
                       " exceeds h = " + std::to_string(grid.h()) + " (need dt <= h / k_max)");
}

template <class F>
double node_speed(const F& field, const SpaceTimeGrid& grid, std::size_t k, std::size_t idx) {
  if constexpr (requires { field.speed_at_node(k, idx); }) {
    return field.speed_at_node(k, idx);
  } else {
    const Coord x = grid.node_point(idx);
    return field.speed(grid.time(k), std::span<const double>(x.data(), grid.dim()));
  }
}

inline double certified_radius(const SpaceTimeGrid& grid, const TargetSet& target, double k_min, double k_max) {
  if (!(k_min > 0.0)) return 0.0;
  const Coord origin{};
  const double d0 = target.distance(std::span<const double>(origin.data(), grid.dim()));
  // psi(R) = R + k_max (R + d0) / k_min <= inner radius
  const double r = (grid.inner_radius() - k_max * d0 / k_min) / (1.0 + k_max / k_min);
  return std::max(r, 0.0);
}

template <class F>
double min_speed_of(const F& field) {
  if constexpr (requires { field.min_speed(); }) {
    return field.min_speed();
  } else if constexpr (requires { field.field().model().k_min; }) {
    return field.field().model().k_min;
  } else {
    return 0.0;
  }
}

}  // namespace detail

/// Minimal time to the target for the frozen speeds `speed` (one per node),
/// by Gauss-Seidel sweeps of the semi-Lagrangian update in alternating
/// orderings. Returns the number of sweeps used, or max_sweeps + 1 when the
/// iteration did not settle.
inline std::size_t stationary_solve(const SpaceTimeGrid& grid, std::span<const double> speed,
                                    std::span<const char> mask, std::span<double> values,
                                    const SolverOptions& opt = {}) {
  const std::size_t n = grid.n_nodes(), d = grid.dim();
  const double dt = grid.dt();
  const auto dirs = make_directions(d, opt.directions);
  for (std::size_t i = 0; i < n; ++i) values[i] = mask[i] ? 0.0 : kInf;
  const std::size_t orderings = std::size_t{1} << d;
  const double tol = opt.stationary_tol * dt;
  for (std::size_t sweep = 1; sweep <= opt.max_sweeps; ++sweep) {
    const std::size_t order = (sweep - 1) % orderings;
    double change = 0.0;
    for (std::size_t l = 0; l < n; ++l) {
      // Linear position l in the chosen ordering -> node index.
      std::size_t idx = 0;
      for (std::size_t a = 0; a < d; ++a) {
        std::size_t ia = (l / grid.stride(a)) % grid.count(a);
        if ((order >> a) & 1u) ia = grid.count(a) - 1 - ia;
        idx += ia * grid.stride(a);
      }
      if (mask[idx]) continue;
      const Coord x = grid.node_point(idx);
      const double step = dt * speed[idx];
      double best = values[idx];
      for (const auto& u : dirs) {
        Coord y{};
        for (std::size_t a = 0; a < d; ++a) y[a] = x[a] + step * u[a];
        const Stencil s = grid.stencil(y.data());
        if (!s.inside) continue;
        double self = 0.0, rest = 0.0;
        bool finite = true;
        for (std::size_t c = 0; c < s.size; ++c) {
          const double w = s.weights[c];
          if (w == 0.0) continue;
          if (s.nodes[c] == idx) {
            self += w;
            continue;
          }
          const double v = values[s.nodes[c]];
          if (v == kInf) {
            finite = false;
            break;
          }
          rest += w * v;
        }
        if (!finite || self >= 1.0) continue;
        best = std::min(best, (dt + rest) / (1.0 - self));
      }
      if (best < values[idx]) {
        const double delta = values[idx] == kInf ? kInf : values[idx] - best;
        change = std::max(change, delta);
        values[idx] = best;
      }
    }
    if (change < tol && sweep >= orderings) return sweep;
  }
  return opt.max_sweeps + 1;
}

/// Backward semi-Lagrangian sweep for phi on the whole space-time grid.
template <SpeedFieldLike F>
ValueField solve_value_function(const F& field, const TargetSet& target, const SpaceTimeGrid& grid,
                                const SolverOptions& opt = {}) {
  detail::check_cfl(grid, field.max_speed());
  auto mask = detail::target_mask(grid, target);
  const std::size_t n = grid.n_nodes(), d = grid.dim(), steps = grid.steps();
  const double dt = grid.dt();
  std::vector<double> values(grid.n_times() * n, kInf);
  std::vector<double> speed(n);

  for (std::size_t i = 0; i < n; ++i) speed[i] = detail::node_speed(field, grid, steps, i);
  const std::size_t sweeps =
      stationary_solve(grid, speed, mask, std::span<double>(values).subspan(steps * n, n), opt);

  const auto dirs = make_directions(d, opt.directions);
  for (std::size_t k = steps; k-- > 0;) {
    const std::span<const double> next(values.data() + (k + 1) * n, n);
    double* cur = values.data() + k * n;
    parallel_for(n, opt.workers, [&](std::size_t idx) {
      if (mask[idx]) {
        cur[idx] = 0.0;
        return;
      }
      const Coord x = grid.node_point(idx);
      const double step = dt * detail::node_speed(field, grid, k, idx);
      double best = kInf;
      for (const auto& u : dirs) {
        Coord y{};
        for (std::size_t a = 0; a < d; ++a) y[a] = x[a] + step * u[a];
        best = std::min(best, grid.interpolate(next, y.data()));
      }
      cur[idx] = best == kInf ? kInf : dt + best;
    });
  }

  ValueField out(grid, std::move(values), std::move(mask));
  out.set_certification(detail::certified_radius(grid, target, detail::min_speed_of(field), field.max_speed()));
  out.set_stationary_report(std::min(sweeps, opt.max_sweeps), sweeps <= opt.max_sweeps);
  return out;
}

// ---------------------------------------------------------------------------
// Descent directions
// ---------------------------------------------------------------------------

struct DirectionOptions {
  std::size_t directions = 64;
  /// Probe step h'; nonpositive means dt.
  double probe = 0.0;
  /// Directions within this much of the minimal ratio are selected.
  double tol_select = 1e-3;
  /// A selected set narrower than this angle counts as one direction.
  double cluster_angle = 30.0 * std::numbers::pi / 180.0;
};

/// Descent ratios r(u) = [phi(t + h', x + h' k u) - phi(t, x)] / h' over the
/// sampled directions, with the near-minimal ones selected.
struct DirectionSet {
  std::size_t dim = 0;
  std::vector<Coord> directions;
  std::vector<double> ratios;
  std::vector<std::size_t> selected;
  std::size_t argmin = 0;
  double min_ratio = kInf;
  /// Largest angle between two selected directions.
  double diameter = 0.0;
  bool unique = false;
  /// Minimizer refined below the angular resolution (2-D only; otherwise the
  /// normalized mean of the selected cluster).
  Coord best{};

  bool empty() const { return selected.empty(); }
};

namespace detail {

inline Coord refine_2d(const std::vector<double>& r, std::size_t j) {
  const std::size_t m = r.size();
  const double r0 = r[j], rm = r[(j + m - 1) % m], rp = r[(j + 1) % m];
  double offset = 0.0;
  const double curv = rm - 2.0 * r0 + rp;
  if (curv > 0.0 && std::isfinite(rm) && std::isfinite(rp)) offset = std::clamp(0.5 * (rm - rp) / curv, -0.5, 0.5);
  const double th = 2.0 * std::numbers::pi * (static_cast<double>(j) + offset) / static_cast<double>(m);
  return {std::cos(th), std::sin(th), 0.0};
}

inline Coord refine_around(const DirectionSet& ds, std::size_t j, std::size_t m) {
  if (ds.dim == 2 && ds.directions.size() == m) return refine_2d(ds.ratios, j);
  if (ds.dim == 1) return ds.directions[j];
  // Mean of the selected directions within the cluster angle of j.
  Coord s{};
  for (auto i : ds.selected)
    if (angle_between(ds.directions[i], ds.directions[j], ds.dim) <= std::numbers::pi / 6.0)
      for (std::size_t a = 0; a < ds.dim; ++a) s[a] += ds.directions[i][a];
  const double nn = norm(std::span<const double>(s.data(), ds.dim));
  if (nn == 0.0) return ds.directions[j];
  for (std::size_t a = 0; a < ds.dim; ++a) s[a] /= nn;
  return s;
}

}  // namespace detail

template <SpeedFieldLike F>
DirectionSet descent_directions(const ValueField& phi, const F& field, double t, std::span<const double> x,
                                const DirectionOptions& opt = {}) {
  const auto& grid = phi.grid();
  const std::size_t d = grid.dim();
  DirectionSet ds;
  ds.dim = d;
  const double probe = opt.probe > 0.0 ? opt.probe : grid.dt();
  if (grid.stencil(x.data()).inside) {
    // Grid-resolution target membership, as used by the mask.
    const Stencil s = grid.stencil(x.data());
    bool all_target = true;
    for (std::size_t c = 0; c < s.size; ++c)
      if (s.weights[c] > 0.0 && !phi.on_target(s.nodes[c])) all_target = false;
    if (all_target) return ds;
  } else {
    return ds;
  }
  const double here = phi.value_at(t, x);
  const double k = field.speed(t, x);
  ds.directions = make_directions(d, opt.directions);
  ds.ratios.resize(ds.directions.size());
  for (std::size_t j = 0; j < ds.directions.size(); ++j) {
    Coord y{};
    for (std::size_t a = 0; a < d; ++a) y[a] = x[a] + probe * k * ds.directions[j][a];
    const double v = phi.value_at(t + probe, std::span<const double>(y.data(), d));
    ds.ratios[j] = (v == kInf || here == kInf) ? kInf : (v - here) / probe;
    if (ds.ratios[j] < ds.min_ratio) {
      ds.min_ratio = ds.ratios[j];
      ds.argmin = j;
    }
  }
  if (ds.min_ratio == kInf) return ds;
  for (std::size_t j = 0; j < ds.ratios.size(); ++j)
    if (ds.ratios[j] <= ds.min_ratio + opt.tol_select) ds.selected.push_back(j);
  for (std::size_t a = 0; a < ds.selected.size(); ++a)
    for (std::size_t b = a + 1; b < ds.selected.size(); ++b)
      ds.diameter = std::max(ds.diameter, angle_between(ds.directions[ds.selected[a]],
                                                        ds.directions[ds.selected[b]], d));
  ds.unique = ds.diameter < opt.cluster_angle;
  ds.best = detail::refine_around(ds, ds.argmin, opt.directions);
  return ds;
}

/// Normalized gradient: minus the unique maximal-descent direction, or
/// nullopt when the near-minimal directions do not form one cluster.
template <SpeedFieldLike F>
std::optional<Coord> normalized_gradient(const ValueField& phi, const F& field, double t,
                                         std::span<const double> x, const DirectionOptions& opt = {}) {
  const auto ds = descent_directions(phi, field, t, x, opt);
  if (ds.empty()) {
    if (ds.ratios.empty()) throw InvalidArgument("normalized_gradient: point lies on the target");
    throw InvalidArgument("normalized_gradient: value is infinite at the point");
  }
  if (!ds.unique) return std::nullopt;
  Coord g{};
  for (std::size_t a = 0; a < ds.dim; ++a) g[a] = -ds.best[a];
  return g;
}

// ---------------------------------------------------------------------------
// Tracing
// ---------------------------------------------------------------------------

/// Explicit Euler integration of x' = -k grad^ phi from (t0, x0), stopping at
/// the first grid time with target distance <= h. The returned path spans the
/// whole grid horizon and is constant before t0 and after exit.
template <SpeedFieldLike F>
PolylineTrajectory trace_optimal_trajectory(const ValueField& phi, const F& field, const TargetSet& target,
                                            double t0, std::span<const double> x0,
                                            const DirectionOptions& opt = {}) {
  const auto& grid = phi.grid();
  const std::size_t d = grid.dim();
  if (x0.size() != d) throw InvalidArgument("trace: start point has wrong dimension");
  if (!grid.inside(x0)) throw TraceFailure("trace: start point outside the grid box");
  const std::size_t k0 = grid.nearest_step(t0);
  const double h = grid.h(), dt = grid.dt();
  std::vector<double> pts;
  pts.reserve(grid.n_times() * d);
  for (std::size_t k = 0; k <= k0; ++k) pts.insert(pts.end(), x0.begin(), x0.end());
  Coord x = to_coord(x0);
  Coord prev{};
  bool have_prev = false;
  double exit_time = kInf;
  std::size_t k = k0;
  for (;; ++k) {
    const std::span<const double> xs(x.data(), d);
    if (target.distance(xs) <= h * (1.0 + 1e-12)) {
      exit_time = static_cast<double>(k - k0) * dt;
      break;
    }
    if (k == grid.steps())
      throw TraceFailure("trace: target not reached within the horizon (box or t_max too small)");
    const double t = grid.time(k);
    const auto ds = descent_directions(phi, field, t, xs, opt);
    if (ds.empty()) throw TraceFailure("trace: value function is infinite along the path");
    std::size_t pick = ds.argmin;
    if (!ds.unique && have_prev) {
      // Several optimal directions: keep the one closest to the last step.
      double best = kInf;
      for (auto j : ds.selected) {
        const double ang = angle_between(ds.directions[j], prev, d);
        if (ang < best - 1e-12) {
          best = ang;
          pick = j;
        }
      }
    }
    const Coord u = detail::refine_around(ds, pick, opt.directions);
    const double step = dt * field.speed(t, xs);
    for (std::size_t a = 0; a < d; ++a) x[a] += step * u[a];
    prev = u;
    have_prev = true;
    pts.insert(pts.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d));
  }
  while (pts.size() < grid.n_times() * d) pts.insert(pts.end(), x.begin(), x.begin() + static_cast<std::ptrdiff_t>(d));
  return PolylineTrajectory(d, dt, k0, std::move(pts), exit_time);
}

/// CSV with columns t, x0.. for one trajectory.
inline void write_trajectory_csv(std::ostream& os, const PolylineTrajectory& tr) {
  const auto prec = os.precision(17);
  os << "t";
  for (std::size_t a = 0; a < tr.dim(); ++a) os << ",x" << a;
  os << '\n';
  for (std::size_t k = 0; k < tr.n_nodes(); ++k) {
    os << static_cast<double>(k) * tr.dt();
    for (double v : tr.node(k)) os << ',' << v;
    os << '\n';
  }
  os.precision(prec);
}

}  // namespace mtmfg
