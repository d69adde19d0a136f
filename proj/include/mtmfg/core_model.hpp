#pragma once

// Domain types shared by every module: target sets, the space-time grid,
// particle measures and sampled trajectories.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "mtmfg/error.hpp"

namespace mtmfg {

/// Largest supported spatial dimension.
inline constexpr std::size_t kMaxDim = 3;

/// Fixed-capacity coordinate buffer; only the first `dim` entries are used.
using Coord = std::array<double, kMaxDim>;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double norm(std::span<const double> x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return std::sqrt(s);
}

inline double distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return std::sqrt(s);
}

inline Coord to_coord(std::span<const double> x) {
  Coord c{};
  std::copy(x.begin(), x.end(), c.begin());
  return c;
}

// ---------------------------------------------------------------------------
// Target sets
// ---------------------------------------------------------------------------

struct Ball {
  std::vector<double> center;
  double radius = 0.0;
};

struct Box {
  std::vector<double> lo;
  std::vector<double> hi;
};

/// Finite point set thickened by `tolerance`.
struct PointCloud {
  std::vector<double> points;  // flat, dim entries per point
  double tolerance = 0.0;
};

using TargetPrimitive = std::variant<Ball, Box, PointCloud>;

/// Finite union of closed primitives.
class TargetSet {
 public:
  TargetSet() = default;

  TargetSet(std::size_t dim, std::vector<TargetPrimitive> primitives)
      : dim_(dim), primitives_(std::move(primitives)) {
    if (dim_ == 0 || dim_ > kMaxDim)
      throw InvalidArgument("target set: unsupported dimension " + std::to_string(dim_));
    if (primitives_.empty()) throw InvalidArgument("target set must contain at least one primitive");
    for (const auto& p : primitives_) std::visit([this](const auto& q) { validate(q); }, p);
  }

  static TargetSet ball(std::vector<double> center, double radius) {
    const std::size_t d = center.size();
    return TargetSet(d, {Ball{std::move(center), radius}});
  }

  static TargetSet point(std::vector<double> x, double tolerance = 0.0) {
    const std::size_t d = x.size();
    return TargetSet(d, {PointCloud{std::move(x), tolerance}});
  }

  std::size_t dim() const noexcept { return dim_; }
  const std::vector<TargetPrimitive>& primitives() const noexcept { return primitives_; }

  /// Euclidean distance from x to the union of primitives.
  double distance(std::span<const double> x) const {
    double best = kInf;
    for (const auto& p : primitives_)
      best = std::min(best, std::visit([&](const auto& q) { return distance_to(q, x); }, p));
    return best;
  }

 private:
  void validate(const Ball& b) const {
    if (b.center.size() != dim_ || !(b.radius >= 0.0))
      throw InvalidArgument("ball primitive: bad center dimension or negative radius");
  }
  void validate(const Box& b) const {
    if (b.lo.size() != dim_ || b.hi.size() != dim_)
      throw InvalidArgument("box primitive: dimension mismatch");
    for (std::size_t a = 0; a < dim_; ++a)
      if (!(b.lo[a] <= b.hi[a])) throw InvalidArgument("box primitive: lo > hi");
  }
  void validate(const PointCloud& c) const {
    if (c.points.empty() || c.points.size() % dim_ != 0)
      throw InvalidArgument("point-cloud primitive: empty or ragged point list");
    if (!(c.tolerance >= 0.0)) throw InvalidArgument("point-cloud primitive: negative tolerance");
  }

  double distance_to(const Ball& b, std::span<const double> x) const {
    return std::max(0.0, mtmfg::distance(x, b.center) - b.radius);
  }
  double distance_to(const Box& b, std::span<const double> x) const {
    double s = 0.0;
    for (std::size_t a = 0; a < dim_; ++a) {
      const double d = std::max({b.lo[a] - x[a], 0.0, x[a] - b.hi[a]});
      s += d * d;
    }
    return std::sqrt(s);
  }
  double distance_to(const PointCloud& c, std::span<const double> x) const {
    double best = kInf;
    const std::span<const double> pts(c.points);
    for (std::size_t i = 0; i < pts.size(); i += dim_)
      best = std::min(best, mtmfg::distance(x, pts.subspan(i, dim_)));
    return std::max(0.0, best - c.tolerance);
  }

  std::size_t dim_ = 0;
  std::vector<TargetPrimitive> primitives_;
};

inline double target_distance(const TargetSet& target, std::span<const double> x) {
  return target.distance(x);
}

// ---------------------------------------------------------------------------
// Space-time grid
// ---------------------------------------------------------------------------

/// Interpolation stencil of a point inside the grid box.
struct Stencil {
  std::array<std::size_t, (1u << kMaxDim)> nodes{};
  std::array<double, (1u << kMaxDim)> weights{};
  std::size_t size = 0;
  bool inside = false;
};

/// Uniform tensor grid on a box, with a uniform time axis t_k = k * dt,
/// k = 0..steps(). Node indices are row-major with the last axis fastest.
class SpaceTimeGrid {
 public:
  SpaceTimeGrid() = default;

  SpaceTimeGrid(std::vector<double> lo, std::vector<double> hi, double h, double dt, double t_max)
      : lo_(std::move(lo)), hi_(std::move(hi)), h_(h), dt_(dt) {
    dim_ = lo_.size();
    if (dim_ == 0 || dim_ > kMaxDim || hi_.size() != dim_)
      throw InvalidArgument("grid: box must have 1 to 3 axes with matching lo/hi");
    if (!(h > 0.0)) throw InvalidArgument("grid: spacing h must be positive");
    if (!(dt > 0.0)) throw InvalidArgument("grid: time step dt must be positive");
    if (!(t_max >= dt * (1.0 - 1e-12))) throw InvalidArgument("grid: t_max must be at least dt");
    std::size_t n = 1;
    for (std::size_t a = 0; a < dim_; ++a) {
      if (!(hi_[a] > lo_[a])) throw InvalidArgument("grid: box axis with hi <= lo");
      const auto cells = static_cast<std::size_t>(std::floor((hi_[a] - lo_[a]) / h + 1e-9));
      if (cells < 1) throw InvalidArgument("grid: box narrower than one cell");
      counts_[a] = cells + 1;
      hi_[a] = lo_[a] + static_cast<double>(cells) * h;
      n *= counts_[a];
    }
    n_nodes_ = n;
    std::size_t stride = 1;
    for (std::size_t a = dim_; a-- > 0;) {
      strides_[a] = stride;
      stride *= counts_[a];
    }
    steps_ = static_cast<std::size_t>(std::ceil(t_max / dt - 1e-9));
    if (steps_ == 0) steps_ = 1;
  }

  std::size_t dim() const noexcept { return dim_; }
  double lo(std::size_t a) const { return lo_[a]; }
  double hi(std::size_t a) const { return hi_[a]; }
  const std::vector<double>& lo() const noexcept { return lo_; }
  const std::vector<double>& hi() const noexcept { return hi_; }
  double h() const noexcept { return h_; }
  double dt() const noexcept { return dt_; }
  /// Number of time steps; the time axis has steps() + 1 nodes.
  std::size_t steps() const noexcept { return steps_; }
  std::size_t n_times() const noexcept { return steps_ + 1; }
  double t_max() const noexcept { return static_cast<double>(steps_) * dt_; }
  double time(std::size_t k) const noexcept { return static_cast<double>(k) * dt_; }
  std::size_t count(std::size_t a) const { return counts_[a]; }
  std::size_t stride(std::size_t a) const { return strides_[a]; }
  std::size_t n_nodes() const noexcept { return n_nodes_; }

  /// Index of the last time node at or before t, clamped to [0, steps()].
  std::size_t step_at_or_before(double t) const {
    if (!(t > 0.0)) return 0;
    const double s = std::floor(t / dt_ + 1e-9);
    return s >= static_cast<double>(steps_) ? steps_ : static_cast<std::size_t>(s);
  }

  std::size_t nearest_step(double t) const {
    if (!(t > 0.0)) return 0;
    const double s = std::round(t / dt_);
    return s >= static_cast<double>(steps_) ? steps_ : static_cast<std::size_t>(s);
  }

  Coord node_point(std::size_t idx) const {
    Coord x{};
    for (std::size_t a = 0; a < dim_; ++a) {
      const std::size_t i = (idx / strides_[a]) % counts_[a];
      x[a] = lo_[a] + static_cast<double>(i) * h_;
    }
    return x;
  }

  std::size_t axis_index(std::size_t idx, std::size_t a) const {
    return (idx / strides_[a]) % counts_[a];
  }

  bool inside(std::span<const double> x) const {
    const double tol = 1e-12 * h_;
    for (std::size_t a = 0; a < dim_; ++a)
      if (x[a] < lo_[a] - tol || x[a] > hi_[a] + tol) return false;
    return true;
  }

  /// Distance from the origin to the box boundary (negative when the origin
  /// lies outside the box).
  double inner_radius() const {
    double r = kInf;
    for (std::size_t a = 0; a < dim_; ++a) r = std::min({r, -lo_[a], hi_[a]});
    return r;
  }

  bool contains_ball(double radius) const { return inner_radius() >= radius; }

  /// Same spatial nodes and time axis.
  bool same_as(const SpaceTimeGrid& o) const {
    if (dim_ != o.dim_ || steps_ != o.steps_ || h_ != o.h_ || dt_ != o.dt_) return false;
    for (std::size_t a = 0; a < dim_; ++a)
      if (lo_[a] != o.lo_[a] || counts_[a] != o.counts_[a]) return false;
    return true;
  }

  /// Multilinear interpolation stencil of x.
  Stencil stencil(const double* x) const {
    Stencil s;
    std::array<std::size_t, kMaxDim> base{};
    std::array<double, kMaxDim> frac{};
    const double tol = 1e-12;
    for (std::size_t a = 0; a < dim_; ++a) {
      const double u = (x[a] - lo_[a]) / h_;
      const double top = static_cast<double>(counts_[a] - 1);
      if (u < -tol || u > top + tol) return s;
      double cell = std::floor(u);
      if (cell < 0.0) cell = 0.0;
      if (cell > top - 1.0) cell = top - 1.0;
      base[a] = static_cast<std::size_t>(cell);
      frac[a] = std::clamp(u - cell, 0.0, 1.0);
    }
    s.inside = true;
    s.size = std::size_t{1} << dim_;
    for (std::size_t corner = 0; corner < s.size; ++corner) {
      std::size_t idx = 0;
      double w = 1.0;
      for (std::size_t a = 0; a < dim_; ++a) {
        const bool up = (corner >> a) & 1u;
        idx += (base[a] + (up ? 1 : 0)) * strides_[a];
        w *= up ? frac[a] : 1.0 - frac[a];
      }
      s.nodes[corner] = idx;
      s.weights[corner] = w;
    }
    return s;
  }

  /// Interpolates a nodal slice at x; +inf outside the box or when a corner
  /// with positive weight is +inf.
  double interpolate(std::span<const double> slice, const double* x) const {
    const Stencil s = stencil(x);
    if (!s.inside) return kInf;
    double v = 0.0;
    for (std::size_t c = 0; c < s.size; ++c) {
      const double w = s.weights[c];
      if (w == 0.0) continue;
      const double f = slice[s.nodes[c]];
      if (f == kInf) return kInf;
      v += w * f;
    }
    return v;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> lo_, hi_;
  double h_ = 0.0, dt_ = 0.0;
  std::array<std::size_t, kMaxDim> counts_{}, strides_{};
  std::size_t n_nodes_ = 0;
  std::size_t steps_ = 0;
};

// ---------------------------------------------------------------------------
// Measures and trajectories
// ---------------------------------------------------------------------------

/// Weighted particle cloud. Weights are nonnegative and sum to one, except
/// for the zero-atom measure returned by empty().
class EmpiricalMeasure {
 public:
  EmpiricalMeasure() = default;

  EmpiricalMeasure(std::size_t dim, std::vector<double> coords, std::vector<double> weights)
      : dim_(dim), coords_(std::move(coords)), weights_(std::move(weights)) {
    if (dim_ == 0 || dim_ > kMaxDim) throw InvalidArgument("measure: unsupported dimension");
    if (coords_.size() != dim_ * weights_.size())
      throw InvalidArgument("measure: coordinate count does not match weight count");
    if (weights_.empty()) throw InvalidArgument("measure: no atoms");
    double total = 0.0;
    for (double w : weights_) {
      if (!(w >= 0.0)) throw InvalidArgument("measure: negative or NaN weight");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw InvalidArgument("measure: weights sum to " + std::to_string(total) + ", expected 1");
  }

  /// Zero-atom measure (total mass 0).
  static EmpiricalMeasure empty(std::size_t dim) {
    EmpiricalMeasure m;
    m.dim_ = dim;
    return m;
  }

  static EmpiricalMeasure dirac(std::span<const double> x) {
    return EmpiricalMeasure(x.size(), std::vector<double>(x.begin(), x.end()), {1.0});
  }

  /// Equal weights on the given points.
  static EmpiricalMeasure uniform(std::size_t dim, std::vector<double> coords) {
    const std::size_t n = dim == 0 ? 0 : coords.size() / dim;
    std::vector<double> w(n, n == 0 ? 0.0 : 1.0 / static_cast<double>(n));
    if (n > 0) {
      // Absorb rounding so the weights sum to 1 as closely as possible.
      const double s = std::accumulate(w.begin(), w.end(), 0.0);
      w.back() += 1.0 - s;
    }
    return EmpiricalMeasure(dim, std::move(coords), std::move(w));
  }

  std::size_t dim() const noexcept { return dim_; }
  std::size_t size() const noexcept { return weights_.size(); }
  bool is_empty() const noexcept { return weights_.empty(); }
  std::span<const double> point(std::size_t i) const {
    return std::span<const double>(coords_).subspan(i * dim_, dim_);
  }
  double weight(std::size_t i) const { return weights_[i]; }
  const std::vector<double>& coords() const noexcept { return coords_; }
  const std::vector<double>& weights() const noexcept { return weights_; }

  double total_mass() const { return std::accumulate(weights_.begin(), weights_.end(), 0.0); }

  /// Mass of the closed ball of radius r centred at the origin.
  double mass_in_ball(double r) const {
    double m = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
      if (norm(point(i)) <= r * (1.0 + 1e-12) + 1e-15) m += weights_[i];
    return m;
  }

  /// Largest atom norm among atoms of positive weight.
  double support_radius() const {
    double r = 0.0;
    for (std::size_t i = 0; i < size(); ++i)
      if (weights_[i] > 0.0) r = std::max(r, norm(point(i)));
    return r;
  }

 private:
  std::size_t dim_ = 0;
  std::vector<double> coords_;
  std::vector<double> weights_;
};

/// Path sampled at t_k = k * dt. It is constant on [0, t0] where
/// t0 = start_step * dt, and constant after t0 + exit_time when it exits.
class PolylineTrajectory {
 public:
  PolylineTrajectory() = default;

  PolylineTrajectory(std::size_t dim, double dt, std::size_t start_step, std::vector<double> points,
                     double exit_time)
      : dim_(dim), dt_(dt), start_step_(start_step), points_(std::move(points)), exit_time_(exit_time) {
    if (dim_ == 0 || dim_ > kMaxDim) throw InvalidArgument("trajectory: unsupported dimension");
    if (!(dt_ > 0.0)) throw InvalidArgument("trajectory: dt must be positive");
    if (points_.empty() || points_.size() % dim_ != 0)
      throw InvalidArgument("trajectory: empty or ragged node list");
    if (start_step_ >= n_nodes()) throw InvalidArgument("trajectory: start step beyond horizon");
    if (!(exit_time_ >= 0.0)) throw InvalidArgument("trajectory: negative exit time");
    for (std::size_t k = 0; k < start_step_; ++k)
      if (!same_node(k, start_step_)) throw InvalidArgument("trajectory: not constant before t0");
    if (exit_time_ < kInf) {
      const std::size_t e = start_step_ + static_cast<std::size_t>(std::llround(exit_time_ / dt_));
      for (std::size_t k = e + 1; k < n_nodes(); ++k)
        if (!same_node(k, std::min(e, n_nodes() - 1)))
          throw InvalidArgument("trajectory: moves after its exit time");
    }
  }

  /// Constant path at x over n_steps steps.
  static PolylineTrajectory stationary(std::span<const double> x, double dt, std::size_t n_steps,
                                       double exit_time) {
    std::vector<double> pts;
    pts.reserve(x.size() * (n_steps + 1));
    for (std::size_t k = 0; k <= n_steps; ++k) pts.insert(pts.end(), x.begin(), x.end());
    return PolylineTrajectory(x.size(), dt, 0, std::move(pts), exit_time);
  }

  std::size_t dim() const noexcept { return dim_; }
  double dt() const noexcept { return dt_; }
  std::size_t start_step() const noexcept { return start_step_; }
  double t0() const noexcept { return static_cast<double>(start_step_) * dt_; }
  std::size_t n_nodes() const noexcept { return dim_ == 0 ? 0 : points_.size() / dim_; }
  double horizon() const noexcept { return static_cast<double>(n_nodes() - 1) * dt_; }
  /// Exit time relative to t0; +inf when the path never reaches its target.
  double exit_time() const noexcept { return exit_time_; }
  bool exited() const noexcept { return exit_time_ < kInf; }
  const std::vector<double>& points() const noexcept { return points_; }

  std::span<const double> node(std::size_t k) const {
    return std::span<const double>(points_).subspan(k * dim_, dim_);
  }
  std::span<const double> initial_point() const { return node(start_step_); }
  std::span<const double> final_point() const { return node(n_nodes() - 1); }

  /// Position at time t by linear interpolation; frozen past the horizon.
  Coord position_at(double t) const {
    Coord x{};
    const std::size_t last = n_nodes() - 1;
    if (!(t > 0.0)) {
      std::copy_n(points_.begin(), dim_, x.begin());
      return x;
    }
    const double s = t / dt_;
    if (s >= static_cast<double>(last)) {
      std::copy_n(points_.begin() + static_cast<std::ptrdiff_t>(last * dim_), dim_, x.begin());
      return x;
    }
    auto k = static_cast<std::size_t>(std::floor(s));
    double f = s - static_cast<double>(k);
    if (f < 1e-12) f = 0.0;
    for (std::size_t a = 0; a < dim_; ++a) {
      const double p = points_[k * dim_ + a];
      const double q = points_[std::min(k + 1, last) * dim_ + a];
      x[a] = f == 0.0 ? p : p + f * (q - p);
    }
    return x;
  }

  /// Largest distance between consecutive nodes.
  double max_step() const {
    double m = 0.0;
    for (std::size_t k = 0; k + 1 < n_nodes(); ++k) m = std::max(m, distance(node(k), node(k + 1)));
    return m;
  }

 private:
  bool same_node(std::size_t a, std::size_t b) const {
    for (std::size_t i = 0; i < dim_; ++i)
      if (points_[a * dim_ + i] != points_[b * dim_ + i]) return false;
    return true;
  }

  std::size_t dim_ = 0;
  double dt_ = 0.0;
  std::size_t start_step_ = 0;
  std::vector<double> points_;
  double exit_time_ = kInf;
};

/// Weighted ensemble of trajectories on a common time grid. `sources[j]` is
/// the index of the initial-measure atom trajectory j starts from.
struct TrajectoryBundle {
  std::vector<PolylineTrajectory> trajectories;
  std::vector<double> weights;
  std::vector<std::size_t> sources;

  std::size_t size() const noexcept { return trajectories.size(); }

  void validate() const {
    if (trajectories.empty()) throw InvalidArgument("bundle: no trajectories");
    if (weights.size() != trajectories.size() || sources.size() != trajectories.size())
      throw InvalidArgument("bundle: weights/sources length mismatch");
    const auto& ref = trajectories.front();
    double total = 0.0;
    for (std::size_t j = 0; j < size(); ++j) {
      const auto& tr = trajectories[j];
      if (tr.dim() != ref.dim() || tr.dt() != ref.dt() || tr.n_nodes() != ref.n_nodes())
        throw InvalidArgument("bundle: trajectories do not share a time grid");
      if (!(weights[j] >= 0.0)) throw InvalidArgument("bundle: negative weight");
      total += weights[j];
    }
    if (std::abs(total - 1.0) > 1e-12)
      throw InvalidArgument("bundle: weights sum to " + std::to_string(total) + ", expected 1");
  }

  std::size_t dim() const { return trajectories.empty() ? 0 : trajectories.front().dim(); }
  double dt() const { return trajectories.empty() ? 0.0 : trajectories.front().dt(); }
  double horizon() const { return trajectories.empty() ? 0.0 : trajectories.front().horizon(); }
};

// ---------------------------------------------------------------------------
// A-priori bounds
// ---------------------------------------------------------------------------

struct ExitBounds {
  double exit_time;  // T(R): upper bound on the value function on B_R
  double radius;     // psi(R): radius of a ball containing optimal paths from B_R
};

/// Bounds obtained from the path that moves at speed k_min to the origin and
/// then to the target point nearest the origin.
inline ExitBounds psi_T_bounds(const TargetSet& target, double k_min, double k_max, double R) {
  if (!(k_min > 0.0)) throw InvalidArgument("psi_T_bounds: k_min must be positive");
  if (!(k_max >= k_min)) throw InvalidArgument("psi_T_bounds: k_max must be at least k_min");
  if (!(R >= 0.0)) throw InvalidArgument("psi_T_bounds: negative radius");
  const Coord origin{};
  const double d0 = target.distance(std::span<const double>(origin.data(), target.dim()));
  const double T = (R + d0) / k_min;
  return {T, R + k_max * T};
}

/// min over populations of the initial mass inside the closed ball B_R.
inline double phi_support_profile(std::span<const EmpiricalMeasure> m0, double R) {
  if (!(R >= 0.0)) throw InvalidArgument("phi_support_profile: negative radius");
  double v = 1.0;
  for (const auto& m : m0) v = std::min(v, m.mass_in_ball(R));
  return std::clamp(v, 0.0, 1.0);
}

/// True when every step satisfies |x_{k+1} - x_k| <= speed_cap * dt * (1 + rel_tol).
inline bool is_admissible(const PolylineTrajectory& tr, double speed_cap, double rel_tol = 1e-9) {
  return tr.max_step() <= speed_cap * tr.dt() * (1.0 + rel_tol);
}

}  // namespace mtmfg
