#pragma once

// Exponential congestion law and the space-time speed fields it induces.

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <functional>
#include <numbers>
#include <ostream>
#include <span>
#include <utility>
#include <vector>

#include "mtmfg/core_model.hpp"
#include "mtmfg/error.hpp"
#include "mtmfg/parallel.hpp"
#include "mtmfg/transport.hpp"

namespace mtmfg {

/// k = k_min + (k_max - k_min) * exp(-a_self * rho_own - a_cross * rho_other)
struct SpeedModel {
  double k_min = 1.0;
  double k_max = 1.0;
  double sigma = 0.1;
  double a_self = 0.0;
  double a_cross = 0.0;

  void validate() const {
    if (!(k_min > 0.0)) throw InvalidArgument("speed model: k_min must be positive");
    if (!(k_max >= k_min)) throw InvalidArgument("speed model: k_max must be at least k_min");
    if (!(sigma > 0.0)) throw InvalidArgument("speed model: sigma must be positive");
    if (!(a_self >= 0.0) || !(a_cross >= 0.0))
      throw InvalidArgument("speed model: congestion sensitivities must be nonnegative");
  }

  bool congestion_off() const { return (a_self == 0.0 && a_cross == 0.0) || k_min == k_max; }

  double from_density(double rho_own, double rho_other) const {
    return k_min + (k_max - k_min) * std::exp(-a_self * rho_own - a_cross * rho_other);
  }
};

/// Mixture (1/(N-1)) sum_{j != i} m_j; the zero-atom measure when N = 1.
inline EmpiricalMeasure hat_measure(std::span<const EmpiricalMeasure> m, std::size_t i) {
  if (i >= m.size()) throw InvalidArgument("hat_measure: population index out of range");
  const std::size_t dim = m[i].dim();
  if (m.size() == 1) return EmpiricalMeasure::empty(dim);
  const double scale = 1.0 / static_cast<double>(m.size() - 1);
  std::vector<double> coords, weights;
  for (std::size_t j = 0; j < m.size(); ++j) {
    if (j == i) continue;
    if (m[j].dim() != dim) throw InvalidArgument("hat_measure: dimension mismatch");
    coords.insert(coords.end(), m[j].coords().begin(), m[j].coords().end());
    for (double w : m[j].weights()) weights.push_back(w * scale);
  }
  if (m.size() == 2) return EmpiricalMeasure(dim, std::move(coords), std::move(weights));
  double total = 0.0;
  for (double w : weights) total += w;
  // Rescaling by 1/(N-1) can leave rounding in the total.
  auto it = std::max_element(weights.begin(), weights.end());
  *it += 1.0 - total;
  return EmpiricalMeasure(dim, std::move(coords), std::move(weights));
}

/// Normalization constant (2 pi sigma^2)^(-d/2) of the isotropic Gaussian.
inline double gaussian_peak(std::size_t dim, double sigma) {
  return std::pow(2.0 * std::numbers::pi * sigma * sigma, -0.5 * static_cast<double>(dim));
}

/// sup |grad G_sigma|, attained at radius sigma.
inline double gaussian_gradient_bound(std::size_t dim, double sigma) {
  return gaussian_peak(dim, sigma) * std::exp(-0.5) / sigma;
}

inline double kernel_density(std::span<const double> coords, std::span<const double> weights,
                             std::size_t dim, std::span<const double> x, double sigma) {
  if (!(sigma > 0.0)) throw InvalidArgument("kernel_density: sigma must be positive");
  const double inv = 1.0 / (2.0 * sigma * sigma);
  double rho = 0.0;
  for (std::size_t j = 0; j < weights.size(); ++j) {
    double r2 = 0.0;
    for (std::size_t a = 0; a < dim; ++a) {
      const double d = x[a] - coords[j * dim + a];
      r2 += d * d;
    }
    rho += weights[j] * std::exp(-r2 * inv);
  }
  return rho * gaussian_peak(dim, sigma);
}

/// Gaussian kernel density estimate of mu at x.
inline double kernel_density(const EmpiricalMeasure& mu, std::span<const double> x, double sigma) {
  return kernel_density(mu.coords(), mu.weights(), mu.dim(), x, sigma);
}

/// Congestion speed K(mu, nu, x).
inline double speed(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, std::span<const double> x,
                    const SpeedModel& model) {
  const double own = model.a_self == 0.0 ? 0.0 : kernel_density(mu, x, model.sigma);
  const double other = model.a_cross == 0.0 || nu.is_empty() ? 0.0 : kernel_density(nu, x, model.sigma);
  return model.from_density(own, other);
}

/// Lipschitz constant of x -> K(mu, nu, x).
inline double speed_lipschitz_x(const SpeedModel& model, std::size_t dim) {
  return (model.k_max - model.k_min) * (model.a_self + model.a_cross) *
         gaussian_gradient_bound(dim, model.sigma);
}

/// Lipschitz constant of mu -> K(mu, nu, x) in W_1.
inline double speed_lipschitz_w1(const SpeedModel& model, std::size_t dim) {
  return (model.k_max - model.k_min) * model.a_self * gaussian_gradient_bound(dim, model.sigma);
}

// ---------------------------------------------------------------------------
// Speed fields
// ---------------------------------------------------------------------------

/// Anything that yields a speed cap k(t, x) bounded by max_speed().
template <class F>
concept SpeedFieldLike = requires(const F& f, double t, std::span<const double> x) {
  { f.speed(t, x) } -> std::convertible_to<double>;
  { f.max_speed() } -> std::convertible_to<double>;
};

struct ConstantSpeed {
  double value = 1.0;
  double speed(double, std::span<const double>) const { return value; }
  double max_speed() const { return value; }
  double min_speed() const { return value; }
};

/// Time-independent speed given by a function of position.
struct FunctionSpeed {
  std::function<double(std::span<const double>)> fn;
  double bound = 1.0;
  double lower = 0.0;
  double speed(double, std::span<const double> x) const { return fn(x); }
  double max_speed() const { return bound; }
  double min_speed() const { return lower; }
};

/// Speed fields of all populations induced by a family of measure flows.
///
/// For every grid time and population the field keeps the particle snapshot
/// m_t^i and its kernel density sampled at the grid nodes. Off-node densities
/// are interpolated multilinearly; off-grid times use the snapshot at or
/// before t, and times past the horizon use the last one.
class CongestionField {
 public:
  CongestionField(SpaceTimeGrid grid, SpeedModel model, std::vector<std::vector<WeightedPoints>> snapshots,
                  std::size_t workers = 1)
      : grid_(std::move(grid)), model_(model), snapshots_(std::move(snapshots)) {
    model_.validate();
    n_pop_ = snapshots_.size();
    if (n_pop_ == 0) throw InvalidArgument("speed field: no populations");
    for (const auto& s : snapshots_)
      if (s.size() != grid_.n_times()) throw InvalidArgument("speed field: snapshot count differs from grid");
    const std::size_t nodes = grid_.n_nodes();
    density_.assign(n_pop_ * grid_.n_times(), {});
    if (model_.congestion_off()) return;
    parallel_for(n_pop_ * grid_.n_times(), workers, [&](std::size_t job) {
      const std::size_t pop = job / grid_.n_times(), k = job % grid_.n_times();
      density_[job].assign(nodes, 0.0);
      deposit(snapshots_[pop][k], density_[job]);
    });
  }

  const SpaceTimeGrid& grid() const noexcept { return grid_; }
  const SpeedModel& model() const noexcept { return model_; }
  std::size_t populations() const noexcept { return n_pop_; }
  double max_speed() const noexcept { return model_.k_max; }

  /// Snapshot index used for time t.
  std::size_t snapshot_index(double t) const { return grid_.step_at_or_before(t); }

  const WeightedPoints& snapshot(std::size_t pop, std::size_t k) const { return snapshots_[pop][k]; }

  /// Nodal density of population pop at step k.
  std::span<const double> density(std::size_t pop, std::size_t k) const {
    return density_[pop * grid_.n_times() + k];
  }

  /// Speed of population pop at (t, x) from the gridded densities.
  double speed(std::size_t pop, double t, std::span<const double> x) const {
    if (model_.congestion_off()) return model_.k_max;
    const std::size_t k = snapshot_index(t);
    const Stencil s = grid_.stencil(x.data());
    if (!s.inside) return model_.from_density(0.0, 0.0);  // no mass is deposited outside the box
    double own = 0.0, other = 0.0;
    for (std::size_t c = 0; c < s.size; ++c) {
      if (s.weights[c] == 0.0) continue;
      own += s.weights[c] * density(pop, k)[s.nodes[c]];
      other += s.weights[c] * hat_density_at(pop, k, s.nodes[c]);
    }
    return model_.from_density(own, other);
  }

  /// Speed of population pop at step k and grid node idx.
  double speed_at_node(std::size_t pop, std::size_t k, std::size_t idx) const {
    if (model_.congestion_off()) return model_.k_max;
    return model_.from_density(density(pop, k)[idx], hat_density_at(pop, k, idx));
  }

  /// Speed from exact kernel sums over the snapshot (no grid interpolation).
  double exact_speed(std::size_t pop, double t, std::span<const double> x) const {
    if (model_.congestion_off()) return model_.k_max;
    const std::size_t k = snapshot_index(t);
    const std::size_t d = grid_.dim();
    const auto& own = snapshots_[pop][k];
    double rho_own = kernel_density(own.coords, own.weights, d, x, model_.sigma);
    double rho_other = 0.0;
    if (n_pop_ > 1) {
      for (std::size_t j = 0; j < n_pop_; ++j) {
        if (j == pop) continue;
        const auto& o = snapshots_[j][k];
        rho_other += kernel_density(o.coords, o.weights, d, x, model_.sigma);
      }
      rho_other /= static_cast<double>(n_pop_ - 1);
    }
    return model_.from_density(rho_own, rho_other);
  }

  /// View of one population's field, usable wherever SpeedFieldLike is.
  class Population {
   public:
    Population(const CongestionField& f, std::size_t pop) : f_(&f), pop_(pop) {}
    double speed(double t, std::span<const double> x) const { return f_->speed(pop_, t, x); }
    double max_speed() const { return f_->max_speed(); }
    double speed_at_node(std::size_t k, std::size_t idx) const { return f_->speed_at_node(pop_, k, idx); }
    const CongestionField& field() const { return *f_; }
    std::size_t index() const { return pop_; }

   private:
    const CongestionField* f_;
    std::size_t pop_;
  };

  Population population(std::size_t pop) const {
    if (pop >= n_pop_) throw InvalidArgument("speed field: population index out of range");
    return Population(*this, pop);
  }

  /// CSV grid dump of one population's density: step, t, x..., rho.
  void write_density_csv(std::ostream& os, std::size_t pop) const {
    const auto prec = os.precision(17);
    os << "step,t";
    for (std::size_t a = 0; a < grid_.dim(); ++a) os << ",x" << a;
    os << ",rho\n";
    for (std::size_t k = 0; k < grid_.n_times(); ++k) {
      const auto rho = density(pop, k);
      for (std::size_t i = 0; i < grid_.n_nodes(); ++i) {
        const Coord x = grid_.node_point(i);
        os << k << ',' << grid_.time(k);
        for (std::size_t a = 0; a < grid_.dim(); ++a) os << ',' << x[a];
        os << ',' << (rho.empty() ? 0.0 : rho[i]) << '\n';
      }
    }
    os.precision(prec);
  }

 private:
  double hat_density_at(std::size_t pop, std::size_t k, std::size_t idx) const {
    if (n_pop_ == 1 || model_.a_cross == 0.0) return 0.0;
    double s = 0.0;
    for (std::size_t j = 0; j < n_pop_; ++j)
      if (j != pop) s += density(j, k)[idx];
    return s / static_cast<double>(n_pop_ - 1);
  }

  // Separable Gaussian deposition, truncated at 7 sigma.
  void deposit(const WeightedPoints& pts, std::vector<double>& rho) const {
    const std::size_t d = grid_.dim();
    const double sigma = model_.sigma, h = grid_.h();
    const double cutoff = 7.0 * sigma;
    const double inv = 1.0 / (2.0 * sigma * sigma);
    const double peak = gaussian_peak(d, sigma);
    std::array<std::vector<double>, kMaxDim> factor;
    std::array<std::size_t, kMaxDim> first{}, len{};
    for (std::size_t j = 0; j < pts.size(); ++j) {
      const double w = pts.weights[j];
      if (w == 0.0) continue;
      bool empty = false;
      for (std::size_t a = 0; a < d; ++a) {
        const double x = pts.coords[j * d + a];
        const double top = static_cast<double>(grid_.count(a) - 1);
        const double lo = std::max(0.0, std::ceil((x - cutoff - grid_.lo(a)) / h));
        const double hi = std::min(top, std::floor((x + cutoff - grid_.lo(a)) / h));
        if (hi < lo) {
          empty = true;
          break;
        }
        first[a] = static_cast<std::size_t>(lo);
        len[a] = static_cast<std::size_t>(hi - lo) + 1;
        factor[a].resize(len[a]);
        for (std::size_t i = 0; i < len[a]; ++i) {
          const double dx = grid_.lo(a) + static_cast<double>(first[a] + i) * h - x;
          factor[a][i] = std::exp(-dx * dx * inv);
        }
      }
      if (empty) continue;
      const double scale = w * peak;
      if (d == 1) {
        for (std::size_t i = 0; i < len[0]; ++i) rho[first[0] + i] += scale * factor[0][i];
      } else if (d == 2) {
        for (std::size_t i = 0; i < len[0]; ++i) {
          const double fi = scale * factor[0][i];
          double* row = rho.data() + (first[0] + i) * grid_.stride(0) + first[1];
          for (std::size_t l = 0; l < len[1]; ++l) row[l] += fi * factor[1][l];
        }
      } else {
        for (std::size_t i = 0; i < len[0]; ++i)
          for (std::size_t l = 0; l < len[1]; ++l) {
            const double fil = scale * factor[0][i] * factor[1][l];
            double* row = rho.data() + (first[0] + i) * grid_.stride(0) + (first[1] + l) * grid_.stride(1) +
                          first[2];
            for (std::size_t m = 0; m < len[2]; ++m) row[m] += fil * factor[2][m];
          }
      }
    }
  }

  SpaceTimeGrid grid_;
  SpeedModel model_;
  std::size_t n_pop_ = 0;
  std::vector<std::vector<WeightedPoints>> snapshots_;
  std::vector<std::vector<double>> density_;
};

/// Speed fields k_i(t, x) = K(m_t^i, hat m_t^i, x) with m_t^i = e_t # Q_i.
inline CongestionField build_speed_field(std::span<const TrajectoryBundle> bundles, const SpeedModel& model,
                                         const SpaceTimeGrid& grid, std::size_t workers = 1) {
  std::vector<std::vector<WeightedPoints>> snaps(bundles.size());
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const auto& q = bundles[i];
    q.validate();
    if (q.dim() != grid.dim() || std::abs(q.dt() - grid.dt()) > 1e-12 * grid.dt() ||
        q.trajectories.front().n_nodes() != grid.n_times())
      throw InvalidArgument("build_speed_field: bundle does not share the grid");
    snaps[i].reserve(grid.n_times());
    for (std::size_t k = 0; k < grid.n_times(); ++k) {
      WeightedPoints pts;
      pts.dim = grid.dim();
      for (std::size_t j = 0; j < q.size(); ++j) pts.push(q.trajectories[j].node(k), q.weights[j]);
      snaps[i].push_back(std::move(pts));
    }
  }
  return CongestionField(grid, model, std::move(snaps), workers);
}

}  // namespace mtmfg
