#pragma once

// Scenario description and its JSON configuration format.
//
//   {
//     "populations": [
//       { "target": [ {"type": "ball", "center": [0.85, 0], "radius": 0.15},
//                     {"type": "box", "lo": [..], "hi": [..]},
//                     {"type": "points", "points": [[..], ..], "tolerance": 0} ],
//         "m0": {"sampler": "grid", "lo": [..], "hi": [..], "counts": [10, 20]} },
//       ...
//     ],
//     "speed_model": {"k_min": 0.2, "k_max": 1, "sigma": 0.1, "a_self": 1, "a_cross": 3},
//     "grid": {"box": [[-1.25, 1.25], [-0.5, 0.5]], "h": 0.05, "dt": 0.05, "t_max": 9},
//     "seed": 7, "p": 1, "directions": 64
//   }
//
// Samplers: "grid" (lo, hi, counts), "gaussian" (mean, std, count) and
// "explicit" (points as [x, y, ..., weight]; weights are normalized).
// Defaults: sigma = 2h, dt = h / k_max, t_max = 1.5 T(R0) where R0 is the
// largest initial support radius.

#include <cmath>
#include <cstdint>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "mtmfg/congestion.hpp"
#include "mtmfg/core_model.hpp"
#include "mtmfg/error.hpp"

namespace mtmfg {

struct Scenario {
  std::vector<TargetSet> targets;
  std::vector<EmpiricalMeasure> m0;
  SpeedModel speed_model;
  SpaceTimeGrid grid;
  std::uint64_t seed = 0;
  double p = 1.0;
  std::size_t directions = 64;
  /// Settings filled in from defaults, for the run manifest.
  std::vector<std::string> defaults_applied;

  std::size_t populations() const { return targets.size(); }
  std::size_t dim() const { return grid.dim(); }

  /// Largest initial support radius R0.
  double support_radius() const {
    double r = 0.0;
    for (const auto& m : m0) r = std::max(r, m.support_radius());
    return r;
  }

  /// Exit-time and radius bounds for population i from B_R.
  ExitBounds bounds(std::size_t i, double r) const {
    return psi_T_bounds(targets[i], speed_model.k_min, speed_model.k_max, r);
  }

  /// max_i T_i(R0).
  double exit_time_bound() const {
    double t = 0.0;
    for (std::size_t i = 0; i < populations(); ++i) t = std::max(t, bounds(i, support_radius()).exit_time);
    return t;
  }

  void validate() const {
    if (targets.empty()) throw ConfigError("scenario: at least one population is required");
    if (m0.size() != targets.size()) throw ConfigError("scenario: one initial measure per population");
    if (!(p >= 1.0)) throw ConfigError("scenario: Wasserstein order p must be at least 1");
    try {
      speed_model.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
      if (targets[i].dim() != grid.dim() || m0[i].dim() != grid.dim())
        throw ConfigError("scenario: population " + std::to_string(i) + " has the wrong dimension");
      bool reachable = false;
      for (std::size_t n = 0; n < grid.n_nodes() && !reachable; ++n) {
        const Coord x = grid.node_point(n);
        reachable = targets[i].distance(std::span<const double>(x.data(), grid.dim())) <= grid.h() * (1.0 + 1e-12);
      }
      if (!reachable)
        throw ConfigError("scenario: target of population " + std::to_string(i) + " has no grid node within h");
      for (std::size_t j = 0; j < m0[i].size(); ++j)
        if (!grid.inside(m0[i].point(j)))
          throw ConfigError("scenario: initial atom " + std::to_string(j) + " of population " +
                            std::to_string(i) + " lies outside the grid box");
    }
    if (grid.dt() * speed_model.k_max > grid.h() * (1.0 + 1e-12))
      throw CflViolation("CFL condition violated: dt * k_max = " + std::to_string(grid.dt() * speed_model.k_max) +
                         " exceeds h = " + std::to_string(grid.h()) + " (need dt <= h / k_max)");
  }
};

namespace detail {

using nlohmann::json;

inline std::vector<double> vec(const json& j, const char* what) {
  if (!j.is_array()) throw ConfigError(std::string("expected an array for ") + what);
  std::vector<double> v;
  for (const auto& e : j) {
    if (!e.is_number()) throw ConfigError(std::string("expected numbers in ") + what);
    v.push_back(e.get<double>());
  }
  return v;
}

inline double num(const json& j, const char* key) {
  if (!j.contains(key) || !j.at(key).is_number()) throw ConfigError(std::string("missing number '") + key + "'");
  return j.at(key).get<double>();
}

inline TargetSet parse_target(const json& j, std::size_t dim) {
  if (!j.is_array() || j.empty()) throw ConfigError("target must be a nonempty list of primitives");
  std::vector<TargetPrimitive> prims;
  for (const auto& p : j) {
    const std::string type = p.value("type", "");
    if (type == "ball") {
      prims.push_back(Ball{vec(p.at("center"), "ball center"), num(p, "radius")});
    } else if (type == "box") {
      prims.push_back(Box{vec(p.at("lo"), "box lo"), vec(p.at("hi"), "box hi")});
    } else if (type == "points" || type == "point") {
      std::vector<double> flat;
      if (p.contains("points")) {
        for (const auto& q : p.at("points")) {
          const auto v = vec(q, "point");
          flat.insert(flat.end(), v.begin(), v.end());
        }
      } else {
        flat = vec(p.at("point"), "point");
      }
      prims.push_back(PointCloud{flat, p.value("tolerance", 0.0)});
    } else {
      throw ConfigError("unknown target primitive type '" + type + "'");
    }
  }
  try {
    return TargetSet(dim, std::move(prims));
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
}

inline EmpiricalMeasure parse_m0(const json& j, std::size_t dim, std::mt19937_64& rng) {
  const std::string sampler = j.value("sampler", "");
  std::vector<double> coords;
  std::vector<double> weights;
  if (sampler == "grid") {
    const auto lo = vec(j.at("lo"), "grid lo"), hi = vec(j.at("hi"), "grid hi");
    const auto counts = vec(j.at("counts"), "grid counts");
    if (lo.size() != dim || hi.size() != dim || counts.size() != dim)
      throw ConfigError("grid sampler: lo/hi/counts must match the dimension");
    std::size_t total = 1;
    for (double c : counts) {
      if (!(c >= 1.0) || c != std::floor(c)) throw ConfigError("grid sampler: counts must be positive integers");
      total *= static_cast<std::size_t>(c);
    }
    for (std::size_t l = 0; l < total; ++l) {
      std::size_t rest = l;
      std::vector<double> x(dim);
      for (std::size_t a = dim; a-- > 0;) {
        const auto n = static_cast<std::size_t>(counts[a]);
        const std::size_t i = rest % n;
        rest /= n;
        x[a] = n == 1 ? 0.5 * (lo[a] + hi[a])
                      : lo[a] + (hi[a] - lo[a]) * static_cast<double>(i) / static_cast<double>(n - 1);
      }
      coords.insert(coords.end(), x.begin(), x.end());
    }
  } else if (sampler == "gaussian") {
    const auto mean = vec(j.at("mean"), "gaussian mean");
    if (mean.size() != dim) throw ConfigError("gaussian sampler: mean must match the dimension");
    std::vector<double> sd;
    if (j.at("std").is_array()) {
      sd = vec(j.at("std"), "gaussian std");
    } else {
      sd.assign(dim, num(j, "std"));
    }
    if (sd.size() != dim) throw ConfigError("gaussian sampler: std must match the dimension");
    const auto count = static_cast<std::size_t>(num(j, "count"));
    if (count == 0) throw ConfigError("gaussian sampler: count must be positive");
    std::normal_distribution<double> g(0.0, 1.0);
    for (std::size_t l = 0; l < count; ++l)
      for (std::size_t a = 0; a < dim; ++a) coords.push_back(mean[a] + sd[a] * g(rng));
  } else if (sampler == "explicit") {
    double total = 0.0;
    for (const auto& row : j.at("points")) {
      const auto v = vec(row, "explicit point");
      if (v.size() != dim + 1) throw ConfigError("explicit sampler: rows are [x..., weight]");
      if (!(v[dim] >= 0.0)) throw ConfigError("explicit sampler: negative weight");
      coords.insert(coords.end(), v.begin(), v.begin() + static_cast<std::ptrdiff_t>(dim));
      weights.push_back(v[dim]);
      total += v[dim];
    }
    if (!(total > 0.0)) throw ConfigError("explicit sampler: weights must have positive sum");
    for (auto& w : weights) w /= total;
    double s = 0.0;
    for (double w : weights) s += w;
    *std::max_element(weights.begin(), weights.end()) += 1.0 - s;
    return EmpiricalMeasure(dim, std::move(coords), std::move(weights));
  } else {
    throw ConfigError("unknown m0 sampler '" + sampler + "'");
  }
  return EmpiricalMeasure::uniform(dim, std::move(coords));
}

}  // namespace detail

/// Builds a scenario from parsed JSON. Throws ConfigError on malformed input
/// and CflViolation when dt > h / k_max.
inline Scenario scenario_from_json(const nlohmann::json& j) {
  using detail::num;
  using detail::vec;
  Scenario sc;
  try {
    const auto& g = j.at("grid");
    std::vector<double> lo, hi;
    if (g.at("box").is_array()) {
      for (const auto& axis : g.at("box")) {
        const auto v = vec(axis, "grid box axis");
        if (v.size() != 2) throw ConfigError("grid box axes are [lo, hi] pairs");
        lo.push_back(v[0]);
        hi.push_back(v[1]);
      }
    } else {
      lo = vec(g.at("box").at("lo"), "grid box lo");
      hi = vec(g.at("box").at("hi"), "grid box hi");
    }
    const std::size_t dim = lo.size();
    if (dim == 0 || dim > kMaxDim) throw ConfigError("grid dimension must be 1, 2 or 3");
    const double h = num(g, "h");

    const auto& sm = j.at("speed_model");
    sc.speed_model.k_min = num(sm, "k_min");
    sc.speed_model.k_max = num(sm, "k_max");
    sc.speed_model.a_self = sm.value("a_self", 0.0);
    sc.speed_model.a_cross = sm.value("a_cross", 0.0);
    if (sm.contains("sigma")) {
      sc.speed_model.sigma = num(sm, "sigma");
    } else {
      sc.speed_model.sigma = 2.0 * h;
      sc.defaults_applied.push_back("speed_model.sigma = 2h");
    }

    sc.seed = j.value("seed", std::uint64_t{0});
    sc.p = j.value("p", 1.0);
    sc.directions = j.value("directions", std::size_t{64});
    std::mt19937_64 rng(sc.seed);

    const auto& pops = j.at("populations");
    if (!pops.is_array() || pops.empty()) throw ConfigError("populations must be a nonempty list");
    for (const auto& pop : pops) {
      sc.targets.push_back(detail::parse_target(pop.at("target"), dim));
      sc.m0.push_back(detail::parse_m0(pop.at("m0"), dim, rng));
    }

    double dt;
    if (g.contains("dt")) {
      dt = num(g, "dt");
    } else {
      dt = h / sc.speed_model.k_max;
      sc.defaults_applied.push_back("grid.dt = h / k_max");
    }
    double t_max;
    if (g.contains("t_max")) {
      t_max = num(g, "t_max");
    } else {
      if (!(sc.speed_model.k_min > 0.0)) throw ConfigError("speed model: k_min must be positive");
      double r0 = 0.0, t = 0.0;
      for (const auto& m : sc.m0) r0 = std::max(r0, m.support_radius());
      for (const auto& tg : sc.targets)
        t = std::max(t, psi_T_bounds(tg, sc.speed_model.k_min, sc.speed_model.k_max, r0).exit_time);
      t_max = std::max(1.5 * t, dt);
      sc.defaults_applied.push_back("grid.t_max = 1.5 T(R0)");
    }
    sc.grid = SpaceTimeGrid(lo, hi, h, dt, t_max);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  } catch (const InvalidArgument& e) {
    throw ConfigError(std::string("scenario: ") + e.what());
  }
  sc.validate();
  return sc;
}

inline Scenario scenario_from_string(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("scenario: invalid JSON: ") + e.what());
  }
  return scenario_from_json(j);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline Scenario load_scenario(const std::string& path) { return scenario_from_string(read_file(path)); }

}  // namespace mtmfg
