#pragma once

// Command-line driver: solve, equilibrium and verify sub-commands with
// reproducible artifact directories.
//
// Artifact directory layout:
//   manifest.json            run manifest (inputs, parameters, hashes, timings)
//   iteration_log.csv        one row per fixed-point step (equilibrium)
//   bundle_pop<i>.csv        final trajectory bundle of population i
//   measure_flow_pop<i>.csv  snapshots of e_t#Q_i (equilibrium)
//   value_pop<i>.csv/.bin    value functions (solve)
//   trajectories_pop<i>.csv  traced optimal paths (solve)
//   report.json/.txt         diagnostics report (verify)
//
// Bundle CSV columns: path, source, weight, start_step, exit_time, k, t, x0..
// Rows stop at the exit node; paths are constant afterwards.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "mtmfg/diagnostics.hpp"
#include "mtmfg/equilibrium.hpp"
#include "mtmfg/error.hpp"
#include "mtmfg/parallel.hpp"
#include "mtmfg/scenario.hpp"

namespace mtmfg::cli {

inline constexpr const char* kArtifactVersion = "1";

enum ExitCode : int {
  kOk = 0,
  kFailed = 1,
  kConfig = 2,
  kCfl = 3,
  kNotConverged = 4,
  kMismatch = 5,
};

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string file_hash(const std::filesystem::path& p) { return fnv1a_hex(read_file(p.string())); }

struct Options {
  std::string scenario;
  std::string out;
  std::string artifacts;
  std::string bundles;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> directions;
  std::size_t max_iters = 60;
  double tol = 1e-3;
  std::string mode = "fictitious";
  std::size_t workers = default_workers();
};

/// Loads the scenario after applying --seed / --directions overrides, so
/// seeded samplers see the override.
inline Scenario load_with_overrides(const std::string& path, std::optional<std::uint64_t> seed,
                                    std::optional<std::size_t> directions) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("scenario '" + path + "': invalid JSON: " + e.what());
  }
  if (seed) j["seed"] = *seed;
  if (directions) j["directions"] = *directions;
  return scenario_from_json(j);
}

// ---------------------------------------------------------------------------
// Bundle files
// ---------------------------------------------------------------------------

inline std::string fmt(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

inline void write_bundle_csv(std::ostream& os, const TrajectoryBundle& q) {
  const std::size_t d = q.dim();
  os << "path,source,weight,start_step,exit_time,k,t";
  for (std::size_t a = 0; a < d; ++a) os << ",x" << a;
  os << '\n';
  for (std::size_t j = 0; j < q.size(); ++j) {
    const auto& tr = q.trajectories[j];
    std::size_t last = tr.n_nodes() - 1;
    if (tr.exited())
      last = std::min(last, tr.start_step() + static_cast<std::size_t>(std::llround(tr.exit_time() / tr.dt())));
    for (std::size_t k = 0; k <= last; ++k) {
      os << j << ',' << q.sources[j] << ',' << fmt(q.weights[j]) << ',' << tr.start_step() << ','
         << fmt(tr.exit_time()) << ',' << k << ',' << fmt(static_cast<double>(k) * tr.dt());
      for (std::size_t a = 0; a < d; ++a) os << ',' << fmt(tr.node(k)[a]);
      os << '\n';
    }
  }
}

/// Reads a bundle written by write_bundle_csv onto the time grid of `grid`.
inline TrajectoryBundle read_bundle_csv(const std::string& path, const SpaceTimeGrid& grid) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw ArtifactMismatch("bundle file '" + path + "' is empty");
  const std::size_t d = grid.dim();
  struct Raw {
    std::size_t source = 0, start = 0;
    double weight = 0.0, exit = kInf;
    std::vector<double> pts;
  };
  std::vector<Raw> raw;
  std::size_t row = 1;
  while (std::getline(in, line)) {
    ++row;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) cells.push_back(cell);
    if (cells.size() != 7 + d)
      throw ArtifactMismatch("bundle file '" + path + "' row " + std::to_string(row) + ": wrong column count");
    auto num = [&](std::size_t c) {
      char* end = nullptr;
      const double v = std::strtod(cells[c].c_str(), &end);
      if (end == cells[c].c_str() || *end != '\0')
        throw ArtifactMismatch("bundle file '" + path + "' row " + std::to_string(row) + ": bad number");
      return v;
    };
    const auto id = static_cast<std::size_t>(num(0));
    if (id == raw.size()) {
      raw.push_back({static_cast<std::size_t>(num(1)), static_cast<std::size_t>(num(3)), num(2), num(4), {}});
    } else if (id + 1 != raw.size()) {
      throw ArtifactMismatch("bundle file '" + path + "': paths are not contiguous");
    }
    if (static_cast<std::size_t>(num(5)) * d != raw.back().pts.size())
      throw ArtifactMismatch("bundle file '" + path + "': node indices are not contiguous");
    for (std::size_t a = 0; a < d; ++a) raw.back().pts.push_back(num(7 + a));
  }
  TrajectoryBundle q;
  for (auto& r : raw) {
    if (r.pts.size() > grid.n_times() * d)
      throw ArtifactMismatch("bundle file '" + path + "': path longer than the scenario horizon");
    while (r.pts.size() < grid.n_times() * d) r.pts.insert(r.pts.end(), r.pts.end() - d, r.pts.end());
    try {
      q.trajectories.emplace_back(d, grid.dt(), r.start, std::move(r.pts), r.exit);
    } catch (const InvalidArgument& e) {
      throw ArtifactMismatch("bundle file '" + path + "': " + e.what());
    }
    q.weights.push_back(r.weight);
    q.sources.push_back(r.source);
  }
  if (q.size() == 0) throw ArtifactMismatch("bundle file '" + path + "' has no paths");
  return q;
}

/// Snapshots (t, x.., weight) of e_t#Q every `stride` steps and at the end.
inline void write_measure_flow_csv(std::ostream& os, const TrajectoryBundle& q, const SpaceTimeGrid& grid,
                                   std::size_t stride) {
  os << "t";
  for (std::size_t a = 0; a < grid.dim(); ++a) os << ",x" << a;
  os << ",weight\n";
  for (std::size_t k = 0; k < grid.n_times(); ++k) {
    if (k % stride != 0 && k != grid.steps()) continue;
    const auto pts = detail::nodes_at(q, k);
    for (std::size_t j = 0; j < pts.size(); ++j) {
      os << fmt(grid.time(k));
      for (std::size_t a = 0; a < grid.dim(); ++a) os << ',' << fmt(pts.point(j)[a]);
      os << ',' << fmt(pts.weights[j]) << '\n';
    }
  }
}

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

class Timings {
 public:
  template <class Fn>
  auto run(const std::string& phase, Fn&& fn) {
    const auto t0 = std::chrono::steady_clock::now();
    struct Stop {
      Timings* self;
      std::string phase;
      std::chrono::steady_clock::time_point t0;
      ~Stop() {
        self->phases_.emplace_back(phase, std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      }
    } stop{this, phase, t0};
    return fn();
  }
  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j = nlohmann::ordered_json::object();
    for (const auto& [k, v] : phases_) j[k] = v;
    return j;
  }

 private:
  std::vector<std::pair<std::string, double>> phases_;
};

class ArtifactWriter {
 public:
  explicit ArtifactWriter(std::filesystem::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    std::filesystem::create_directories(dir_, ec);
    if (ec) throw ConfigError("cannot create output directory '" + dir_.string() + "': " + ec.message());
  }

  template <class Fn>
  void write(const std::string& name, Fn&& fill, bool binary = false) {
    std::ostringstream ss(binary ? std::ios::out | std::ios::binary : std::ios::out);
    fill(ss);
    const std::string bytes = ss.str();
    std::ofstream f(dir_ / name, std::ios::binary);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw Error("cannot write '" + (dir_ / name).string() + "'");
    hashes_[name] = fnv1a_hex(bytes);
  }

  const std::map<std::string, std::string>& hashes() const { return hashes_; }
  const std::filesystem::path& dir() const { return dir_; }

 private:
  std::filesystem::path dir_;
  std::map<std::string, std::string> hashes_;
};

inline nlohmann::ordered_json scenario_parameters(const Scenario& sc) {
  nlohmann::ordered_json j;
  const auto& g = sc.grid;
  std::vector<double> lo, hi;
  for (std::size_t a = 0; a < g.dim(); ++a) {
    lo.push_back(g.lo(a));
    hi.push_back(g.hi(a));
  }
  j["grid"] = {{"lo", lo}, {"hi", hi}, {"h", g.h()}, {"dt", g.dt()}, {"t_max", g.t_max()}, {"steps", g.steps()}};
  const auto& m = sc.speed_model;
  j["speed_model"] = {{"k_min", m.k_min}, {"k_max", m.k_max}, {"sigma", m.sigma}, {"a_self", m.a_self},
                      {"a_cross", m.a_cross}};
  j["populations"] = sc.populations();
  std::vector<std::size_t> atoms;
  for (const auto& m0 : sc.m0) atoms.push_back(m0.size());
  j["atoms"] = atoms;
  j["p"] = sc.p;
  j["directions"] = sc.directions;
  j["defaults_applied"] = sc.defaults_applied;
  return j;
}

inline nlohmann::ordered_json base_manifest(const std::string& command, const Options& o, const Scenario& sc) {
  nlohmann::ordered_json j;
  j["artifact_version"] = kArtifactVersion;
  j["command"] = command;
  j["scenario_path"] = std::filesystem::absolute(o.scenario).lexically_normal().string();
  j["scenario_hash"] = file_hash(o.scenario);
  j["seed"] = sc.seed;
  j["seed_override"] = o.seed.has_value();
  j["directions_override"] = o.directions.has_value();
  j["workers"] = o.workers;
  j["parameters"] = scenario_parameters(sc);
  return j;
}

inline void finish_manifest(ArtifactWriter& w, nlohmann::ordered_json j, const Timings& t) {
  j["artifacts"] = w.hashes();
  j["timings_seconds"] = t.to_json();
  w.write("manifest.json", [&](std::ostream& os) { os << j.dump(2) << '\n'; });
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline std::string pop_file(const char* stem, std::size_t i, const char* ext) {
  return std::string(stem) + "_pop" + std::to_string(i) + ext;
}

/// Value functions against the field of the initial stationary bundle (or of
/// the bundles in --bundles), plus one traced optimal path per atom.
inline int cmd_solve(const Options& o, std::ostream& log) {
  Timings timings;
  const Scenario sc = timings.run("load", [&] { return load_with_overrides(o.scenario, o.seed, o.directions); });
  std::vector<TrajectoryBundle> q;
  if (o.bundles.empty()) {
    q = initial_bundle(sc);
  } else {
    for (std::size_t i = 0; i < sc.populations(); ++i)
      q.push_back(read_bundle_csv((std::filesystem::path(o.bundles) / pop_file("bundle", i, ".csv")).string(), sc.grid));
  }
  const auto br = timings.run("solve", [&] { return best_response_detail(q, sc, o.workers); });
  ArtifactWriter w(o.out);
  timings.run("export", [&] {
    for (std::size_t i = 0; i < sc.populations(); ++i) {
      w.write(pop_file("value", i, ".csv"), [&](std::ostream& os) { br.values[i].write_csv(os); });
      w.write(pop_file("value", i, ".bin"), [&](std::ostream& os) { br.values[i].write_binary(os); }, true);
      w.write(pop_file("trajectories", i, ".csv"), [&](std::ostream& os) { write_bundle_csv(os, br.bundles[i]); });
    }
    return 0;
  });
  auto j = base_manifest("solve", o, sc);
  j["bundles_source"] = o.bundles.empty() ? "initial" : o.bundles;
  nlohmann::ordered_json pops = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < sc.populations(); ++i) {
    const auto& v = br.values[i];
    pops.push_back({{"certified_radius", v.certified_radius()},
                    {"stationary_sweeps", v.stationary_sweeps()},
                    {"stationary_converged", v.stationary_converged()}});
    log << "population " << i << ": certified radius " << v.certified_radius() << ", stationary sweeps "
        << v.stationary_sweeps() << '\n';
    if (!v.box_certified(sc.support_radius()))
      log << "warning: population " << i << ": grid box does not certify paths from B(R0); values near the "
          << "box boundary may be inexact\n";
  }
  j["value_functions"] = pops;
  finish_manifest(w, j, timings);
  return kOk;
}

inline void write_iteration_header(std::ostream& os, std::size_t pops) {
  os << "n,lambda,residual";
  for (std::size_t i = 0; i < pops; ++i) os << ",residual_pop" << i;
  for (std::size_t i = 0; i < pops; ++i) os << ",equilibrium_residual_pop" << i << ",mean_exit_time_pop" << i;
  os << ",equilibrium_relative";
  for (std::size_t i = 0; i < pops; ++i) os << ",unexited_mass_pop" << i;
  for (std::size_t i = 0; i < pops; ++i) os << ",paths_pop" << i;
  os << ",exact_w1_solves\n";
}

inline void write_iteration_row(std::ostream& os, const IterationRecord& r) {
  os << r.n << ',' << fmt(r.lambda) << ',' << fmt(r.residual);
  for (double v : r.population_residual) os << ',' << fmt(v);
  for (std::size_t i = 0; i < r.equilibrium.residual.size(); ++i)
    os << ',' << fmt(r.equilibrium.residual[i]) << ',' << fmt(r.equilibrium.mean_exit_time[i]);
  os << ',' << fmt(r.equilibrium.max_relative());
  for (double v : r.equilibrium.unexited_mass) os << ',' << fmt(v);
  for (auto v : r.bundle_sizes) os << ',' << v;
  os << ',' << r.exact_w1_solves << '\n';
}

inline int cmd_equilibrium(const Options& o, std::ostream& log) {
  Timings timings;
  const Scenario sc = timings.run("load", [&] { return load_with_overrides(o.scenario, o.seed, o.directions); });
  IterateOptions it;
  it.max_iters = o.max_iters;
  it.tol = o.tol;
  it.workers = o.workers;
  if (o.mode == "fictitious") {
    it.mode = DampingMode::fictitious;
  } else if (o.mode == "picard") {
    it.mode = DampingMode::picard;
  } else {
    throw ConfigError("unknown --mode '" + o.mode + "' (expected fictitious or picard)");
  }
  ArtifactWriter w(o.out);
  std::ostringstream iter_log;
  write_iteration_header(iter_log, sc.populations());
  const auto st = timings.run("iterate", [&] {
    return fixed_point_iterate(sc, it, [&](const IterationRecord& r, const std::vector<TrajectoryBundle>&) {
      write_iteration_row(iter_log, r);
      log << "n=" << r.n << " r_n=" << r.residual << " equilibrium_relative=" << r.equilibrium.max_relative()
          << '\n';
      log.flush();
    });
  });
  timings.run("export", [&] {
    w.write("iteration_log.csv", [&](std::ostream& os) { os << iter_log.str(); });
    const std::size_t stride = std::max<std::size_t>(1, sc.grid.steps() / 50);
    for (std::size_t i = 0; i < sc.populations(); ++i) {
      w.write(pop_file("bundle", i, ".csv"), [&](std::ostream& os) { write_bundle_csv(os, st.bundles[i]); });
      w.write(pop_file("measure_flow", i, ".csv"),
              [&](std::ostream& os) { write_measure_flow_csv(os, st.bundles[i], sc.grid, stride); });
    }
    return 0;
  });
  auto j = base_manifest("equilibrium", o, sc);
  j["iteration"] = {{"mode", o.mode},
                    {"max_iters", o.max_iters},
                    {"tol", o.tol},
                    {"merge_tol", it.merge_tol},
                    {"max_paths_per_atom", it.max_paths_per_atom}};
  j["outcome"] = {{"converged", st.converged},
                  {"iterations", st.n},
                  {"final_residual", st.history.empty() ? 0.0 : st.history.back().residual}};
  finish_manifest(w, j, timings);
  log << (st.converged ? "converged after " : "not converged after ") << st.n << " best responses\n";
  return st.converged ? kOk : kNotConverged;
}

inline nlohmann::json read_manifest(const std::filesystem::path& dir) {
  const auto path = dir / "manifest.json";
  std::string text;
  try {
    text = read_file(path.string());
  } catch (const ConfigError&) {
    throw ArtifactMismatch("no manifest.json in '" + dir.string() + "'");
  }
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ArtifactMismatch(std::string("manifest.json is not valid JSON: ") + e.what());
  }
}

/// Full diagnostics on the final bundles of an equilibrium run.
inline DiagnosticsReport verify_bundles(const Scenario& sc, std::span<const TrajectoryBundle> q, std::size_t workers,
                                        std::vector<std::vector<double>>* curves = nullptr) {
  DiagnosticsReport rep;
  const auto field = build_speed_field(q, sc.speed_model, sc.grid, workers);
  const auto br = best_response_detail(q, sc, workers);
  const auto shape = default_bump_shape(sc);
  std::vector<std::vector<Bump>> bumps;
  for (std::size_t i = 0; i < sc.populations(); ++i)
    bumps.push_back(make_bumps(q[i], sc.targets[i], sc.grid, 10, shape.rx, shape.rt, sc.seed + i));
  const auto cal = calibrate_transport_constant(sc, bumps, workers);
  for (std::size_t i = 0; i < sc.populations(); ++i) {
    const auto view = field.population(i);
    const auto& phi = br.values[i];
    auto add = [&](CheckResult c) {
      c.name += "[" + std::to_string(i) + "]";
      rep.add(std::move(c));
    };
    add(check_dpp(phi, br.bundles[i], view, sc.targets[i], 200, sc.seed + i));
    add(check_hj_residual(phi, view));
    add(check_time_monotonicity(phi, 2000, sc.seed + i));
    add(check_U_equals_W(phi, view, sc.targets[i], 100, sc.seed + i, sc.directions));
    add(check_normalized_gradient(phi, view, sc.targets[i], 200, sc.seed + i, sc.directions));
    add(mfg_system_residual(q[i], phi, view, bumps[i], cal.C, sc.directions));
  }
  rep.add(check_equilibrium_residual(equilibrium_residual(q, br.values, sc)));
  rep.add(check_support_bound(q, sc));
  rep.add(asymptotics_report(q, sc, curves));
  CheckResult c{"transport_calibration", CheckStatus::info, {}, 0.0, "single-atom transport reference", ""};
  c.set("C", cal.C);
  c.set("max_residual", cal.max_residual);
  c.set("bump_rx", shape.rx);
  c.set("bump_rt", shape.rt);
  rep.add(std::move(c));
  return rep;
}

inline int cmd_verify(const Options& o, std::ostream& log) {
  Timings timings;
  const std::filesystem::path dir(o.artifacts);
  const auto manifest = read_manifest(dir);
  Options eff = o;
  if (eff.scenario.empty()) eff.scenario = manifest.value("scenario_path", "");
  if (file_hash(eff.scenario) != manifest.value("scenario_hash", ""))
    throw ArtifactMismatch("scenario '" + eff.scenario + "' does not match the hash recorded in the manifest");
  const auto& recorded = manifest.at("artifacts");
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> directions;
  if (manifest.value("seed_override", false)) seed = manifest.at("seed").get<std::uint64_t>();
  if (manifest.value("directions_override", false))
    directions = manifest.at("parameters").at("directions").get<std::size_t>();
  const Scenario sc = timings.run("load", [&] { return load_with_overrides(eff.scenario, seed, directions); });
  std::vector<TrajectoryBundle> q;
  for (std::size_t i = 0; i < sc.populations(); ++i) {
    const std::string name = pop_file("bundle", i, ".csv");
    if (!recorded.contains(name)) throw ArtifactMismatch("manifest lists no " + name);
    const auto path = dir / name;
    if (!std::filesystem::exists(path)) throw ArtifactMismatch("missing artifact " + path.string());
    if (file_hash(path) != recorded.at(name).get<std::string>())
      throw ArtifactMismatch(name + " does not match the hash recorded in the manifest");
    q.push_back(read_bundle_csv(path.string(), sc.grid));
  }
  std::vector<std::vector<double>> curves;
  const auto rep = timings.run("diagnostics", [&] { return verify_bundles(sc, q, o.workers, &curves); });
  ArtifactWriter w(o.out.empty() ? dir : std::filesystem::path(o.out));
  w.write("report.json", [&](std::ostream& os) { os << rep.to_json().dump(2) << '\n'; });
  w.write("report.txt", [&](std::ostream& os) { rep.write_table(os); });
  for (std::size_t i = 0; i < curves.size(); ++i)
    w.write(pop_file("asymptotics", i, ".csv"), [&](std::ostream& os) {
      os << "t,wasserstein_to_limit\n";
      for (std::size_t k = 0; k < curves[i].size(); ++k) os << fmt(sc.grid.time(k)) << ',' << fmt(curves[i][k]) << '\n';
    });
  rep.write_table(log);
  log << (rep.passed() ? "all required checks passed\n" : "some required checks failed\n");
  return rep.passed() ? kOk : kFailed;
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

/// Parses arguments, runs one sub-command and maps errors to exit codes.
inline int run(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"Multi-population minimal-time mean field game solver"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  std::size_t directions = 0;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);
    sub->add_option("--directions", directions, "Number of candidate directions")->check(CLI::Range(4, 100000));
  };
  auto* solve = app.add_subcommand("solve", "Solve value functions and trace optimal paths");
  solve->add_option("--scenario", o.scenario, "Scenario JSON")->required();
  solve->add_option("--out", o.out, "Output directory")->required();
  solve->add_option("--seed", seed, "Override the scenario seed");
  solve->add_option("--bundles", o.bundles, "Directory with bundle_pop<i>.csv to build the speed field from");
  common(solve);

  auto* eq = app.add_subcommand("equilibrium", "Run the fixed-point iteration");
  eq->add_option("--scenario", o.scenario, "Scenario JSON")->required();
  eq->add_option("--out", o.out, "Output directory")->required();
  eq->add_option("--seed", seed, "Override the scenario seed");
  eq->add_option("--max-iters", o.max_iters, "Maximum number of best responses")->check(CLI::PositiveNumber);
  eq->add_option("--tol", o.tol, "Stop when r_n <= tol")->check(CLI::NonNegativeNumber);
  eq->add_option("--mode", o.mode, "Damping: fictitious or picard")
      ->check(CLI::IsMember({"fictitious", "picard"}));
  common(eq);

  auto* verify = app.add_subcommand("verify", "Run diagnostics on stored equilibrium artifacts");
  verify->add_option("--artifacts", o.artifacts, "Artifact directory of an equilibrium run")->required();
  verify->add_option("--scenario", o.scenario, "Scenario JSON (default: the one in the manifest)");
  verify->add_option("--out", o.out, "Report directory (default: the artifact directory)");
  verify->add_option("--workers", o.workers, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfig;
  }
  if (solve->parsed() || eq->parsed()) {
    CLI::App* sub = solve->parsed() ? solve : eq;
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--directions")) o.directions = directions;
  }

  try {
    if (solve->parsed()) return cmd_solve(o, out);
    if (eq->parsed()) return cmd_equilibrium(o, out);
    return cmd_verify(o, out);
  } catch (const CflViolation& e) {
    err << "error: " << e.what() << '\n';
    return kCfl;
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kConfig;
  } catch (const ArtifactMismatch& e) {
    err << "error: " << e.what() << '\n';
    return kMismatch;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kFailed;
  }
}

}  // namespace mtmfg::cli
