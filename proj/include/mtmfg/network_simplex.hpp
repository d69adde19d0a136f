#pragma once

// Primal network simplex for the balanced transportation problem
//
//   min sum_ij c_ij f_ij  s.t.  sum_j f_ij = a_i,  sum_i f_ij = b_j,  f >= 0
//
// on the complete bipartite graph. The basis is a strongly feasible spanning
// tree rooted at an artificial node, stored with parent/thread/successor
// arrays so that pivots only touch the subtree that moves. Entering arcs are
// chosen by block search.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <vector>

#include "mtmfg/error.hpp"

namespace mtmfg::detail {

class TransportSimplex {
 public:
  struct Flow {
    std::size_t source;
    std::size_t target;
    double mass;
  };

  /// `cost` is row-major n x m. Supplies and demands must have equal totals
  /// up to rounding; the residual is absorbed by the largest demand.
  TransportSimplex(std::span<const double> supply, std::span<const double> demand,
                   std::span<const double> cost)
      : n_(static_cast<int>(supply.size())), m_(static_cast<int>(demand.size())) {
    if (n_ == 0 || m_ == 0) throw InvalidArgument("transport: empty marginal");
    if (cost.size() != supply.size() * demand.size())
      throw InvalidArgument("transport: cost matrix has wrong size");
    node_num_ = n_ + m_;
    arc_num_ = n_ * m_;
    const int all_arcs = arc_num_ + node_num_;
    const int all_nodes = node_num_ + 1;

    source_.resize(all_arcs);
    target_.resize(all_arcs);
    cost_.resize(all_arcs);
    flow_.assign(all_arcs, 0.0);
    state_.assign(all_arcs, kStateLower);
    supply_.resize(all_nodes);
    pi_.resize(all_nodes);
    parent_.resize(all_nodes);
    pred_.resize(all_nodes);
    thread_.resize(all_nodes);
    rev_thread_.resize(all_nodes);
    succ_num_.resize(all_nodes);
    last_succ_.resize(all_nodes);
    pred_dir_.resize(all_nodes);

    double max_cost = 0.0;
    for (int i = 0; i < n_; ++i)
      for (int j = 0; j < m_; ++j) {
        const int e = i * m_ + j;
        source_[e] = i;
        target_[e] = n_ + j;
        cost_[e] = cost[static_cast<std::size_t>(e)];
        if (!(cost_[e] >= 0.0) || !std::isfinite(cost_[e]))
          throw InvalidArgument("transport: costs must be finite and nonnegative");
        max_cost = std::max(max_cost, cost_[e]);
      }

    double total_a = 0.0, total_b = 0.0;
    for (int i = 0; i < n_; ++i) {
      if (!(supply[i] >= 0.0)) throw InvalidArgument("transport: negative supply");
      supply_[i] = supply[i];
      total_a += supply[i];
    }
    int largest = 0;
    for (int j = 0; j < m_; ++j) {
      if (!(demand[j] >= 0.0)) throw InvalidArgument("transport: negative demand");
      supply_[n_ + j] = -demand[j];
      total_b += demand[j];
      if (demand[j] > demand[largest]) largest = j;
    }
    const double scale = std::max({total_a, total_b, 1e-300});
    if (std::abs(total_a - total_b) > 1e-9 * scale)
      throw InvalidArgument("transport: unbalanced marginals");
    supply_[n_ + largest] -= total_a - total_b;

    eps_ = 1e-13 * std::max(1.0, max_cost);
    art_cost_ = (max_cost + 1.0) * static_cast<double>(node_num_);
    block_size_ = std::max(10, static_cast<int>(std::sqrt(static_cast<double>(arc_num_))));
  }

  /// Solves to optimality.
  void run() {
    init_tree();
    std::size_t iterations = 0;
    const std::size_t limit = 1000u * static_cast<std::size_t>(arc_num_ + node_num_) + 100000u;
    while (find_entering_arc()) {
      find_join_node();
      const bool change = find_leaving_arc();
      change_flow(change);
      if (change) {
        update_tree_structure();
        update_potential();
      }
      if (++iterations > limit) throw ConvergenceFailure("transport: pivot limit exceeded");
    }
    for (int u = 0; u < node_num_; ++u) {
      const double f = flow_[arc_num_ + u];
      if (f > 1e-9 * std::max(1.0, std::abs(supply_[u])))
        throw ConvergenceFailure("transport: infeasible (artificial arc carries flow)");
    }
  }

  double total_cost() const {
    double c = 0.0;
    for (int e = 0; e < arc_num_; ++e)
      if (flow_[e] > 0.0) c += flow_[e] * cost_[e];
    return c;
  }

  std::vector<Flow> flows() const {
    std::vector<Flow> out;
    for (int e = 0; e < arc_num_; ++e)
      if (flow_[e] > 0.0)
        out.push_back({static_cast<std::size_t>(source_[e]),
                       static_cast<std::size_t>(target_[e] - n_), flow_[e]});
    return out;
  }

  /// Dual potentials (u_i for sources, v_j for sinks) with reduced costs
  /// c_ij - u_i - v_j >= 0 at optimality.
  std::vector<double> source_potentials() const {
    std::vector<double> u(static_cast<std::size_t>(n_));
    for (int i = 0; i < n_; ++i) u[i] = -pi_[i];
    return u;
  }
  std::vector<double> target_potentials() const {
    std::vector<double> v(static_cast<std::size_t>(m_));
    for (int j = 0; j < m_; ++j) v[j] = pi_[n_ + j];
    return v;
  }

 private:
  static constexpr signed char kStateUpper = -1;
  static constexpr signed char kStateTree = 0;
  static constexpr signed char kStateLower = 1;
  static constexpr signed char kDirUp = 1;
  static constexpr signed char kDirDown = -1;

  void init_tree() {
    const int root = node_num_;
    parent_[root] = -1;
    pred_[root] = -1;
    thread_[root] = 0;
    rev_thread_[0] = root;
    succ_num_[root] = node_num_ + 1;
    last_succ_[root] = root - 1;
    supply_[root] = 0.0;
    pi_[root] = 0.0;
    for (int u = 0, e = arc_num_; u < node_num_; ++u, ++e) {
      parent_[u] = root;
      pred_[u] = e;
      thread_[u] = u + 1;
      rev_thread_[u + 1] = u;
      succ_num_[u] = 1;
      last_succ_[u] = u;
      state_[e] = kStateTree;
      if (supply_[u] >= 0.0) {
        pred_dir_[u] = kDirUp;
        pi_[u] = 0.0;
        source_[e] = u;
        target_[e] = root;
        flow_[e] = supply_[u];
        cost_[e] = 0.0;
      } else {
        pred_dir_[u] = kDirDown;
        pi_[u] = art_cost_;
        source_[e] = root;
        target_[e] = u;
        flow_[e] = -supply_[u];
        cost_[e] = art_cost_;
      }
    }
    next_arc_ = 0;
  }

  double reduced(int e) const {
    return static_cast<double>(state_[e]) * (cost_[e] + pi_[source_[e]] - pi_[target_[e]]);
  }

  bool find_entering_arc() {
    double min = 0.0;
    int cnt = block_size_;
    int e;
    for (e = next_arc_; e != arc_num_; ++e) {
      const double c = reduced(e);
      if (c < min) {
        min = c;
        in_arc_ = e;
      }
      if (--cnt == 0) {
        if (min < -eps_) {
          next_arc_ = e;
          return true;
        }
        cnt = block_size_;
      }
    }
    for (e = 0; e != next_arc_; ++e) {
      const double c = reduced(e);
      if (c < min) {
        min = c;
        in_arc_ = e;
      }
      if (--cnt == 0) {
        if (min < -eps_) {
          next_arc_ = e;
          return true;
        }
        cnt = block_size_;
      }
    }
    if (min >= -eps_) return false;
    next_arc_ = e;
    return true;
  }

  void find_join_node() {
    int u = source_[in_arc_];
    int v = target_[in_arc_];
    while (u != v) {
      if (succ_num_[u] < succ_num_[v])
        u = parent_[u];
      else
        v = parent_[v];
    }
    join_ = u;
  }

  // All arcs are uncapacitated, so only arcs whose flow decreases along the
  // cycle can block. The `<=` on the second path keeps the tree strongly
  // feasible.
  bool find_leaving_arc() {
    int first, second;
    if (state_[in_arc_] == kStateLower) {
      first = source_[in_arc_];
      second = target_[in_arc_];
    } else {
      first = target_[in_arc_];
      second = source_[in_arc_];
    }
    delta_ = kUnbounded;
    int result = 0;
    for (int u = first; u != join_; u = parent_[u]) {
      if (pred_dir_[u] != kDirUp) continue;
      const double d = flow_[pred_[u]];
      if (d < delta_) {
        delta_ = d;
        u_out_ = u;
        result = 1;
      }
    }
    for (int u = second; u != join_; u = parent_[u]) {
      if (pred_dir_[u] != kDirDown) continue;
      const double d = flow_[pred_[u]];
      if (d <= delta_) {
        delta_ = d;
        u_out_ = u;
        result = 2;
      }
    }
    if (result == 0) throw ConvergenceFailure("transport: unbounded pivot");
    if (result == 1) {
      u_in_ = first;
      v_in_ = second;
    } else {
      u_in_ = second;
      v_in_ = first;
    }
    return true;
  }

  void change_flow(bool change) {
    if (delta_ > 0.0) {
      const double val = static_cast<double>(state_[in_arc_]) * delta_;
      flow_[in_arc_] += val;
      for (int u = source_[in_arc_]; u != join_; u = parent_[u])
        flow_[pred_[u]] -= static_cast<double>(pred_dir_[u]) * val;
      for (int u = target_[in_arc_]; u != join_; u = parent_[u])
        flow_[pred_[u]] += static_cast<double>(pred_dir_[u]) * val;
      // The blocking arc is exactly empty; clear rounding noise.
      flow_[pred_[u_out_]] = 0.0;
    }
    if (change) {
      state_[in_arc_] = kStateTree;
      state_[pred_[u_out_]] = kStateLower;
    } else {
      state_[in_arc_] = static_cast<signed char>(-state_[in_arc_]);
    }
  }

  void update_tree_structure() {
    const int old_rev_thread = rev_thread_[u_out_];
    const int old_succ_num = succ_num_[u_out_];
    const int old_last_succ = last_succ_[u_out_];
    const int v_out = parent_[u_out_];

    if (u_in_ == u_out_) {
      parent_[u_in_] = v_in_;
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source_[in_arc_] ? kDirUp : kDirDown;
      if (thread_[v_in_] != u_out_) {
        int after = thread_[old_last_succ];
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
        after = thread_[v_in_];
        thread_[v_in_] = u_out_;
        rev_thread_[u_out_] = v_in_;
        thread_[old_last_succ] = after;
        rev_thread_[after] = old_last_succ;
      }
    } else {
      const int thread_continue =
          old_rev_thread == v_in_ ? thread_[old_last_succ] : thread_[v_in_];

      int stem = u_in_;
      int par_stem = v_in_;
      int next_stem;
      int last = last_succ_[u_in_];
      int before;
      int after = thread_[last];
      thread_[v_in_] = u_in_;
      dirty_revs_.clear();
      dirty_revs_.push_back(v_in_);
      while (stem != u_out_) {
        next_stem = parent_[stem];
        thread_[last] = next_stem;
        dirty_revs_.push_back(last);

        before = rev_thread_[stem];
        thread_[before] = after;
        rev_thread_[after] = before;

        parent_[stem] = par_stem;
        par_stem = stem;
        stem = next_stem;

        last = last_succ_[stem] == last_succ_[par_stem] ? rev_thread_[par_stem] : last_succ_[stem];
        after = thread_[last];
      }
      parent_[u_out_] = par_stem;
      thread_[last] = thread_continue;
      rev_thread_[thread_continue] = last;
      last_succ_[u_out_] = last;

      if (old_rev_thread != v_in_) {
        thread_[old_rev_thread] = after;
        rev_thread_[after] = old_rev_thread;
      }

      for (int u : dirty_revs_) rev_thread_[thread_[u]] = u;

      int tmp_sc = 0;
      const int tmp_ls = last_succ_[u_out_];
      for (int u = u_out_, p = parent_[u]; u != u_in_; u = p, p = parent_[u]) {
        pred_[u] = pred_[p];
        pred_dir_[u] = static_cast<signed char>(-pred_dir_[p]);
        tmp_sc += succ_num_[u] - succ_num_[p];
        succ_num_[u] = tmp_sc;
        last_succ_[p] = tmp_ls;
      }
      pred_[u_in_] = in_arc_;
      pred_dir_[u_in_] = u_in_ == source_[in_arc_] ? kDirUp : kDirDown;
      succ_num_[u_in_] = old_succ_num;
    }

    const int up_limit_out = last_succ_[join_] == v_in_ ? join_ : -1;
    const int last_succ_out = last_succ_[u_out_];
    for (int u = v_in_; u != -1 && last_succ_[u] == v_in_; u = parent_[u]) last_succ_[u] = last_succ_out;

    if (join_ != old_rev_thread && v_in_ != old_rev_thread) {
      for (int u = v_out; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u])
        last_succ_[u] = old_rev_thread;
    } else if (last_succ_out != old_last_succ) {
      for (int u = v_out; u != up_limit_out && last_succ_[u] == old_last_succ; u = parent_[u])
        last_succ_[u] = last_succ_out;
    }

    for (int u = v_in_; u != join_; u = parent_[u]) succ_num_[u] += old_succ_num;
    for (int u = v_out; u != join_; u = parent_[u]) succ_num_[u] -= old_succ_num;
  }

  void update_potential() {
    const double sigma =
        pi_[v_in_] - pi_[u_in_] - static_cast<double>(pred_dir_[u_in_]) * cost_[in_arc_];
    const int end = thread_[last_succ_[u_in_]];
    for (int u = u_in_; u != end; u = thread_[u]) pi_[u] += sigma;
  }

  static constexpr double kUnbounded = std::numeric_limits<double>::infinity();

  int n_, m_;
  int node_num_ = 0, arc_num_ = 0;
  std::vector<int> source_, target_;
  std::vector<double> cost_, flow_;
  std::vector<signed char> state_;
  std::vector<double> supply_, pi_;
  std::vector<int> parent_, pred_, thread_, rev_thread_, succ_num_, last_succ_;
  std::vector<signed char> pred_dir_;
  std::vector<int> dirty_revs_;

  double eps_ = 0.0, art_cost_ = 0.0;
  int block_size_ = 10;
  int next_arc_ = 0;
  int in_arc_ = 0, join_ = 0, u_in_ = 0, v_in_ = 0, u_out_ = 0;
  double delta_ = 0.0;
};

}  // namespace mtmfg::detail
