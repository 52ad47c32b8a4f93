#pragma once

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "contractlab/common.hpp"
#include "contractlab/rng.hpp"

namespace contractlab::otdist {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct EmpiricalMeasure {
  MatrixXd points;   // n x d
  VectorXd weights;  // sums to 1

  static EmpiricalMeasure uniform(const MatrixXd& pts) {
    EmpiricalMeasure m;
    m.points = pts;
    m.weights = VectorXd::Constant(pts.rows(), 1.0 / static_cast<double>(pts.rows()));
    return m;
  }

  static EmpiricalMeasure from_1d(const std::vector<double>& xs) {
    MatrixXd pts(static_cast<Eigen::Index>(xs.size()), 1);
    for (Eigen::Index i = 0; i < pts.rows(); ++i)
      pts(i, 0) = xs[static_cast<std::size_t>(i)];
    return uniform(pts);
  }

  Eigen::Index size() const { return points.rows(); }
  Eigen::Index dim() const { return points.cols(); }

  bool is_uniform(double tol = 1e-12) const {
    const double w = 1.0 / static_cast<double>(size());
    for (Eigen::Index i = 0; i < weights.size(); ++i)
      if (std::abs(weights[i] - w) > tol) return false;
    return true;
  }

  void validate() const {
    if (points.rows() != weights.size())
      throw DomainError("measure points/weights size mismatch");
    double s = 0.0;
    for (Eigen::Index i = 0; i < weights.size(); ++i) {
      if (weights[i] < 0.0) throw DomainError("negative weight");
      s += weights[i];
    }
    if (std::abs(s - 1.0) > 1e-12)
      throw DomainError("weights sum to " + std::to_string(s));
  }
};

struct TransportPlan {
  struct Entry {
    Eigen::Index i, j;
    double mass;
  };
  std::vector<Entry> entries;
  double cost = 0.0;          // sum pi_ij c_ij (pre-root)
  double bias_bound = 0.0;    // declared upper bias (entropic only)

  VectorXd row_sums(Eigen::Index n) const {
    VectorXd r = VectorXd::Zero(n);
    for (const auto& e : entries) r[e.i] += e.mass;
    return r;
  }
  VectorXd col_sums(Eigen::Index m) const {
    VectorXd c = VectorXd::Zero(m);
    for (const auto& e : entries) c[e.j] += e.mass;
    return c;
  }
};

enum class Method { Exact, Entropic };

// ---------------------------------------------------------------------------
// [OP] w1_sorted_1d: order-statistics solver, uniform equal-n, d=1.
// ---------------------------------------------------------------------------

inline double w1_sorted_1d(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
  if (a.dim() != 1 || b.dim() != 1) throw DomainError("w1_sorted_1d requires d=1");
  if (a.size() != b.size()) throw DomainError("w1_sorted_1d requires equal sample counts");
  if (!a.is_uniform() || !b.is_uniform())
    throw DomainError("w1_sorted_1d requires uniform weights");
  std::vector<double> xs(static_cast<std::size_t>(a.size()));
  std::vector<double> ys(static_cast<std::size_t>(b.size()));
  for (Eigen::Index i = 0; i < a.size(); ++i) {
    xs[static_cast<std::size_t>(i)] = a.points(i, 0);
    ys[static_cast<std::size_t>(i)] = b.points(i, 0);
  }
  std::sort(xs.begin(), xs.end());
  std::sort(ys.begin(), ys.end());
  double s = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) s += std::abs(xs[i] - ys[i]);
  return s / static_cast<double>(xs.size());
}

// ---------------------------------------------------------------------------
// Exact solvers
// ---------------------------------------------------------------------------

namespace detail {

// Hungarian algorithm with potentials, O(n^3); cost returned is the sum over
// the optimal assignment.
inline double assignment(const std::function<double(Eigen::Index, Eigen::Index)>& cost,
                         Eigen::Index n, std::vector<Eigen::Index>& rowsol) {
  const double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<double> v(static_cast<std::size_t>(n) + 1, 0.0);
  std::vector<Eigen::Index> p(static_cast<std::size_t>(n) + 1, 0);
  std::vector<Eigen::Index> way(static_cast<std::size_t>(n) + 1, 0);
  for (Eigen::Index i = 1; i <= n; ++i) {
    p[0] = i;
    Eigen::Index j0 = 0;
    std::vector<double> minv(static_cast<std::size_t>(n) + 1, kInf);
    std::vector<char> used(static_cast<std::size_t>(n) + 1, 0);
    do {
      used[static_cast<std::size_t>(j0)] = 1;
      const Eigen::Index i0 = p[static_cast<std::size_t>(j0)];
      double delta = kInf;
      Eigen::Index j1 = -1;
      for (Eigen::Index j = 1; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[static_cast<std::size_t>(i0)] -
                           v[static_cast<std::size_t>(j)];
        if (cur < minv[static_cast<std::size_t>(j)]) {
          minv[static_cast<std::size_t>(j)] = cur;
          way[static_cast<std::size_t>(j)] = j0;
        }
        if (minv[static_cast<std::size_t>(j)] < delta) {
          delta = minv[static_cast<std::size_t>(j)];
          j1 = j;
        }
      }
      for (Eigen::Index j = 0; j <= n; ++j) {
        if (used[static_cast<std::size_t>(j)]) {
          u[static_cast<std::size_t>(p[static_cast<std::size_t>(j)])] += delta;
          v[static_cast<std::size_t>(j)] -= delta;
        } else {
          minv[static_cast<std::size_t>(j)] -= delta;
        }
      }
      j0 = j1;
    } while (p[static_cast<std::size_t>(j0)] != 0);
    do {
      const Eigen::Index j1 = way[static_cast<std::size_t>(j0)];
      p[static_cast<std::size_t>(j0)] = p[static_cast<std::size_t>(j1)];
      j0 = j1;
    } while (j0);
  }
  rowsol.assign(static_cast<std::size_t>(n), -1);
  double total = 0.0;
  for (Eigen::Index j = 1; j <= n; ++j) {
    const Eigen::Index i = p[static_cast<std::size_t>(j)];
    rowsol[static_cast<std::size_t>(i - 1)] = j - 1;
    total += cost(i - 1, j - 1);
  }
  return total;
}

// Dense transportation simplex (potentials + tree pivots).  Supplies are
// perturbed by a graded epsilon so the northwest-corner start is
// non-degenerate; the residual marginal error is far below the 1e-8 contract.
class TransportSimplex {
 public:
  TransportSimplex(const std::function<double(Eigen::Index, Eigen::Index)>& cost,
                   VectorXd a, VectorXd b)
      : cost_(cost), a_(std::move(a)), b_(std::move(b)) {
    n_ = a_.size();
    m_ = b_.size();
    const double delta = 1e-13 * a_.maxCoeff();
    double extra = 0.0;
    for (Eigen::Index i = 0; i < n_; ++i) {
      const double e = delta * static_cast<double>(i + 1);
      a_[i] += e;
      extra += e;
    }
    b_[m_ - 1] += extra;
  }

  TransportPlan solve(std::size_t max_iters = 0) {
    if (max_iters == 0)
      max_iters = 200 * static_cast<std::size_t>(n_ + m_) + 10000;
    northwest_start();
    for (std::size_t it = 0; it < max_iters; ++it) {
      compute_potentials();
      Eigen::Index bi = -1, bj = -1;
      double best = -tolerance();
      for (Eigen::Index i = 0; i < n_; ++i)
        for (Eigen::Index j = 0; j < m_; ++j) {
          if (in_basis_[static_cast<std::size_t>(i * m_ + j)]) continue;
          const double rc = cost_(i, j) - u_[static_cast<std::size_t>(i)] -
                            v_[static_cast<std::size_t>(j)];
          if (rc < best) {
            best = rc;
            bi = i;
            bj = j;
          }
        }
      if (bi < 0) return extract();
      pivot(bi, bj);
    }
    throw ConvergenceError("transport simplex exceeded iteration cap");
  }

 private:
  double tolerance() const {
    double scale = 1.0;
    for (const auto& c : basis_) scale = std::max(scale, std::abs(cost_(c.first, c.second)));
    return 1e-11 * scale;
  }

  void northwest_start() {
    basis_.clear();
    mass_.clear();
    in_basis_.assign(static_cast<std::size_t>(n_ * m_), 0);
    VectorXd ra = a_, rb = b_;
    Eigen::Index i = 0, j = 0;
    while (i < n_ && j < m_) {
      const double m = std::min(ra[i], rb[j]);
      add_basic(i, j, m);
      ra[i] -= m;
      rb[j] -= m;
      if (i == n_ - 1 && j == m_ - 1) break;
      if (ra[i] <= rb[j])
        ++i;
      else
        ++j;
    }
  }

  void add_basic(Eigen::Index i, Eigen::Index j, double m) {
    basis_.emplace_back(i, j);
    mass_.push_back(m);
    in_basis_[static_cast<std::size_t>(i * m_ + j)] = 1;
  }

  void compute_potentials() {
    u_.assign(static_cast<std::size_t>(n_), std::numeric_limits<double>::quiet_NaN());
    v_.assign(static_cast<std::size_t>(m_), std::numeric_limits<double>::quiet_NaN());
    // adjacency over the basis tree
    std::vector<std::vector<std::size_t>> row_arcs(static_cast<std::size_t>(n_));
    std::vector<std::vector<std::size_t>> col_arcs(static_cast<std::size_t>(m_));
    for (std::size_t k = 0; k < basis_.size(); ++k) {
      row_arcs[static_cast<std::size_t>(basis_[k].first)].push_back(k);
      col_arcs[static_cast<std::size_t>(basis_[k].second)].push_back(k);
    }
    std::deque<std::pair<char, Eigen::Index>> queue;  // ('r', i) or ('c', j)
    u_[0] = 0.0;
    queue.emplace_back('r', 0);
    while (!queue.empty()) {
      auto [kind, idx] = queue.front();
      queue.pop_front();
      if (kind == 'r') {
        for (std::size_t k : row_arcs[static_cast<std::size_t>(idx)]) {
          const Eigen::Index j = basis_[k].second;
          if (std::isnan(v_[static_cast<std::size_t>(j)])) {
            v_[static_cast<std::size_t>(j)] =
                cost_(idx, j) - u_[static_cast<std::size_t>(idx)];
            queue.emplace_back('c', j);
          }
        }
      } else {
        for (std::size_t k : col_arcs[static_cast<std::size_t>(idx)]) {
          const Eigen::Index i = basis_[k].first;
          if (std::isnan(u_[static_cast<std::size_t>(i)])) {
            u_[static_cast<std::size_t>(i)] =
                cost_(i, idx) - v_[static_cast<std::size_t>(idx)];
            queue.emplace_back('r', i);
          }
        }
      }
    }
    for (double x : u_)
      if (std::isnan(x)) throw ConvergenceError("transport basis disconnected");
    for (double x : v_)
      if (std::isnan(x)) throw ConvergenceError("transport basis disconnected");
  }

  // Unique cycle created by the entering arc (bi,bj): alternating row/col path
  // from bj back to bi through the tree.
  void pivot(Eigen::Index bi, Eigen::Index bj) {
    const std::size_t nb = basis_.size();
    std::vector<std::vector<std::pair<Eigen::Index, std::size_t>>> row_adj(
        static_cast<std::size_t>(n_));
    std::vector<std::vector<std::pair<Eigen::Index, std::size_t>>> col_adj(
        static_cast<std::size_t>(m_));
    for (std::size_t k = 0; k < nb; ++k) {
      row_adj[static_cast<std::size_t>(basis_[k].first)].emplace_back(basis_[k].second, k);
      col_adj[static_cast<std::size_t>(basis_[k].second)].emplace_back(basis_[k].first, k);
    }
    // DFS from row bi to col bj over basis arcs
    struct Frame {
      char kind;
      Eigen::Index idx;
      std::size_t via;  // arc used to enter this node
    };
    std::vector<Frame> stack{{'r', bi, static_cast<std::size_t>(-1)}};
    std::vector<char> seen_row(static_cast<std::size_t>(n_), 0);
    std::vector<char> seen_col(static_cast<std::size_t>(m_), 0);
    std::vector<Frame> path;
    std::function<bool(char, Eigen::Index)> dfs = [&](char kind, Eigen::Index idx) -> bool {
      if (kind == 'c' && idx == bj) return true;
      if (kind == 'r') {
        seen_row[static_cast<std::size_t>(idx)] = 1;
        for (auto [j, k] : row_adj[static_cast<std::size_t>(idx)]) {
          if (seen_col[static_cast<std::size_t>(j)]) continue;
          path.push_back({'c', j, k});
          if (dfs('c', j)) return true;
          path.pop_back();
        }
      } else {
        seen_col[static_cast<std::size_t>(idx)] = 1;
        for (auto [i, k] : col_adj[static_cast<std::size_t>(idx)]) {
          if (seen_row[static_cast<std::size_t>(i)]) continue;
          path.push_back({'r', i, k});
          if (dfs('r', i)) return true;
          path.pop_back();
        }
      }
      return false;
    };
    if (!dfs('r', bi)) throw ConvergenceError("transport pivot cycle not found");

    // Cycle arcs alternate -,+,-,... along the path (entering arc is +).
    std::vector<std::size_t> minus, plus;
    for (std::size_t t = 0; t < path.size(); ++t)
      (t % 2 == 0 ? minus : plus).push_back(path[t].via);
    double theta = std::numeric_limits<double>::infinity();
    std::size_t leave = static_cast<std::size_t>(-1);
    for (std::size_t k : minus)
      if (mass_[k] < theta) {
        theta = mass_[k];
        leave = k;
      }
    for (std::size_t k : minus) mass_[k] -= theta;
    for (std::size_t k : plus) mass_[k] += theta;
    // replace the leaving arc with the entering one
    in_basis_[static_cast<std::size_t>(basis_[leave].first * m_ + basis_[leave].second)] = 0;
    basis_[leave] = {bi, bj};
    mass_[leave] = theta;
    in_basis_[static_cast<std::size_t>(bi * m_ + bj)] = 1;
  }

  TransportPlan extract() const {
    TransportPlan plan;
    for (std::size_t k = 0; k < basis_.size(); ++k) {
      if (mass_[k] <= 0.0) continue;
      plan.entries.push_back({basis_[k].first, basis_[k].second, mass_[k]});
      plan.cost += mass_[k] * cost_(basis_[k].first, basis_[k].second);
    }
    return plan;
  }

  std::function<double(Eigen::Index, Eigen::Index)> cost_;
  VectorXd a_, b_;
  Eigen::Index n_ = 0, m_ = 0;
  std::vector<std::pair<Eigen::Index, Eigen::Index>> basis_;
  std::vector<double> mass_;
  std::vector<char> in_basis_;
  std::vector<double> u_, v_;
};

// Log-domain Sinkhorn with epsilon scaling.
struct SinkhornResult {
  TransportPlan plan;
  double epsilon = 0.0;
  std::size_t iterations = 0;
};

inline SinkhornResult sinkhorn(const std::function<double(Eigen::Index, Eigen::Index)>& cost,
                               const VectorXd& a, const VectorXd& b, double eps_target,
                               std::size_t max_iter_per_round = 5000,
                               double marginal_tol = 1e-9) {
  const Eigen::Index n = a.size(), m = b.size();
  MatrixXd C(n, m);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) C(i, j) = cost(i, j);
  VectorXd f = VectorXd::Zero(n), g = VectorXd::Zero(m);
  VectorXd loga = a.array().log().matrix(), logb = b.array().log().matrix();
  SinkhornResult res;

  auto lse_rows = [&](double eps, VectorXd& out) {
    // out_i = eps * log sum_j exp((g_j - C_ij)/eps + log b_j)
    for (Eigen::Index i = 0; i < n; ++i) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index j = 0; j < m; ++j)
        mx = std::max(mx, (g[j] - C(i, j)) / eps + logb[j]);
      double s = 0.0;
      for (Eigen::Index j = 0; j < m; ++j)
        s += std::exp((g[j] - C(i, j)) / eps + logb[j] - mx);
      out[i] = eps * (mx + std::log(s));
    }
  };
  auto lse_cols = [&](double eps, VectorXd& out) {
    for (Eigen::Index j = 0; j < m; ++j) {
      double mx = -std::numeric_limits<double>::infinity();
      for (Eigen::Index i = 0; i < n; ++i)
        mx = std::max(mx, (f[i] - C(i, j)) / eps + loga[i]);
      double s = 0.0;
      for (Eigen::Index i = 0; i < n; ++i)
        s += std::exp((f[i] - C(i, j)) / eps + loga[i] - mx);
      out[j] = eps * (mx + std::log(s));
    }
  };

  // three halving rounds ending at eps_target
  for (int round = 2; round >= 0; --round) {
    const double eps = eps_target * std::pow(2.0, round);
    VectorXd tmp_n(n), tmp_m(m);
    double err = std::numeric_limits<double>::infinity();
    std::size_t it = 0;
    for (; it < max_iter_per_round; ++it) {
      lse_rows(eps, tmp_n);
      f = -tmp_n;
      lse_cols(eps, tmp_m);
      g = -tmp_m;
      if (it % 10 == 9 || it + 1 == max_iter_per_round) {
        // row-marginal violation (columns are exact after the g update)
        err = 0.0;
        for (Eigen::Index i = 0; i < n; ++i) {
          double s = 0.0;
          for (Eigen::Index j = 0; j < m; ++j)
            s += std::exp((f[i] + g[j] - C(i, j)) / eps + loga[i] + logb[j]);
          err += std::abs(s - a[i]);
        }
        if (err < marginal_tol) break;
      }
    }
    res.iterations += it;
    if (round == 0 && err >= marginal_tol)
      throw ConvergenceError("sinkhorn marginal violation " + std::to_string(err) +
                             " after " + std::to_string(res.iterations) + " iterations");
    res.epsilon = eps;
  }

  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < m; ++j) {
      const double mass =
          std::exp((f[i] + g[j] - C(i, j)) / res.epsilon + loga[i] + logb[j]);
      if (mass > 1e-16) {
        res.plan.entries.push_back({i, j, mass});
        res.plan.cost += mass * C(i, j);
      }
    }
  res.plan.bias_bound =
      res.epsilon * std::log(static_cast<double>(std::max(n, m)));
  return res;
}

inline double median_positive_cost(const std::function<double(Eigen::Index, Eigen::Index)>& cost,
                                   Eigen::Index n, Eigen::Index m) {
  std::vector<double> cs;
  cs.reserve(static_cast<std::size_t>(std::min<Eigen::Index>(n * m, 4096)));
  const Eigen::Index stride_i = std::max<Eigen::Index>(1, n / 64);
  const Eigen::Index stride_j = std::max<Eigen::Index>(1, m / 64);
  for (Eigen::Index i = 0; i < n; i += stride_i)
    for (Eigen::Index j = 0; j < m; j += stride_j) {
      const double c = cost(i, j);
      if (c > 0.0) cs.push_back(c);
    }
  if (cs.empty()) return 1.0;
  std::nth_element(cs.begin(), cs.begin() + static_cast<std::ptrdiff_t>(cs.size() / 2), cs.end());
  return cs[cs.size() / 2];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// [OP] wq_empirical and [OP] tilde_wq
// ---------------------------------------------------------------------------

struct WqOptions {
  double epsilon = 0.0;  // entropic regularization; 0 = 1e-2 * median cost
  std::size_t max_exact_pairs = 1000000;
  Eigen::Index max_assignment_n = 2000;
};

struct WqResult {
  double value = 0.0;
  TransportPlan plan;
};

namespace detail {

inline WqResult solve_discrete_ot(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                                  const std::function<double(Eigen::Index, Eigen::Index)>& cost,
                                  double root, Method method, const WqOptions& opt) {
  a.validate();
  b.validate();
  if (a.dim() != b.dim()) throw DomainError("dimension mismatch between clouds");
  const Eigen::Index n = a.size(), m = b.size();
  WqResult out;
  if (method == Method::Exact) {
    if (static_cast<std::size_t>(n) * static_cast<std::size_t>(m) > opt.max_exact_pairs)
      throw DomainError("exact method requires n*m <= " + std::to_string(opt.max_exact_pairs));
    if (n == m && a.is_uniform() && b.is_uniform()) {
      if (n > opt.max_assignment_n)
        throw ConfigError("assignment route capped at n <= " +
                          std::to_string(opt.max_assignment_n) + "; use entropic");
      std::vector<Eigen::Index> rowsol;
      const double total = detail::assignment(cost, n, rowsol);
      const double w = 1.0 / static_cast<double>(n);
      for (Eigen::Index i = 0; i < n; ++i)
        out.plan.entries.push_back({i, rowsol[static_cast<std::size_t>(i)], w});
      out.plan.cost = total * w;
    } else {
      detail::TransportSimplex ts(cost, a.weights, b.weights);
      out.plan = ts.solve();
    }
  } else {
    const double eps = opt.epsilon > 0.0
                           ? opt.epsilon
                           : 1e-2 * detail::median_positive_cost(cost, n, m);
    out.plan = detail::sinkhorn(cost, a.weights, b.weights, eps).plan;
  }
  out.value = std::pow(std::max(0.0, out.plan.cost), root);
  return out;
}

}  // namespace detail

inline WqResult wq_empirical(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                             double q, Method method = Method::Exact,
                             const WqOptions& opt = {}) {
  if (!(q >= 1.0)) throw DomainError("wq_empirical requires q >= 1");
  // 1-D uniform equal-n clouds: sorted pairing is optimal for any convex cost.
  if (method == Method::Exact && a.dim() == 1 && b.dim() == 1 && a.size() == b.size() &&
      a.is_uniform() && b.is_uniform()) {
    std::vector<std::pair<double, Eigen::Index>> xs(static_cast<std::size_t>(a.size()));
    std::vector<std::pair<double, Eigen::Index>> ys(static_cast<std::size_t>(b.size()));
    for (Eigen::Index i = 0; i < a.size(); ++i) {
      xs[static_cast<std::size_t>(i)] = {a.points(i, 0), i};
      ys[static_cast<std::size_t>(i)] = {b.points(i, 0), i};
    }
    std::sort(xs.begin(), xs.end());
    std::sort(ys.begin(), ys.end());
    WqResult out;
    const double w = 1.0 / static_cast<double>(a.size());
    double total = 0.0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      total += std::pow(std::abs(xs[k].first - ys[k].first), q) * w;
      out.plan.entries.push_back({xs[k].second, ys[k].second, w});
    }
    out.plan.cost = total;
    out.value = std::pow(total, 1.0 / q);
    return out;
  }
  auto cost = [&](Eigen::Index i, Eigen::Index j) {
    return std::pow((a.points.row(i) - b.points.row(j)).norm(), q);
  };
  return detail::solve_discrete_ot(a, b, cost, 1.0 / q, method, opt);
}

inline WqResult tilde_wq(const EmpiricalMeasure& a, const EmpiricalMeasure& b, double q,
                         Method method = Method::Exact, const WqOptions& opt = {}) {
  if (!(q >= 1.0)) throw DomainError("tilde_wq requires q >= 1");
  auto cost = [&](Eigen::Index i, Eigen::Index j) {
    const double r = (a.points.row(i) - b.points.row(j)).norm();
    return std::max(std::pow(r, q), r);
  };
  return detail::solve_discrete_ot(a, b, cost, 1.0 / q, method, opt);
}

// [OP] gaussian_shift_oracle: distance between translates of one law is the
// translation norm, for every order q.
inline double gaussian_shift_oracle(const VectorXd& mean_a, const VectorXd& mean_b,
                                    double /*q*/ = 1.0) {
  return (mean_a - mean_b).norm();
}

// ---------------------------------------------------------------------------
// Bootstrap standard error of an empirical distance (resampling both clouds).
// ---------------------------------------------------------------------------

inline double bootstrap_stderr(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                               double q, std::size_t n_resamples, std::uint64_t seed,
                               Method method = Method::Exact,
                               const std::function<double(const EmpiricalMeasure&,
                                                          const EmpiricalMeasure&)>& dist = {}) {
  CounterRng rng(seed);
  std::vector<double> vals(n_resamples);
  const Eigen::Index n = a.size(), m = b.size();
  EmpiricalMeasure ra = a, rb = b;
  for (std::size_t r = 0; r < n_resamples; ++r) {
    for (Eigen::Index i = 0; i < n; ++i) {
      const double u = rng.uniform(r, static_cast<std::uint64_t>(i), 1, 0);
      ra.points.row(i) = a.points.row(static_cast<Eigen::Index>(u * n));
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      const double u = rng.uniform(r, static_cast<std::uint64_t>(j), 2, 0);
      rb.points.row(j) = b.points.row(static_cast<Eigen::Index>(u * m));
    }
    vals[r] = dist ? dist(ra, rb) : wq_empirical(ra, rb, q, method).value;
  }
  const auto ms = mean_stderr(vals);
  // sample std of the bootstrap replicates
  return ms.stderr_ * std::sqrt(static_cast<double>(vals.size()));
}

// ---------------------------------------------------------------------------
// CSV I/O: one row per point.
// ---------------------------------------------------------------------------

inline void write_cloud_csv(const EmpiricalMeasure& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out.precision(17);
  for (Eigen::Index i = 0; i < m.size(); ++i) {
    for (Eigen::Index j = 0; j < m.dim(); ++j) {
      if (j) out << ",";
      out << m.points(i, j);
    }
    out << "\n";
  }
}

inline EmpiricalMeasure read_cloud_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::vector<std::vector<double>> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) row.push_back(std::stod(cell));
    if (!rows.empty() && row.size() != rows.front().size())
      throw ConfigError("ragged csv in '" + path + "'");
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ConfigError("empty cloud file '" + path + "'");
  MatrixXd pts(static_cast<Eigen::Index>(rows.size()),
               static_cast<Eigen::Index>(rows.front().size()));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows.front().size(); ++j)
      pts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return EmpiricalMeasure::uniform(pts);
}

}  // namespace contractlab::otdist
