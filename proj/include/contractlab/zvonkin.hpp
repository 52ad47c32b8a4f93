#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "contractlab/common.hpp"
#include "contractlab/model.hpp"
#include "contractlab/rng.hpp"

namespace contractlab::zvonkin {

using Json = nlohmann::ordered_json;
using Eigen::VectorXd;
using model::ProblemSpec;

// Desk-scale scope: d = 1, time-homogeneous perturbation b.  The infinite-
// horizon equation collapses to the resolvent
//   phi(x) = int_0^inf e^{-lambda u} P_u^Z { phi' b + b }(x) du.

struct PhiTable {
  std::vector<double> grid;  // uniform on [-L, L]
  std::vector<double> phi_values;
  std::vector<double> phi_prime_values;
  double lambda = 0.0;
  std::vector<double> iteration_history;  // contraction factors rho_k
  std::size_t iterations = 0;
  bool converged = false;
  bool extended_constant = true;  // constant extension outside [-L, L]

  double sup_phi() const {
    double s = 0.0;
    for (double v : phi_values) s = std::max(s, std::abs(v));
    return s;
  }
  double sup_phi_prime() const {
    double s = 0.0;
    for (double v : phi_prime_values) s = std::max(s, std::abs(v));
    return s;
  }

  double phi(double x) const { return interp(phi_values, x); }
  double phi_prime(double x) const { return interp(phi_prime_values, x); }
  double Phi(double x) const { return x + phi(x); }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "x,phi,phi_prime\n";
    for (std::size_t i = 0; i < grid.size(); ++i)
      out << grid[i] << "," << phi_values[i] << "," << phi_prime_values[i] << "\n";
  }

 private:
  double interp(const std::vector<double>& ys, double x) const {
    if (x <= grid.front()) return ys.front();
    if (x >= grid.back()) return ys.back();
    const double dx = grid[1] - grid[0];
    const std::size_t i = std::min(
        ys.size() - 2, static_cast<std::size_t>((x - grid.front()) / dx));
    const double w = (x - grid[i]) / dx;
    return ys[i] + w * (ys[i + 1] - ys[i]);
  }
};

enum class SemigroupEval { GridPde, Mc };

struct ZvonkinConfig {
  double lambda = 0.0;  // 0 = auto-select and double on non-contraction
  double L = 3.5;
  int n_nodes = 281;
  SemigroupEval semigroup_eval = SemigroupEval::GridPde;
  double tol = 1e-10;
  int max_iter = 60;
  double trunc = 1e-10;        // e^{-lambda U} <= trunc
  double pde_safety = 0.45;    // explicit-step CFL safety factor
  std::size_t mc_paths = 512;  // mc cross-check mode
  double mc_dt = 2e-3;
  std::uint64_t mc_seed = 1234;
};

namespace detail {

// Resolvent int_0^U e^{-lambda u} (P_u g)(x) du on the grid, by explicit
// finite-difference stepping of du = 1/2 a u'' + Z u' with reflecting
// boundaries.  The e^{-lambda u} factor is integrated exactly against the
// piecewise-linear-in-time evolution, so constants map to g (1 - trunc)/lambda.
inline std::vector<double> resolvent_grid_pde(const ProblemSpec& zspec,
                                              const std::vector<double>& grid,
                                              const std::vector<double>& g,
                                              double lambda, const ZvonkinConfig& cfg) {
  const std::size_t n = grid.size();
  const double dx = grid[1] - grid[0];
  std::vector<double> a(n), z(n);
  VectorXd x(1), bv(1);
  double a_max = 0.0, z_max = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    x[0] = grid[i];
    const auto s = zspec.diffusion.eval(0.0, x);
    a[i] = s(0, 0) * s(0, 0);
    zspec.drift.evaluator(0.0, x, bv);
    z[i] = bv[0];
    a_max = std::max(a_max, a[i]);
    z_max = std::max(z_max, std::abs(z[i]));
  }
  const double dt = cfg.pde_safety *
                    std::min(dx * dx / std::max(a_max, 1e-12),
                             z_max > 0.0 ? dx / z_max : std::numeric_limits<double>::infinity());
  const double U = std::log(1.0 / cfg.trunc) / lambda;
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(U / dt));
  const double A = (1.0 - std::exp(-lambda * dt)) / lambda;
  const double B = (1.0 - std::exp(-lambda * dt) * (1.0 + lambda * dt)) / (lambda * lambda);

  std::vector<double> u = g, unew(n), out(n, 0.0);
  double expfac = 1.0;
  const double step_decay = std::exp(-lambda * dt);
  for (std::size_t k = 0; k < n_steps; ++k) {
    for (std::size_t i = 0; i < n; ++i) {
      const double um = (i == 0) ? u[1] : u[i - 1];
      const double up = (i + 1 == n) ? u[n - 2] : u[i + 1];
      unew[i] = u[i] + dt * (0.5 * a[i] * (up - 2.0 * u[i] + um) / (dx * dx) +
                             z[i] * (up - um) / (2.0 * dx));
      if (!std::isfinite(unew[i]))
        throw IterationError("semigroup stepping produced NaN at node " +
                             std::to_string(i));
    }
    for (std::size_t i = 0; i < n; ++i)
      out[i] += expfac * (u[i] * A + (unew[i] - u[i]) * B / dt);
    u.swap(unew);
    expfac *= step_decay;
  }
  return out;
}

// MC cross-check of the same resolvent: per-path quadrature of
// int_0^U e^{-lambda u} g(Y_u) du along reference paths from each node.
inline std::vector<double> resolvent_mc(const ProblemSpec& zspec,
                                        const std::vector<double>& grid,
                                        const std::vector<double>& g, double lambda,
                                        const ZvonkinConfig& cfg) {
  const double U = std::log(1.0 / cfg.trunc) / lambda;
  const double dt = cfg.mc_dt;
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(U / dt));
  const double A = (1.0 - std::exp(-lambda * dt)) / lambda;
  const double B = (1.0 - std::exp(-lambda * dt) * (1.0 + lambda * dt)) / (lambda * lambda);
  const double sdt = std::sqrt(dt);
  auto g_at = [&](double xx) {
    if (xx <= grid.front()) return g.front();
    if (xx >= grid.back()) return g.back();
    const double dx = grid[1] - grid[0];
    const std::size_t i = std::min(
        g.size() - 2, static_cast<std::size_t>((xx - grid.front()) / dx));
    const double w = (xx - grid[i]) / dx;
    return g[i] + w * (g[i + 1] - g[i]);
  };

  std::vector<double> out(grid.size(), 0.0);
  VectorXd xv(1), bv(1);
  for (std::size_t node = 0; node < grid.size(); ++node) {
    const CounterRng rng(CounterRng::derive(cfg.mc_seed, node));
    double acc = 0.0;
    for (std::size_t pi = 0; pi < cfg.mc_paths; ++pi) {
      double xx = grid[node], expfac = 1.0, integral = 0.0, tc = 0.0;
      double pole;
      for (std::size_t k = 0; k < n_steps; ++k) {
        pole = g_at(xx);
        double z0, z1;
        rng.normal_pair(pi, k, rng_stream::kDiffusion1, 0, &z0, &z1);
        xv[0] = xx;
        zspec.drift.evaluator(tc, xv, bv);
        const double bt = bv[0] / (1.0 + dt * std::abs(bv[0]));
        const double sig = zspec.diffusion.eval(tc, xv)(0, 0);
        const double xnew = xx + dt * bt + sig * sdt * z0;
        integral += expfac * (pole * A + (g_at(xnew) - pole) * B / dt);
        xx = xnew;
        tc += dt;
        expfac *= std::exp(-lambda * dt);
      }
      acc += integral;
    }
    out[node] = acc / static_cast<double>(cfg.mc_paths);
  }
  return out;
}

inline std::vector<double> centered_gradient(const std::vector<double>& grid,
                                             const std::vector<double>& f) {
  const std::size_t n = grid.size();
  std::vector<double> d(n, 0.0);
  const double dx = grid[1] - grid[0];
  for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (f[i + 1] - f[i - 1]) / (2.0 * dx);
  d[0] = (f[1] - f[0]) / dx;
  d[n - 1] = (f[n - 1] - f[n - 2]) / dx;
  return d;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// [OP] picard_iterate: one application of the resolvent map
//   phi_new(x) = int_0^U e^{-lambda u} P_u^Z ( phi'_prev b + b )(x) du.
// ---------------------------------------------------------------------------

inline PhiTable picard_iterate(const ProblemSpec& zspec, const model::DriftSpec& b,
                               const ZvonkinConfig& cfg, const PhiTable& prev) {
  if (zspec.dimension != 1) throw ConfigError("zvonkin solver is d=1 only");
  if (!(prev.lambda > 0.0)) throw ConfigError("picard_iterate requires lambda > 0");
  const auto& grid = prev.grid;
  std::vector<double> g(grid.size());
  VectorXd x(1), bv(1);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    x[0] = grid[i];
    b.evaluator(0.0, x, bv);
    g[i] = prev.phi_prime_values[i] * bv[0] + bv[0];
    if (!std::isfinite(g[i]))
      throw IterationError("source not finite at node " + std::to_string(i));
  }
  PhiTable next = prev;
  next.phi_values = (cfg.semigroup_eval == SemigroupEval::GridPde)
                        ? detail::resolvent_grid_pde(zspec, grid, g, prev.lambda, cfg)
                        : detail::resolvent_mc(zspec, grid, g, prev.lambda, cfg);
  for (double v : next.phi_values)
    if (!std::isfinite(v)) throw IterationError("iterate produced NaN");
  next.phi_prime_values = detail::centered_gradient(grid, next.phi_values);
  return next;
}

// ---------------------------------------------------------------------------
// [OP] solve_phi: Picard iteration from phi == 0 with contraction tracking.
// lambda == 0 selects lambda = 10 (1 + sup|b| + sup|b'|) and doubles on
// NonContractionError (up to six times).
// ---------------------------------------------------------------------------

inline PhiTable solve_phi(const ProblemSpec& zspec, const model::DriftSpec& b,
                          const ZvonkinConfig& cfg) {
  if (zspec.dimension != 1) throw ConfigError("zvonkin solver is d=1 only");
  const auto grid = linspace(-cfg.L, cfg.L, cfg.n_nodes);

  double lambda = cfg.lambda;
  if (lambda <= 0.0) {
    double supb = 0.0, supbp = 0.0;
    VectorXd x(1), bv(1), bv2(1);
    const double h = 1e-5;
    for (double xi : grid) {
      x[0] = xi;
      b.evaluator(0.0, x, bv);
      supb = std::max(supb, std::abs(bv[0]));
      x[0] = xi + h;
      b.evaluator(0.0, x, bv2);
      x[0] = xi - h;
      b.evaluator(0.0, x, bv);
      supbp = std::max(supbp, std::abs(bv2[0] - bv[0]) / (2.0 * h));
    }
    lambda = 10.0 * (1.0 + supb + supbp);
  }

  const int max_doublings = cfg.lambda > 0.0 ? 0 : 6;
  for (int attempt = 0;; ++attempt) {
    PhiTable tab;
    tab.grid = grid;
    tab.phi_values.assign(grid.size(), 0.0);
    tab.phi_prime_values.assign(grid.size(), 0.0);
    tab.lambda = lambda;
    try {
      double prev_delta = std::numeric_limits<double>::infinity();
      int consec_bad = 0;
      for (int it = 1; it <= cfg.max_iter; ++it) {
        PhiTable next = picard_iterate(zspec, b, cfg, tab);
        double delta = 0.0;
        for (std::size_t i = 0; i < grid.size(); ++i)
          delta = std::max(delta, std::abs(next.phi_values[i] - tab.phi_values[i]));
        tab = std::move(next);
        tab.iterations = static_cast<std::size_t>(it);
        if (it >= 2 && prev_delta > 0.0) {
          const double rho = delta / prev_delta;
          tab.iteration_history.push_back(rho);
          consec_bad = (rho >= 1.0) ? consec_bad + 1 : 0;
          if (consec_bad >= 3)
            throw NonContractionError("three consecutive rho >= 1 at lambda " +
                                      std::to_string(lambda));
        }
        prev_delta = delta;
        if (delta <= cfg.tol) {
          tab.converged = true;
          break;
        }
      }
      return tab;
    } catch (const NonContractionError&) {
      if (attempt >= max_doublings) throw;
      lambda *= 2.0;
    }
  }
}

// ---------------------------------------------------------------------------
// [OP] check_diffeo: sup-norm margins against the smallness threshold
//   1/2 ^ K2/(2 K1 + K2) and the bi-Lipschitz sandwich
//   1/2 |x-y| <= |Phi(x)-Phi(y)| <= 3/2 |x-y| on random pairs.
// The headline pass uses the gradient margin (which drives the sandwich);
// the sum margin is reported alongside.
// ---------------------------------------------------------------------------

struct DiffeoReport {
  double sup_phi = 0.0;
  double sup_phi_prime = 0.0;
  double threshold = 0.0;
  bool grad_ok = false;
  bool sum_ok = false;
  bool pass = false;
  bool sandwich_ok = false;
  double sandwich_min_ratio = 0.0;
  double sandwich_max_ratio = 0.0;

  Json to_json() const {
    return Json{{"sup_phi", sup_phi},
                {"sup_phi_prime", sup_phi_prime},
                {"threshold", threshold},
                {"grad_ok", grad_ok},
                {"sum_ok", sum_ok},
                {"pass", pass},
                {"sandwich_ok", sandwich_ok},
                {"sandwich_min_ratio", sandwich_min_ratio},
                {"sandwich_max_ratio", sandwich_max_ratio}};
  }
};

inline DiffeoReport check_diffeo(const PhiTable& tab, double K1, double K2,
                                 std::size_t n_pairs = 1000, std::uint64_t seed = 99) {
  if (!(K2 > 0.0)) throw ConfigError("check_diffeo requires K2 > 0");
  DiffeoReport rep;
  rep.sup_phi = tab.sup_phi();
  rep.sup_phi_prime = tab.sup_phi_prime();
  rep.threshold = std::min(0.5, K2 / (2.0 * K1 + K2));
  rep.grad_ok = rep.sup_phi_prime < rep.threshold;
  rep.sum_ok = rep.sup_phi + rep.sup_phi_prime < rep.threshold;
  rep.pass = rep.grad_ok;

  CounterRng rng(seed);
  const double L = tab.grid.back();
  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const double x = -L + 2.0 * L * rng.uniform(k, 0, rng_stream::kScatter, 0);
    const double y = -L + 2.0 * L * rng.uniform(k, 1, rng_stream::kScatter, 0);
    if (std::abs(x - y) < 1e-9) continue;
    const double ratio = std::abs(tab.Phi(x) - tab.Phi(y)) / std::abs(x - y);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
  }
  rep.sandwich_min_ratio = lo;
  rep.sandwich_max_ratio = hi;
  rep.sandwich_ok = (lo >= 0.5 - 1e-12) && (hi <= 1.5 + 1e-12);
  return rep;
}

// ---------------------------------------------------------------------------
// [OP] transformed_drift_monotonicity: sampled audit of
//   <Z(Phi^{-1}(x)) - Z(Phi^{-1}(y)), x-y> <= -K |x-y|^{beta+2} + C |x-y|^2
// with K, C from the dissipative-map transfer formulas:
//   K = (K2 - K1 supT) / (K5^beta 2^{(beta-1)+}) * (beta^2/((beta+1)(beta+2)^2)
//        if beta <= 2 else 12^{-beta/2}),
//   C = K2 + K4 + (K1 + K3) supT,   T = phi'/(1+phi').
// ---------------------------------------------------------------------------

struct MonotonicityReport {
  double K = 0.0, C = 0.0;
  double sup_T = 0.0, K5bar = 1.0;
  double max_violation = 0.0;
  std::size_t violations = 0;
  std::size_t n_pairs = 0;
  bool lemma_applicable = true;

  Json to_json() const {
    return Json{{"K", K},
                {"C", C},
                {"sup_T", sup_T},
                {"K5bar", K5bar},
                {"max_violation", max_violation},
                {"violations", violations},
                {"n_pairs", n_pairs},
                {"lemma_applicable", lemma_applicable}};
  }
};

inline MonotonicityReport transformed_drift_monotonicity(const ProblemSpec& zspec,
                                                         const PhiTable& tab,
                                                         std::size_t n_pairs,
                                                         double radius,
                                                         std::uint64_t seed) {
  if (zspec.dimension != 1) throw ConfigError("monotonicity audit is d=1 only");
  if (!zspec.reference_data)
    throw ConfigError("problem lacks the polynomial-growth constants of Z");
  const auto& rd = *zspec.reference_data;

  double supT = 0.0;
  for (double dp : tab.phi_prime_values) {
    if (1.0 + dp <= 0.0) throw DiffeoError("1 + phi' <= 0; map not invertible");
    supT = std::max(supT, std::abs(dp / (1.0 + dp)));
  }
  MonotonicityReport rep;
  rep.sup_T = supT;
  rep.n_pairs = n_pairs;
  double k5 = 1.0;
  for (std::size_t i = 0; i < tab.grid.size(); ++i)
    k5 = std::max(k5, std::abs(tab.grid[i] + tab.phi_values[i]) /
                          (1.0 + std::abs(tab.grid[i])));
  rep.K5bar = k5;
  const double beta = rd.beta;
  const double shape = (beta <= 2.0)
                           ? beta * beta / ((beta + 1.0) * (beta + 2.0) * (beta + 2.0))
                           : std::pow(12.0, -beta / 2.0);
  rep.K = (rd.K2 - rd.K1 * supT) /
          (std::pow(k5, beta) * std::pow(2.0, std::max(0.0, beta - 1.0))) * shape;
  rep.C = rd.K2 + rd.K4 + (rd.K1 + rd.K3) * supT;
  rep.lemma_applicable = rd.K2 > rd.K1 * supT;

  // Phi^{-1} by monotone interpolation on the grid image.
  std::vector<double> image(tab.grid.size());
  for (std::size_t i = 0; i < tab.grid.size(); ++i)
    image[i] = tab.grid[i] + tab.phi_values[i];
  for (std::size_t i = 1; i < image.size(); ++i)
    if (!(image[i] > image[i - 1])) throw DiffeoError("grid image not increasing");
  auto phi_inv = [&](double w) {
    const auto it = std::upper_bound(image.begin(), image.end(), w);
    if (it == image.begin()) return tab.grid.front();
    if (it == image.end()) return tab.grid.back();
    const std::size_t hi = static_cast<std::size_t>(it - image.begin());
    const std::size_t lo = hi - 1;
    const double t = (w - image[lo]) / (image[hi] - image[lo]);
    return tab.grid[lo] + t * (tab.grid[hi] - tab.grid[lo]);
  };

  const double wlo = std::max(image.front(), -radius);
  const double whi = std::min(image.back(), radius);
  CounterRng rng(seed);
  VectorXd xv(1), zx(1), zy(1);
  for (std::size_t k = 0; k < n_pairs; ++k) {
    const double x = wlo + (whi - wlo) * rng.uniform(k, 0, rng_stream::kScatter, 0);
    const double y = wlo + (whi - wlo) * rng.uniform(k, 1, rng_stream::kScatter, 0);
    const double v = std::abs(x - y);
    if (v <= 0.0) continue;  // diagonal: vacuous
    xv[0] = phi_inv(x);
    zspec.drift.evaluator(0.0, xv, zx);
    xv[0] = phi_inv(y);
    zspec.drift.evaluator(0.0, xv, zy);
    const double lhs = (zx[0] - zy[0]) * (x - y);
    const double rhs = -rep.K * std::pow(v, beta + 2.0) + rep.C * v * v;
    const double viol = lhs - rhs;
    if (viol > 0.0) {
      ++rep.violations;
      rep.max_violation = std::max(rep.max_violation, viol);
    }
  }
  return rep;
}

// ---------------------------------------------------------------------------
// A-priori bound audit: Theta-functional envelopes for sup|phi| and
// sup|phi'|, evaluated with supplied constants; reported as margins.
// ---------------------------------------------------------------------------

struct ThetaAuditInputs {
  double zeta = 1.0;
  double p = 5.0;
  double beta = 2.0;
  double c0_ultra = 1.0;   // ultracontractivity constant
  double cbar0 = 1.0;      // gradient-estimate constant
  double delta = 0.0;      // gradient-estimate exponential rate
  double log_mu_f = 1.0;   // log mu(e^{zeta |f|^p})
  double log_mu_g = 1.0;
};

struct ThetaAuditReport {
  double theta1_f = 0.0, theta1_g = 0.0, theta2_f = 0.0, theta2_g = 0.0;
  double bound_grad = 0.0, bound_sup = 0.0;
  double margin_grad = 0.0, margin_sup = 0.0;
  bool denominator_positive = false;

  Json to_json() const {
    return Json{{"theta1_f", theta1_f},     {"theta1_g", theta1_g},
                {"theta2_f", theta2_f},     {"theta2_g", theta2_g},
                {"bound_grad", bound_grad}, {"bound_sup", bound_sup},
                {"margin_grad", margin_grad},
                {"margin_sup", margin_sup},
                {"denominator_positive", denominator_positive}};
  }
};

inline double theta1(double lambda, double zeta, double p, double beta, double log_mu) {
  return std::pow(zeta, -1.0 / p) *
         (std::pow(lambda, beta / p - 0.5) * beta * (0.5 - beta / p) +
          (1.0 / std::sqrt(lambda)) * (1.0 + std::pow(std::max(0.0, log_mu), 1.0 / p)));
}

inline double theta2(double lambda, double zeta, double p, double beta, double log_mu) {
  return std::pow(zeta, -1.0 / p) *
         (std::pow(lambda, beta / p - 1.0) * beta * (1.0 - beta / p) +
          (1.0 / lambda) * (1.0 + std::pow(std::max(0.0, log_mu), 1.0 / p)));
}

inline ThetaAuditReport theta_bound_audit(const PhiTable& tab,
                                          const ThetaAuditInputs& in) {
  ThetaAuditReport rep;
  const double lam = tab.lambda;
  const double amp = std::pow(std::max(2.0 * in.c0_ultra, 1.0), 1.0 / in.p);
  rep.theta1_f = theta1(lam - in.delta, in.zeta, in.p, in.beta, in.log_mu_f);
  rep.theta1_g = theta1(lam - in.delta, in.zeta, in.p, in.beta, in.log_mu_g);
  rep.theta2_f = theta2(lam, in.zeta, in.p, in.beta, in.log_mu_f);
  rep.theta2_g = theta2(lam, in.zeta, in.p, in.beta, in.log_mu_g);
  const double denom = 1.0 - in.cbar0 * amp * rep.theta1_g;
  rep.denominator_positive = denom > 0.0;
  if (rep.denominator_positive) {
    rep.bound_grad = in.cbar0 * amp * rep.theta1_f / denom;
    rep.bound_sup =
        amp * rep.theta2_f + in.cbar0 * amp * amp * rep.theta1_f * rep.theta2_g / denom;
    rep.margin_grad = rep.bound_grad - tab.sup_phi_prime();
    rep.margin_sup = rep.bound_sup - tab.sup_phi();
  }
  return rep;
}

}  // namespace contractlab::zvonkin
