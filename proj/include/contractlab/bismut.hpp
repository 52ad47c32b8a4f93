#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <iostream>
#include <limits>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "contractlab/common.hpp"
#include "contractlab/linalg.hpp"
#include "contractlab/model.hpp"
#include "contractlab/quadrature.hpp"
#include "contractlab/rng.hpp"
#include "contractlab/sde.hpp"

namespace contractlab::bismut {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using model::ProblemSpec;

using ScalarFn = std::function<double(const VectorXd&)>;

struct GradientEstimate {
  double value = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
  double t = 0.0;
  double dt = 0.0;
  std::uint64_t seed = 0;
};

// ---------------------------------------------------------------------------
// [OP] semigroup_mc: sample mean of f(Y_t^y) over tamed-Euler paths of the
// reference dynamics dY = Z(Y)dt + sigma(Y)dW.
// ---------------------------------------------------------------------------

inline std::pair<double, double> semigroup_mc(const ProblemSpec& spec, const ScalarFn& f,
                                              double t, const VectorXd& y,
                                              std::size_t n, double dt,
                                              std::uint64_t seed, int n_threads = 1) {
  if (!(t > 0.0)) throw DomainError("semigroup_mc requires t > 0");
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(t / dt - 1e-9));
  const CounterRng rng(seed);
  const int d = spec.dimension;
  const double sdt = std::sqrt(dt);
  std::vector<double> vals(n);
  sde::detail::parallel_paths(n, n_threads, [&](std::size_t pi) {
    VectorXd x = y, w(d), b(d);
    std::vector<double> buf(static_cast<size_t>(d));
    double tc = 0.0;
    for (std::size_t k = 0; k < n_steps; ++k) {
      rng.normals(pi, k, rng_stream::kDiffusion1, d, buf.data());
      for (int i = 0; i < d; ++i) w[i] = sdt * buf[static_cast<size_t>(i)];
      spec.drift.evaluator(tc, x, b);
      b /= (1.0 + dt * b.norm());
      x += dt * b + spec.diffusion.eval(tc, x) * w;
      tc += dt;
      if (!all_finite(x))
        throw SimulationError("semigroup path " + std::to_string(pi) + " diverged");
    }
    vals[pi] = f(x);
  });
  const auto ms = mean_stderr(vals);
  return {ms.mean, ms.stderr_};
}

// ---------------------------------------------------------------------------
// [OP] bismut_gradient: probabilistic gradient representation
//   grad_v P_t f(y) = (1/t) E[ f(Y_t^y) int_0^t <sighat^{-1}(Y_s) eta_s, dW_s> ]
// with the variation flow eta and the left-endpoint rule for the integral.
// ---------------------------------------------------------------------------

inline GradientEstimate bismut_gradient(const ProblemSpec& spec, const ScalarFn& f,
                                        double t, const VectorXd& y, const VectorXd& v,
                                        std::size_t n, double dt, std::uint64_t seed,
                                        int n_threads = 1, bool warn = true) {
  if (!(t > 0.0)) throw DomainError("bismut_gradient requires t > 0");
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(t / dt - 1e-9));
  const CounterRng rng(seed);
  const int d = spec.dimension;
  const double sdt = std::sqrt(dt);
  const bool const_sigma = spec.diffusion.sigma_constant;
  MatrixXd sighat_const;
  if (const_sigma)
    sighat_const = sigma_hat_inverse(spec.diffusion.eval(0.0, VectorXd::Zero(d)));

  std::vector<double> vals(n);
  sde::detail::parallel_paths(n, n_threads, [&](std::size_t pi) {
    sde::VariationState st{0.0, y, v};
    VectorXd w(d);
    std::vector<double> buf(static_cast<size_t>(d));
    double integral = 0.0;
    for (std::size_t k = 0; k < n_steps; ++k) {
      rng.normals(pi, k, rng_stream::kDiffusion1, d, buf.data());
      for (int i = 0; i < d; ++i) w[i] = sdt * buf[static_cast<size_t>(i)];
      const MatrixXd& sh = const_sigma ? sighat_const
                                       : sigma_hat_inverse(spec.diffusion.eval(st.t, st.y));
      integral += (sh * st.eta).dot(w);
      st = sde::variation_step(spec, st, dt, w, sde::Scheme::TamedEuler);
    }
    vals[pi] = f(st.y) * integral / t;
  });
  const auto ms = mean_stderr(vals);
  GradientEstimate est{ms.mean, ms.stderr_, n, t, dt, seed};
  if (warn && est.stderr_ > 0.2 * std::abs(est.value) && std::abs(est.value) > 0.0)
    std::cerr << "[bismut] warning: relative stderr " << est.stderr_ / std::abs(est.value)
              << " exceeds 0.2\n";
  return est;
}

// ---------------------------------------------------------------------------
// [OP] fd_gradient: common-random-number central difference
//   (P_t f(y + h v) - P_t f(y - h v)) / (2h).
// ---------------------------------------------------------------------------

inline GradientEstimate fd_gradient(const ProblemSpec& spec, const ScalarFn& f, double t,
                                    const VectorXd& y, const VectorXd& v, double h,
                                    std::size_t n, double dt, std::uint64_t seed,
                                    int n_threads = 1) {
  if (!(h > 0.0)) throw DomainError("fd_gradient requires h > 0");
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(t / dt - 1e-9));
  const CounterRng rng(seed);
  const int d = spec.dimension;
  const double sdt = std::sqrt(dt);
  std::vector<double> vals(n);
  sde::detail::parallel_paths(n, n_threads, [&](std::size_t pi) {
    VectorXd xp = y + h * v, xm = y - h * v, w(d), b(d);
    std::vector<double> buf(static_cast<size_t>(d));
    double tc = 0.0;
    for (std::size_t k = 0; k < n_steps; ++k) {
      rng.normals(pi, k, rng_stream::kDiffusion1, d, buf.data());
      for (int i = 0; i < d; ++i) w[i] = sdt * buf[static_cast<size_t>(i)];
      spec.drift.evaluator(tc, xp, b);
      b /= (1.0 + dt * b.norm());
      xp += dt * b + spec.diffusion.eval(tc, xp) * w;
      spec.drift.evaluator(tc, xm, b);
      b /= (1.0 + dt * b.norm());
      xm += dt * b + spec.diffusion.eval(tc, xm) * w;
      tc += dt;
      if (!all_finite(xp) || !all_finite(xm))
        throw SimulationError("fd path " + std::to_string(pi) + " diverged");
    }
    vals[pi] = (f(xp) - f(xm)) / (2.0 * h);
  });
  const auto ms = mean_stderr(vals);
  return GradientEstimate{ms.mean, ms.stderr_, n, t, dt, seed};
}

// ---------------------------------------------------------------------------
// [OP] ultracontractivity_probe: exponential-moment surrogate
//   m(x0, t) = E exp(delta |Y_t^{x0}|^{beta+2})
// over a grid of starting points, with the small-time envelope fit
//   m <= exp(C (1 + t^{-(beta+2)/beta})) and the running compact-moment
//   average (1/t) int_0^t E|Y_s|^{beta+2} ds.
// ---------------------------------------------------------------------------

struct UltraProbeReport {
  std::vector<double> t_list;
  std::vector<double> x0_list;                 // |x0| values probed (direction e1)
  std::vector<std::vector<double>> estimates;  // [t][x0]
  std::vector<std::vector<double>> stderrs;    // [t][x0]
  std::vector<double> sup_over_x0;             // per t
  std::vector<double> running_moment;          // per t, sup over x0
  double fitted_c = 0.0;
  double beta = 2.0;
  double delta = 0.0;
  struct Overflow {
    double delta, x0, t;
  };
  std::vector<Overflow> overflows;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json rows = nlohmann::ordered_json::array();
    for (std::size_t ti = 0; ti < t_list.size(); ++ti)
      for (std::size_t xi = 0; xi < x0_list.size(); ++xi)
        rows.push_back({{"t", t_list[ti]},
                        {"x0", x0_list[xi]},
                        {"estimate", estimates[ti][xi]},
                        {"stderr", stderrs[ti][xi]}});
    nlohmann::ordered_json j{{"delta", delta},
                             {"beta", beta},
                             {"fitted_c", fitted_c},
                             {"rows", rows}};
    j["sup_over_x0"] = sup_over_x0;
    j["running_moment"] = running_moment;
    nlohmann::ordered_json ov = nlohmann::ordered_json::array();
    for (const auto& o : overflows)
      ov.push_back({{"delta", o.delta}, {"x0", o.x0}, {"t", o.t}});
    j["overflows"] = ov;
    return j;
  }
};

inline UltraProbeReport ultracontractivity_probe(const ProblemSpec& spec, double delta,
                                                 const std::vector<double>& t_list,
                                                 const std::vector<double>& x0_grid,
                                                 std::size_t n, double dt,
                                                 std::uint64_t seed, int n_threads = 1) {
  const double beta = spec.reference_data ? spec.reference_data->beta : 2.0;
  const double expo = beta + 2.0;
  const int d = spec.dimension;
  UltraProbeReport rep;
  rep.t_list = t_list;
  rep.x0_list = x0_grid;
  rep.beta = beta;
  rep.delta = delta;
  rep.estimates.assign(t_list.size(), std::vector<double>(x0_grid.size(), 0.0));
  rep.stderrs.assign(t_list.size(), std::vector<double>(x0_grid.size(), 0.0));
  rep.running_moment.assign(t_list.size(), 0.0);

  double t_max = 0.0;
  for (double t : t_list) t_max = std::max(t_max, t);
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(t_max / dt - 1e-9));
  std::vector<std::size_t> rec_steps(t_list.size());
  for (std::size_t i = 0; i < t_list.size(); ++i)
    rec_steps[i] = std::min(n_steps, static_cast<std::size_t>(std::floor(t_list[i] / dt + 1e-9)));

  const CounterRng base_rng(seed);
  for (std::size_t xi = 0; xi < x0_grid.size(); ++xi) {
    VectorXd x0 = VectorXd::Zero(d);
    x0[0] = x0_grid[xi];
    const CounterRng rng(CounterRng::derive(seed, 1000 + xi));
    std::vector<std::vector<double>> expvals(t_list.size(), std::vector<double>(n, 0.0));
    std::vector<std::vector<double>> runvals(t_list.size(), std::vector<double>(n, 0.0));
    const double sdt = std::sqrt(dt);
    sde::detail::parallel_paths(n, n_threads, [&](std::size_t pi) {
      VectorXd x = x0, w(d), b(d);
      std::vector<double> buf(static_cast<size_t>(d));
      double tc = 0.0, running = 0.0;
      std::size_t rec = 0;
      auto record = [&](std::size_t step_done) {
        while (rec < t_list.size() && rec_steps[rec] == step_done) {
          const double arg = delta * powi(x.norm(), expo);
          expvals[rec][pi] = arg < 700.0 ? std::exp(arg)
                                         : std::numeric_limits<double>::infinity();
          runvals[rec][pi] = (step_done == 0) ? 0.0 : running / tc;
          ++rec;
        }
      };
      record(0);
      for (std::size_t k = 0; k < n_steps; ++k) {
        rng.normals(pi, k, rng_stream::kDiffusion1, d, buf.data());
        for (int i = 0; i < d; ++i) w[i] = sdt * buf[static_cast<size_t>(i)];
        running += powi(x.norm(), expo) * dt;
        spec.drift.evaluator(tc, x, b);
        b /= (1.0 + dt * b.norm());
        x += dt * b + spec.diffusion.eval(tc, x) * w;
        tc += dt;
        record(k + 1);
      }
    });
    for (std::size_t ti = 0; ti < t_list.size(); ++ti) {
      bool overflow = false;
      for (double e : expvals[ti])
        if (std::isinf(e)) overflow = true;
      if (overflow) {
        rep.overflows.push_back({delta, x0_grid[xi], t_list[ti]});
        rep.estimates[ti][xi] = std::numeric_limits<double>::infinity();
        continue;
      }
      const auto ms = mean_stderr(expvals[ti]);
      rep.estimates[ti][xi] = ms.mean;
      rep.stderrs[ti][xi] = ms.stderr_;
      const auto rm = mean_stderr(runvals[ti]);
      rep.running_moment[ti] = std::max(rep.running_moment[ti], rm.mean);
    }
  }

  rep.sup_over_x0.assign(t_list.size(), 0.0);
  double fitted = 0.0;
  for (std::size_t ti = 0; ti < t_list.size(); ++ti) {
    double sup = 0.0;
    for (double e : rep.estimates[ti]) sup = std::max(sup, e);
    rep.sup_over_x0[ti] = sup;
    if (std::isfinite(sup) && sup > 0.0 && t_list[ti] > 0.0) {
      const double envelope = 1.0 + std::pow(t_list[ti], -expo / beta);
      fitted = std::max(fitted, std::log(sup) / envelope);
    }
  }
  rep.fitted_c = std::max(0.0, fitted);
  return rep;
}

// ---------------------------------------------------------------------------
// [OP] exp_integrability: radial quadrature of
//   int e^{zeta |b(x)|^p} dmu-bound,  dmu-bound = c e^{-delta r^{beta+2}} dx,
// honoring the per-shell integrable endpoint singularities of the log drift
// via the substitution r = n + s^m.
// ---------------------------------------------------------------------------

struct DensityBound {
  double c = 1.0;
  double delta = 1.0;
  double exponent = 4.0;  // beta + 2
};

inline double exp_integrability(const model::DriftSpec& b, const DensityBound& mu,
                                double zeta, double p, int dim,
                                double eval_time = std::numeric_limits<double>::infinity(),
                                double rel_tol = 1e-9, int max_shells = 64) {
  if (!(zeta > 0.0) || !(p > 0.0)) throw DomainError("exp_integrability needs zeta,p > 0");
  const double omega =
      2.0 * std::pow(kPi, dim / 2.0) / std::tgamma(dim / 2.0);  // unit-sphere area
  VectorXd x = VectorXd::Zero(dim), bv(dim);
  auto integrand = [&](double r) {
    x[0] = r;
    b.evaluator(eval_time, x, bv);
    const double arg = zeta * std::pow(bv.norm(), p);
    const double dens = mu.c * std::exp(-mu.delta * std::pow(r, mu.exponent) + arg);
    return dens * powi(r, dim - 1);
  };

  const int m = (zeta < 1.0) ? std::max(2, static_cast<int>(std::ceil(2.0 / (1.0 - zeta))))
                             : 8;
  double total = 0.0;
  try {
    for (int shell = 0; shell < max_shells; ++shell) {
      auto sub = [&](double s) {
        const double r = shell + std::pow(s, m);
        return integrand(r) * m * std::pow(s, m - 1);
      };
      const double piece =
          quadrature::adaptive_gl(sub, 0.0, 1.0, rel_tol * (1.0 + total) * 1e-2);
      total += piece;
      if (shell >= 2 && piece < rel_tol * total) break;
      if (shell + 1 == max_shells && piece > rel_tol * total)
        throw DivergenceError("shell contributions did not stabilize");
    }
  } catch (const QuadratureError& e) {
    throw DivergenceError(std::string("integral did not stabilize: ") + e.what());
  }
  return omega * total;
}

}  // namespace contractlab::bismut
