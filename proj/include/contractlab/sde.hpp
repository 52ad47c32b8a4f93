#pragma once

#include <atomic>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <limits>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <Eigen/Dense>

#include "contractlab/common.hpp"
#include "contractlab/linalg.hpp"
#include "contractlab/model.hpp"
#include "contractlab/rng.hpp"

namespace contractlab::sde {

using Eigen::MatrixXd;
using Eigen::VectorXd;
using contractlab::sqrt_psd;
using model::ProblemSpec;

// ---------------------------------------------------------------------------
// Step configuration and pair state.
// ---------------------------------------------------------------------------

enum class Scheme { Euler, TamedEuler };

struct StepConfig {
  double dt = 1e-3;
  Scheme scheme = Scheme::TamedEuler;
  double eps_couple = 1e-5;
  double magnitude_cap = 1e8;  // explosion guard on |x|
};

struct PairState {
  double t = 0.0;
  VectorXd x, y;
  bool coupled = false;
  double tau = std::numeric_limits<double>::quiet_NaN();
};

// ---------------------------------------------------------------------------
// [OP] em_step: one Euler(-tamed) step of the split dynamics
//   x' = x + b~ dt + sigma_tilde(x) n1 + sigma0 n2,   b~ = b/(1+dt|b|) if tamed.
// Noise vectors are N(0, dt I) draws supplied by the caller.
// ---------------------------------------------------------------------------

inline VectorXd em_step(const ProblemSpec& spec, const VectorXd& x, double t,
                        double dt, const VectorXd& noise1, const VectorXd& noise2,
                        Scheme scheme = Scheme::Euler) {
  VectorXd b(spec.dimension);
  spec.drift.evaluator(t, x, b);
  if (scheme == Scheme::TamedEuler) b /= (1.0 + dt * b.norm());
  VectorXd out = x + dt * b + spec.diffusion.sigma0 * noise2;
  if (!spec.diffusion.sigma_tilde_zero)
    out += spec.diffusion.sigma_tilde(t, x) * noise1;
  if (!all_finite(out))
    throw SimulationError("non-finite state at t=" + std::to_string(t));
  return out;
}

// [OP] reflection_matrix: Householder reflection across the hyperplane
// orthogonal to z.
inline MatrixXd reflection_matrix(const VectorXd& z) {
  const double n = z.norm();
  if (!(n > 0.0)) throw DomainError("reflection_matrix requires |z| > 0");
  const VectorXd zh = z / n;
  return MatrixXd::Identity(z.size(), z.size()) - 2.0 * zh * zh.transpose();
}

// ---------------------------------------------------------------------------
// [OP] coupled_step: advance the reflection-coupled pair one step.  The same
// noise drives both components; the sigma0 part of the laggard is reflected
// across the difference direction.  After the pair merges both components
// take identical steps.
//
// Coupling detection (see ledger): the pair merges when the post-step
// distance falls below eps_couple, when the difference reverses direction
// along its previous axis (the step crossed the diagonal), or when the
// within-step bridge draw fires: for the projected difference, an excursion
// across zero inside the step has probability exp(-2 a b / (4 sigma0^2 dt)).
// A negative bridge_uniform disables the probabilistic branch.
// ---------------------------------------------------------------------------

inline PairState coupled_step(const ProblemSpec& spec, const PairState& pair,
                              const StepConfig& cfg, const VectorXd& noise1,
                              const VectorXd& noise2, double bridge_uniform = -1.0) {
  PairState next;
  next.t = pair.t + cfg.dt;
  next.coupled = pair.coupled;
  next.tau = pair.tau;
  next.x = em_step(spec, pair.x, pair.t, cfg.dt, noise1, noise2, cfg.scheme);
  if (pair.coupled) {
    next.y = next.x;
    if (next.x.norm() > cfg.magnitude_cap)
      throw SimulationError("state magnitude cap exceeded");
    return next;
  }

  const VectorXd diff = pair.x - pair.y;
  const double dist = diff.norm();
  const VectorXd rnoise2 = noise2 - (2.0 * diff.dot(noise2) / (dist * dist)) * diff;
  next.y = em_step(spec, pair.y, pair.t, cfg.dt, noise1, rnoise2, cfg.scheme);

  const VectorXd ndiff = next.x - next.y;
  bool couple = ndiff.norm() <= cfg.eps_couple;
  if (!couple) {
    const double proj = ndiff.dot(diff) / dist;
    if (proj <= 0.0) {
      couple = true;
    } else if (bridge_uniform >= 0.0) {
      const double s0 = spec.diffusion.sigma0;
      const double pcross =
          std::exp(-2.0 * dist * proj / (4.0 * s0 * s0 * cfg.dt));
      couple = bridge_uniform < pcross;
    }
  }
  if (couple) {
    next.y = next.x;
    next.coupled = true;
    next.tau = next.t;
  }
  if (next.x.norm() > cfg.magnitude_cap || next.y.norm() > cfg.magnitude_cap)
    throw SimulationError("state magnitude cap exceeded");
  return next;
}

// ---------------------------------------------------------------------------
// Ensembles
// ---------------------------------------------------------------------------

struct CoupledEnsemble {
  std::vector<double> times;
  // distances[time_index][path]; exactly zero after a path couples
  std::vector<std::vector<double>> distances;
  std::vector<double> coupling_times;  // +inf when uncoupled at T
  std::size_t n_paths = 0;
  std::uint64_t master_seed = 0;
  StepConfig step_config;
  std::string problem_hash, profile_hash;
  double initial_distance = 0.0;

  double frac_coupled(std::size_t ti) const {
    std::size_t c = 0;
    for (double tau : coupling_times)
      if (tau <= times[ti] + 1e-12) ++c;
    return static_cast<double>(c) / static_cast<double>(n_paths);
  }
};

struct MarginalEnsemble {
  std::vector<double> times;
  std::vector<Eigen::MatrixXd> states;  // one (n_paths x d) block per time
  std::size_t n_paths = 0;
  std::uint64_t seed = 0;
};

namespace detail {

inline void parallel_paths(std::size_t n_paths, int n_threads,
                           const std::function<void(std::size_t)>& body) {
  n_threads = std::max(1, n_threads);
  if (n_threads == 1) {
    for (std::size_t i = 0; i < n_paths; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> cursor{0};
  std::vector<std::thread> pool;
  std::exception_ptr err;
  std::mutex err_mu;
  for (int w = 0; w < n_threads; ++w) {
    pool.emplace_back([&]() {
      try {
        for (;;) {
          const std::size_t i = cursor.fetch_add(64);
          if (i >= n_paths) return;
          const std::size_t hi = std::min(n_paths, i + 64);
          for (std::size_t k = i; k < hi; ++k) body(k);
        }
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!err) err = std::current_exception();
      }
    });
  }
  for (auto& th : pool) th.join();
  if (err) std::rethrow_exception(err);
}

// Map each output time to the step count after which the state is recorded
// ("last-step value", no interpolation).
inline std::vector<std::size_t> output_steps(const std::vector<double>& times,
                                             double dt, std::size_t n_steps) {
  std::vector<std::size_t> idx(times.size());
  for (std::size_t i = 0; i < times.size(); ++i) {
    const double k = std::floor(times[i] / dt + 1e-9);
    idx[i] = std::min(n_steps, static_cast<std::size_t>(std::max(0.0, k)));
  }
  return idx;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// [OP] simulate_ensemble: reflection-coupled pair ensemble, deterministic in
// (spec, cfg, master_seed) regardless of thread count.
// ---------------------------------------------------------------------------

inline CoupledEnsemble simulate_ensemble(const ProblemSpec& spec, const VectorXd& x0,
                                         const VectorXd& y0, double T,
                                         const StepConfig& cfg, std::size_t n_paths,
                                         std::uint64_t master_seed,
                                         const std::vector<double>& output_times,
                                         int n_threads = 1) {
  if (n_paths < 1) throw ConfigError("simulate_ensemble requires n_paths >= 1");
  if (x0.size() != spec.dimension || y0.size() != spec.dimension)
    throw ConfigError("initial points do not match the problem dimension");
  const double r0 = (x0 - y0).norm();
  if (r0 > 0.0 && cfg.eps_couple > 1e-2 * r0)
    std::cerr << "[sde] warning: eps_couple " << cfg.eps_couple
              << " exceeds 1e-2 * initial distance " << r0 << "\n";

  CoupledEnsemble ens;
  ens.times = output_times;
  ens.n_paths = n_paths;
  ens.master_seed = master_seed;
  ens.step_config = cfg;
  ens.problem_hash = spec.spec_hash();
  ens.profile_hash = spec.profile_hash();
  ens.initial_distance = r0;
  const std::size_t n_steps =
      static_cast<std::size_t>(std::ceil(T / cfg.dt - 1e-9));
  const auto rec_steps = detail::output_steps(output_times, cfg.dt, n_steps);
  ens.distances.assign(output_times.size(), std::vector<double>(n_paths, 0.0));
  ens.coupling_times.assign(n_paths, std::numeric_limits<double>::infinity());

  const CounterRng rng(master_seed);
  const int d = spec.dimension;
  const double sdt = std::sqrt(cfg.dt);

  detail::parallel_paths(n_paths, n_threads, [&](std::size_t pi) {
    try {
      PairState st;
      st.x = x0;
      st.y = y0;
      if (r0 == 0.0) {
        st.coupled = true;
        st.tau = 0.0;
      }
      VectorXd n1(d), n2(d);
      std::vector<double> buf(static_cast<size_t>(d));
      std::size_t rec = 0;
      auto record_until = [&](std::size_t step_done) {
        while (rec < rec_steps.size() && rec_steps[rec] == step_done) {
          ens.distances[rec][pi] = st.coupled ? 0.0 : (st.x - st.y).norm();
          ++rec;
        }
      };
      record_until(0);
      for (std::size_t k = 0; k < n_steps; ++k) {
        if (!spec.diffusion.sigma_tilde_zero) {
          rng.normals(pi, k, rng_stream::kDiffusion1, d, buf.data());
          for (int i = 0; i < d; ++i) n1[i] = sdt * buf[static_cast<size_t>(i)];
        } else {
          n1.setZero();
        }
        rng.normals(pi, k, rng_stream::kDiffusion2, d, buf.data());
        for (int i = 0; i < d; ++i) n2[i] = sdt * buf[static_cast<size_t>(i)];
        const double bu = st.coupled
                              ? -1.0
                              : rng.uniform(pi, k, rng_stream::kBridge, 0);
        st = coupled_step(spec, st, cfg, n1, n2, bu);
        record_until(k + 1);
      }
      if (st.coupled) ens.coupling_times[pi] = st.tau;
    } catch (const Error& e) {
      throw SimulationError("path " + std::to_string(pi) + ": " + e.what());
    }
  });
  return ens;
}

// Marginal ensemble of the single SDE (used for the independent-law distance
// estimates and the weak-solution checks).
inline MarginalEnsemble simulate_marginal(const ProblemSpec& spec, const VectorXd& x0,
                                          double T, const StepConfig& cfg,
                                          std::size_t n_paths, std::uint64_t seed,
                                          const std::vector<double>& output_times,
                                          int n_threads = 1) {
  MarginalEnsemble ens;
  ens.times = output_times;
  ens.n_paths = n_paths;
  ens.seed = seed;
  const std::size_t n_steps =
      static_cast<std::size_t>(std::ceil(T / cfg.dt - 1e-9));
  const auto rec_steps = detail::output_steps(output_times, cfg.dt, n_steps);
  const int d = spec.dimension;
  ens.states.assign(output_times.size(),
                    Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n_paths), d));

  const CounterRng rng(seed);
  const double sdt = std::sqrt(cfg.dt);
  detail::parallel_paths(n_paths, n_threads, [&](std::size_t pi) {
    VectorXd x = x0, n1(d), n2(d);
    std::vector<double> buf(static_cast<size_t>(d));
    double t = 0.0;
    std::size_t rec = 0;
    auto record_until = [&](std::size_t step_done) {
      while (rec < rec_steps.size() && rec_steps[rec] == step_done) {
        ens.states[rec].row(static_cast<Eigen::Index>(pi)) = x.transpose();
        ++rec;
      }
    };
    record_until(0);
    for (std::size_t k = 0; k < n_steps; ++k) {
      if (!spec.diffusion.sigma_tilde_zero) {
        rng.normals(pi, k, rng_stream::kDiffusion1, d, buf.data());
        for (int i = 0; i < d; ++i) n1[i] = sdt * buf[static_cast<size_t>(i)];
      } else {
        n1.setZero();
      }
      rng.normals(pi, k, rng_stream::kDiffusion2, d, buf.data());
      for (int i = 0; i < d; ++i) n2[i] = sdt * buf[static_cast<size_t>(i)];
      x = em_step(spec, x, t, cfg.dt, n1, n2, cfg.scheme);
      t += cfg.dt;
      if (x.norm() > cfg.magnitude_cap)
        throw SimulationError("marginal path " + std::to_string(pi) +
                              " exceeded the magnitude cap");
      record_until(k + 1);
    }
  });
  return ens;
}

// ---------------------------------------------------------------------------
// [OP] variation_flow: joint integration of the state and its derivative with
// respect to the initial condition along v (shared noise).  When the scheme
// is tamed, the linearization differentiates the tamed drift itself so the
// flow is the exact derivative of the discrete map.
// ---------------------------------------------------------------------------

struct VariationState {
  double t = 0.0;
  VectorXd y;
  VectorXd eta;
};

namespace detail {

inline void drift_jacobian(const ProblemSpec& spec, double t, const VectorXd& y,
                           MatrixXd& j) {
  if (spec.drift.jacobian) {
    spec.drift.jacobian(t, y, j);
    return;
  }
  const int d = spec.dimension;
  const double h = 1e-6 * (1.0 + y.norm());
  VectorXd yp = y, ym = y, bp(d), bm(d);
  for (int c = 0; c < d; ++c) {
    yp[c] += h;
    ym[c] -= h;
    spec.drift.evaluator(t, yp, bp);
    spec.drift.evaluator(t, ym, bm);
    j.col(c) = (bp - bm) / (2.0 * h);
    yp[c] = y[c];
    ym[c] = y[c];
  }
}

}  // namespace detail

inline VariationState variation_step(const ProblemSpec& spec, const VariationState& st,
                                     double dt, const VectorXd& noise,
                                     Scheme scheme = Scheme::Euler) {
  const int d = spec.dimension;
  VectorXd b(d);
  spec.drift.evaluator(st.t, st.y, b);
  MatrixXd j(d, d);
  detail::drift_jacobian(spec, st.t, st.y, j);
  double fac = 1.0;
  if (scheme == Scheme::TamedEuler) {
    const double bn = b.norm();
    fac = 1.0 / (1.0 + dt * bn);
    if (bn > 0.0) {
      const Eigen::RowVectorXd btj = b.transpose() * j;
      j = fac * j - (dt * fac * fac / bn) * (b * btj);
    } else {
      j *= fac;
    }
  }

  VariationState next;
  next.t = st.t + dt;
  next.y = st.y + dt * fac * b;
  next.eta = st.eta + dt * j * st.eta;
  // diffusion contributions
  const double s0 = spec.diffusion.sigma0;
  if (spec.diffusion.sigma_constant) {
    if (spec.diffusion.sigma_tilde_zero)
      next.y += s0 * noise;
    else
      next.y += spec.diffusion.eval(st.t, st.y) * noise;
  } else {
    const MatrixXd s = spec.diffusion.eval(st.t, st.y);
    next.y += s * noise;
    const double en = st.eta.norm();
    if (en > 0.0) {
      const double h = 1e-6 * (1.0 + st.y.norm()) / en;
      const MatrixXd ds = (spec.diffusion.eval(st.t, st.y + h * st.eta) -
                           spec.diffusion.eval(st.t, st.y - h * st.eta)) /
                          (2.0 * h);
      next.eta += ds * noise;
    }
  }
  if (!all_finite(next.y) || !all_finite(next.eta))
    throw SimulationError("variation flow non-finite at t=" + std::to_string(next.t));
  return next;
}

struct VariationTrajectory {
  std::vector<double> times;
  std::vector<VectorXd> ys;
  std::vector<VectorXd> etas;
};

inline VariationTrajectory variation_flow(const ProblemSpec& spec, const VectorXd& y0,
                                          const VectorXd& v, double T, double dt,
                                          const std::function<void(std::size_t, VectorXd&)>& noise,
                                          Scheme scheme = Scheme::Euler) {
  const std::size_t n_steps = static_cast<std::size_t>(std::ceil(T / dt - 1e-9));
  VariationTrajectory traj;
  VariationState st{0.0, y0, v};
  traj.times.push_back(0.0);
  traj.ys.push_back(st.y);
  traj.etas.push_back(st.eta);
  VectorXd w(spec.dimension);
  for (std::size_t k = 0; k < n_steps; ++k) {
    noise(k, w);
    st = variation_step(spec, st, dt, w, scheme);
    traj.times.push_back(st.t);
    traj.ys.push_back(st.y);
    traj.etas.push_back(st.eta);
  }
  return traj;
}

// Survival function of the coupling time for b == 0, sigma == sigma0 I, d=1:
// the difference is a Brownian motion of volatility 2 sigma0 started at r0.
inline double brownian_coupling_survival(double r0, double sigma0, double t) {
  if (t <= 0.0) return 1.0;
  return 2.0 * norm_cdf(r0 / (2.0 * sigma0 * std::sqrt(t))) - 1.0;
}

// CSV export: (t, mean_dist, mean_psi_dist, stderr_psi, frac_coupled).  The
// psi columns are supplied by the caller (the harness owns the table).
inline void write_ensemble_csv(const CoupledEnsemble& ens, const std::string& path,
                               const std::vector<double>* mean_psi = nullptr,
                               const std::vector<double>* stderr_psi = nullptr) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path + "' for writing");
  out.precision(17);
  out << "t,mean_dist,mean_psi_dist,stderr_psi,frac_coupled\n";
  for (std::size_t ti = 0; ti < ens.times.size(); ++ti) {
    const auto ms = mean_stderr(ens.distances[ti]);
    out << ens.times[ti] << "," << ms.mean << ","
        << (mean_psi ? (*mean_psi)[ti] : 0.0) << ","
        << (stderr_psi ? (*stderr_psi)[ti] : 0.0) << "," << ens.frac_coupled(ti)
        << "\n";
  }
}

}  // namespace contractlab::sde
