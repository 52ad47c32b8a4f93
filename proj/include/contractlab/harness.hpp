#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "contractlab/auxfun.hpp"
#include "contractlab/common.hpp"
#include "contractlab/model.hpp"
#include "contractlab/otdist.hpp"
#include "contractlab/sde.hpp"

namespace contractlab::harness {

using Json = nlohmann::ordered_json;
using Eigen::VectorXd;

inline constexpr const char* kVersion = "0.1.0";

// ---------------------------------------------------------------------------
// ExperimentConfig
// ---------------------------------------------------------------------------

struct ExperimentConfig {
  Json problem;  // builtin reference or inline spec
  // certificate options
  double q = 1.0;
  std::optional<auxfun::FeasiblePoint> point;     // fixed feasible point
  std::optional<auxfun::SearchBox> search_box;    // or grid search
  auxfun::GridConfig grid;
  // simulation options
  VectorXd x0, y0;
  double T = 4.0;
  double dt = 1e-3;
  std::size_t n_paths = 10000;
  std::uint64_t seed = 1;
  std::vector<double> output_times;
  sde::Scheme scheme = sde::Scheme::TamedEuler;
  double eps_couple = 0.0;  // 0 = default 1e-5 * |x0-y0|
  // wasserstein options
  otdist::Method w_method = otdist::Method::Exact;
  double w_epsilon = 0.0;
  std::size_t n_bootstrap = 200;
  std::size_t marginal_paths = 0;  // 0 = n_paths
  // output
  std::string out_dir = ".";
  int threads = 1;

  static ExperimentConfig from_json(const Json& j);
};

inline ExperimentConfig ExperimentConfig::from_json(const Json& j) {
  ExperimentConfig c;
  c.problem = j.at("problem");
  const Json& cj = j.at("certificate");
  c.q = cj.at("q").get<double>();
  if (cj.contains("point"))
    c.point = auxfun::FeasiblePoint{cj.at("point").at("ktilde2").get<double>(),
                                    cj.at("point").at("v0").get<double>()};
  if (cj.contains("search_box")) {
    const Json& b = cj.at("search_box");
    c.search_box = auxfun::SearchBox{
        b.at("ktilde2_min").get<double>(), b.at("ktilde2_max").get<double>(),
        b.at("v0_min").get<double>(), b.at("v0_max").get<double>()};
  }
  if (!c.point && !c.search_box)
    throw ConfigError("certificate needs either a point or a search_box");
  if (cj.contains("grid_nodes")) c.grid.n_nodes = cj.at("grid_nodes").get<int>();

  const Json& sj = j.at("simulation");
  auto vec = [&](const Json& v) {
    VectorXd out(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
      out[static_cast<Eigen::Index>(i)] = v.at(i).get<double>();
    return out;
  };
  c.x0 = vec(sj.at("x0"));
  c.y0 = vec(sj.at("y0"));
  c.T = sj.at("T").get<double>();
  c.dt = sj.at("dt").get<double>();
  c.n_paths = sj.at("n_paths").get<std::size_t>();
  if (sj.contains("seed")) c.seed = sj.at("seed").get<std::uint64_t>();
  for (const auto& t : sj.at("output_times")) {
    const double tv = t.get<double>();
    if (tv < 0.0 || tv > c.T + 1e-12)
      throw ConfigError("output time " + std::to_string(tv) + " outside [0, T]");
    c.output_times.push_back(tv);
  }
  if (sj.contains("scheme"))
    c.scheme = sj.at("scheme").get<std::string>() == "euler" ? sde::Scheme::Euler
                                                             : sde::Scheme::TamedEuler;
  if (sj.contains("eps_couple")) c.eps_couple = sj.at("eps_couple").get<double>();

  if (j.contains("wasserstein")) {
    const Json& w = j.at("wasserstein");
    if (w.contains("method"))
      c.w_method = w.at("method").get<std::string>() == "entropic"
                       ? otdist::Method::Entropic
                       : otdist::Method::Exact;
    if (w.contains("epsilon")) c.w_epsilon = w.at("epsilon").get<double>();
    if (w.contains("bootstrap")) c.n_bootstrap = w.at("bootstrap").get<std::size_t>();
    if (w.contains("marginal_paths"))
      c.marginal_paths = w.at("marginal_paths").get<std::size_t>();
  }
  if (j.contains("out_dir")) c.out_dir = j.at("out_dir").get<std::string>();
  if (j.contains("threads")) c.threads = j.at("threads").get<int>();
  return c;
}

// ---------------------------------------------------------------------------
// VerificationReport
// ---------------------------------------------------------------------------

struct VerificationRow {
  double t = 0.0;
  double mean_dist = 0.0;
  double e_psi = 0.0;
  double stderr_psi = 0.0;
  double u_theta = 0.0;
  bool pass_psi = true;
  double w_q = std::numeric_limits<double>::quiet_NaN();
  double w_stderr = std::numeric_limits<double>::quiet_NaN();
  double bound_w = std::numeric_limits<double>::quiet_NaN();
  bool pass_w = true;
  double frac_coupled = 0.0;
};

struct VerificationReport {
  std::vector<VerificationRow> rows;
  auxfun::Certificate certificate;
  std::uint64_t seed = 0;
  double dt = 0.0;
  double q = 1.0;
  double initial_distance = 0.0;
  std::string problem_hash, profile_hash;
  std::string version = kVersion;

  bool all_pass() const {
    for (const auto& r : rows)
      if (!r.pass_psi || !r.pass_w) return false;
    return true;
  }

  Json to_json() const {
    Json rows_j = Json::array();
    for (const auto& r : rows) {
      Json row{{"t", r.t},
               {"mean_dist", r.mean_dist},
               {"e_psi", r.e_psi},
               {"stderr_psi", r.stderr_psi},
               {"u_theta", r.u_theta},
               {"pass_psi", r.pass_psi},
               {"frac_coupled", r.frac_coupled}};
      if (std::isfinite(r.w_q)) {
        row["w_q"] = r.w_q;
        row["w_stderr"] = r.w_stderr;
        row["bound_w"] = r.bound_w;
        row["pass_w"] = r.pass_w;
      }
      rows_j.push_back(row);
    }
    return Json{{"version", version},
                {"seed", seed},
                {"dt", dt},
                {"q", q},
                {"initial_distance", initial_distance},
                {"problem_hash", problem_hash},
                {"profile_hash", profile_hash},
                {"certificate", certificate.to_json()},
                {"rows", rows_j}};
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "t,mean_dist,e_psi,stderr_psi,u_theta,pass_psi,w_q,w_stderr,bound_w,"
           "pass_w,frac_coupled\n";
    for (const auto& r : rows)
      out << r.t << "," << r.mean_dist << "," << r.e_psi << "," << r.stderr_psi
          << "," << r.u_theta << "," << (r.pass_psi ? 1 : 0) << "," << r.w_q
          << "," << r.w_stderr << "," << r.bound_w << "," << (r.pass_w ? 1 : 0)
          << "," << r.frac_coupled << "\n";
  }
};

// ---------------------------------------------------------------------------
// [OP] verify_bound: per-time check of E psi(V_t) against the comparison
// function, one-sided with 3 sigma MC slack plus the O(dt) discretization
// allowance 2 kappa dt * bound.
// ---------------------------------------------------------------------------

inline VerificationReport verify_bound(const sde::CoupledEnsemble& ens,
                                       const auxfun::PsiTable& psi,
                                       const auxfun::Certificate& cert) {
  if (ens.profile_hash != cert.profile_hash)
    throw ConfigError("ensemble profile hash " + ens.profile_hash +
                      " does not match certificate " + cert.profile_hash);
  VerificationReport rep;
  rep.certificate = cert;
  rep.seed = ens.master_seed;
  rep.dt = ens.step_config.dt;
  rep.q = (cert.p + 1.0) / 2.0;
  rep.initial_distance = ens.initial_distance;
  rep.problem_hash = ens.problem_hash;
  rep.profile_hash = ens.profile_hash;

  const double psi_v0 = psi.psi(powi(ens.initial_distance, cert.p));
  std::vector<double> psivals;
  for (std::size_t ti = 0; ti < ens.times.size(); ++ti) {
    psivals.resize(ens.distances[ti].size());
    for (std::size_t pi = 0; pi < psivals.size(); ++pi)
      psivals[pi] = psi.psi(powi(ens.distances[ti][pi], cert.p));
    const auto ms = mean_stderr(psivals);
    VerificationRow row;
    row.t = ens.times[ti];
    row.mean_dist = mean_stderr(ens.distances[ti]).mean;
    row.e_psi = ms.mean;
    row.stderr_psi = ms.stderr_;
    row.u_theta = auxfun::u_theta(cert, psi_v0, row.t);
    row.frac_coupled = ens.frac_coupled(ti);
    const double allowance =
        3.0 * row.stderr_psi + 2.0 * cert.kappa * ens.step_config.dt * row.u_theta;
    row.pass_psi = row.e_psi <= row.u_theta + allowance;
    rep.rows.push_back(row);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// [OP] run_experiment: certificate -> psi -> coupled ensemble -> independent
// marginal ensembles -> distances -> report + files.
// ---------------------------------------------------------------------------

struct ExperimentArtifacts {
  VerificationReport report;
  auxfun::Certificate certificate;
  auxfun::PsiTable psi;
  sde::CoupledEnsemble ensemble;
};

inline ExperimentArtifacts run_experiment(const ExperimentConfig& cfg,
                                          bool write_files = true) {
  // stage: problem
  model::ProblemSpec spec;
  try {
    spec = model::problem_from_json(cfg.problem);
  } catch (const Error& e) {
    throw ConfigError(std::string("stage problem: ") + e.what());
  }
  if (!spec.profile) throw ConfigError("stage problem: profile required");
  if (std::abs(spec.profile->q - cfg.q) > 1e-12)
    throw ConfigError("stage certificate: q mismatch between profile (" +
                      std::to_string(spec.profile->q) + ") and request (" +
                      std::to_string(cfg.q) + ")");

  ExperimentArtifacts art;
  const double p = 2.0 * cfg.q - 1.0;
  const double s0 = spec.diffusion.sigma0;

  // stage: certificate + psi
  try {
    auxfun::FeasiblePoint pt;
    if (cfg.search_box) {
      auto [best, cert] =
          auxfun::optimize_certificate(*spec.profile, s0, cfg.q, *cfg.search_box);
      pt = best;
      art.certificate = cert;
    } else {
      pt = *cfg.point;
      art.certificate = auxfun::certificate(*spec.profile, s0, p, pt, cfg.grid);
    }
    art.psi = auxfun::build_psi(*spec.profile, s0, p, pt, cfg.grid);
  } catch (const Error& e) {
    throw ConfigError(std::string("stage certificate: ") + e.what());
  }

  // stage: coupled ensemble
  sde::StepConfig scfg;
  scfg.dt = cfg.dt;
  scfg.scheme = cfg.scheme;
  const double r0 = (cfg.x0 - cfg.y0).norm();
  scfg.eps_couple = cfg.eps_couple > 0.0 ? cfg.eps_couple : 1e-5 * std::max(r0, 1e-6);
  try {
    art.ensemble = sde::simulate_ensemble(spec, cfg.x0, cfg.y0, cfg.T, scfg,
                                          cfg.n_paths, cfg.seed, cfg.output_times,
                                          cfg.threads);
  } catch (const Error& e) {
    throw SimulationError(std::string("stage ensemble: ") + e.what());
  }

  art.report = verify_bound(art.ensemble, art.psi, art.certificate);

  // stage: independent marginal laws and empirical distances
  try {
    const std::size_t nm = cfg.marginal_paths ? cfg.marginal_paths : cfg.n_paths;
    const auto ex = sde::simulate_marginal(spec, cfg.x0, cfg.T, scfg, nm,
                                           CounterRng::derive(cfg.seed, 101),
                                           cfg.output_times, cfg.threads);
    const auto ey = sde::simulate_marginal(spec, cfg.y0, cfg.T, scfg, nm,
                                           CounterRng::derive(cfg.seed, 202),
                                           cfg.output_times, cfg.threads);
    otdist::WqOptions wopt;
    wopt.epsilon = cfg.w_epsilon;
    for (std::size_t ti = 0; ti < cfg.output_times.size(); ++ti) {
      auto ma = otdist::EmpiricalMeasure::uniform(ex.states[ti]);
      auto mb = otdist::EmpiricalMeasure::uniform(ey.states[ti]);
      auto& row = art.report.rows[ti];
      row.w_q = otdist::wq_empirical(ma, mb, cfg.q, cfg.w_method, wopt).value;
      row.w_stderr = otdist::bootstrap_stderr(
          ma, mb, cfg.q, cfg.n_bootstrap, CounterRng::derive(cfg.seed, 303 + ti),
          cfg.w_method);
      row.bound_w = auxfun::theoretical_bound(art.certificate, cfg.q, r0, row.t);
      const double allowance = 3.0 * row.w_stderr +
                               2.0 * art.certificate.kappa * cfg.dt * row.bound_w;
      row.pass_w = row.w_q <= row.bound_w + allowance;
    }
  } catch (const Error& e) {
    throw SimulationError(std::string("stage wasserstein: ") + e.what());
  }

  if (write_files) {
    namespace fs = std::filesystem;
    fs::create_directories(cfg.out_dir);
    const fs::path dir(cfg.out_dir);
    {
      std::ofstream out(dir / "report.json");
      out << art.report.to_json().dump(2) << "\n";
    }
    art.report.write_csv((dir / "report.csv").string());
    {
      std::ofstream out(dir / "certificate.json");
      out << art.certificate.to_json().dump(2) << "\n";
    }
    art.psi.write_csv((dir / "psi.csv").string());
    std::vector<double> mean_psi(art.report.rows.size()), se_psi(art.report.rows.size());
    for (std::size_t i = 0; i < art.report.rows.size(); ++i) {
      mean_psi[i] = art.report.rows[i].e_psi;
      se_psi[i] = art.report.rows[i].stderr_psi;
    }
    sde::write_ensemble_csv(art.ensemble, (dir / "ensemble.csv").string(), &mean_psi,
                            &se_psi);
    {
      Json sidecar{{"version", kVersion},
                   {"seed", cfg.seed},
                   {"dt", cfg.dt},
                   {"n_paths", cfg.n_paths},
                   {"problem", cfg.problem},
                   {"problem_hash", art.ensemble.problem_hash},
                   {"profile_hash", art.ensemble.profile_hash}};
      std::ofstream out(dir / "ensemble.meta.json");
      out << sidecar.dump(2) << "\n";
    }
  }
  return art;
}

}  // namespace contractlab::harness
