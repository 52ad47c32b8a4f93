// Command-line front end: certificates, simulations, distances, verification
// reports, gradient checks, the 1-D drift-transform solver and the
// ultracontractivity probe.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "contractlab/contractlab.hpp"

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;
using namespace contractlab;

namespace {

Json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  Json j;
  in >> j;
  return j;
}

void write_json(const fs::path& path, const Json& j) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot open '" + path.string() + "' for writing");
  out << j.dump(2) << "\n";
}

struct GlobalOpts {
  std::string config;
  std::string out_dir = ".";
  std::optional<std::uint64_t> seed;
  int threads = 1;

  fs::path resolve_out() const {
    const char* env = std::getenv("CONTRACTLAB_OUT");
    fs::path dir = env ? fs::path(env) : fs::path(out_dir);
    fs::create_directories(dir);
    return dir;
  }
};

struct CertParts {
  model::ProblemSpec spec;
  double q = 1.0;
  std::optional<auxfun::FeasiblePoint> point;
  std::optional<auxfun::SearchBox> box;
  auxfun::GridConfig grid;
};

CertParts parse_cert(const Json& cfg) {
  CertParts out;
  out.spec = model::problem_from_json(cfg.at("problem"));
  if (!out.spec.profile) throw ConfigError("problem has no dissipativity profile");
  const Json& cj = cfg.at("certificate");
  out.q = cj.at("q").get<double>();
  if (std::abs(out.spec.profile->q - out.q) > 1e-12)
    throw ConfigError("q mismatch between profile and certificate request");
  if (cj.contains("point"))
    out.point = auxfun::FeasiblePoint{cj.at("point").at("ktilde2").get<double>(),
                                      cj.at("point").at("v0").get<double>()};
  if (cj.contains("search_box")) {
    const Json& b = cj.at("search_box");
    out.box = auxfun::SearchBox{
        b.at("ktilde2_min").get<double>(), b.at("ktilde2_max").get<double>(),
        b.at("v0_min").get<double>(), b.at("v0_max").get<double>()};
  }
  if (!out.point && !out.box)
    throw ConfigError("certificate needs a point or a search_box");
  if (cj.contains("grid_nodes")) out.grid.n_nodes = cj.at("grid_nodes").get<int>();
  return out;
}

int cmd_certificate(const GlobalOpts& g) {
  const Json cfg = load_json(g.config);
  CertParts parts = parse_cert(cfg);
  const double p = 2.0 * parts.q - 1.0;
  const double s0 = parts.spec.diffusion.sigma0;
  auxfun::Certificate cert;
  auxfun::FeasiblePoint pt;
  if (parts.box) {
    auto [best, c] =
        auxfun::optimize_certificate(*parts.spec.profile, s0, parts.q, *parts.box);
    pt = best;
    cert = c;
  } else {
    pt = *parts.point;
    cert = auxfun::certificate(*parts.spec.profile, s0, p, pt, parts.grid);
  }
  const auto psi = auxfun::build_psi(*parts.spec.profile, s0, p, pt, parts.grid);
  const auto dir = g.resolve_out();
  Json out = cert.to_json();
  out["grid_nodes"] = parts.grid.n_nodes;
  write_json(dir / "certificate.json", out);
  psi.write_csv((dir / "psi.csv").string());
  std::cout << out.dump(2) << "\n";
  return 0;
}

harness::ExperimentConfig experiment_from(const GlobalOpts& g) {
  Json cfg = load_json(g.config);
  auto ec = harness::ExperimentConfig::from_json(cfg);
  if (g.seed) ec.seed = *g.seed;
  ec.threads = g.threads;
  ec.out_dir = g.resolve_out().string();
  return ec;
}

int cmd_simulate(const GlobalOpts& g) {
  auto ec = experiment_from(g);
  auto spec = model::problem_from_json(ec.problem);
  sde::StepConfig scfg;
  scfg.dt = ec.dt;
  scfg.scheme = ec.scheme;
  const double r0 = (ec.x0 - ec.y0).norm();
  scfg.eps_couple = ec.eps_couple > 0.0 ? ec.eps_couple : 1e-5 * std::max(r0, 1e-6);
  const auto ens = sde::simulate_ensemble(spec, ec.x0, ec.y0, ec.T, scfg, ec.n_paths,
                                          ec.seed, ec.output_times, ec.threads);
  const auto dir = g.resolve_out();
  sde::write_ensemble_csv(ens, (dir / "ensemble.csv").string());
  Json sidecar{{"version", harness::kVersion},
               {"seed", ec.seed},
               {"dt", ec.dt},
               {"n_paths", ec.n_paths},
               {"problem", ec.problem},
               {"problem_hash", ens.problem_hash},
               {"profile_hash", ens.profile_hash}};
  write_json(dir / "ensemble.meta.json", sidecar);
  std::cout << "wrote " << (dir / "ensemble.csv").string() << "\n";
  return 0;
}

int cmd_wasserstein(const std::string& file_a, const std::string& file_b, double q,
                    const std::string& method, double epsilon, const GlobalOpts& g) {
  const auto a = otdist::read_cloud_csv(file_a);
  const auto b = otdist::read_cloud_csv(file_b);
  otdist::WqOptions opt;
  opt.epsilon = epsilon;
  const auto m = method == "entropic" ? otdist::Method::Entropic : otdist::Method::Exact;
  const auto res = otdist::wq_empirical(a, b, q, m, opt);
  Json out{{"w_q", res.value},
           {"q", q},
           {"method", method},
           {"cost", res.plan.cost},
           {"bias_bound", res.plan.bias_bound}};
  write_json(g.resolve_out() / "distance.json", out);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_verify(const GlobalOpts& g) {
  auto ec = experiment_from(g);
  const auto art = harness::run_experiment(ec, true);
  std::cout << art.report.to_json().dump(2) << "\n";
  return art.report.all_pass() ? 0 : 2;
}

int cmd_bismut(const GlobalOpts& g) {
  const Json cfg = load_json(g.config);
  auto spec = model::problem_from_json(cfg.at("problem"));
  const double t = cfg.value("t", 1.0);
  const double dt = cfg.value("dt", 1e-3);
  const std::size_t n = cfg.value("n", static_cast<std::size_t>(20000));
  const double h = cfg.value("h", 1e-3);
  std::uint64_t seed = g.seed ? *g.seed : cfg.value("seed", 7);
  Eigen::VectorXd y = Eigen::VectorXd::Zero(spec.dimension);
  Eigen::VectorXd v = Eigen::VectorXd::Zero(spec.dimension);
  v[0] = 1.0;
  if (cfg.contains("y"))
    for (Eigen::Index i = 0; i < y.size(); ++i) y[i] = cfg.at("y").at(i).get<double>();
  const std::string fname = cfg.value("f", "linear");
  bismut::ScalarFn f;
  if (fname == "linear")
    f = [](const Eigen::VectorXd& x) { return x[0]; };
  else if (fname == "quadratic")
    f = [](const Eigen::VectorXd& x) { return x.squaredNorm(); };
  else if (fname == "tanh")
    f = [](const Eigen::VectorXd& x) { return std::tanh(x[0]); };
  else
    throw ConfigError("unknown test function '" + fname + "'");

  const auto bg = bismut::bismut_gradient(spec, f, t, y, v, n, dt, seed, g.threads);
  const auto fg = bismut::fd_gradient(spec, f, t, y, v, h, n, dt,
                                      CounterRng::derive(seed, 5), g.threads);
  const double comb = 3.0 * std::sqrt(bg.stderr_ * bg.stderr_ + fg.stderr_ * fg.stderr_);
  Json out{{"bismut", {{"value", bg.value}, {"stderr", bg.stderr_}}},
           {"finite_difference", {{"value", fg.value}, {"stderr", fg.stderr_}}},
           {"difference", bg.value - fg.value},
           {"three_sigma", comb},
           {"agree", std::abs(bg.value - fg.value) <= comb + 10.0 * (h * h + dt)}};
  write_json(g.resolve_out() / "bismut_report.json", out);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_zvonkin(const GlobalOpts& g) {
  const Json cfg = load_json(g.config);
  auto spec = model::problem_from_json(cfg.at("problem"));
  const Json& bj = cfg.at("b");
  auto b = model::make_drift(bj.at("kind").get<std::string>(),
                             bj.contains("params") ? bj.at("params") : Json::object(),
                             1);
  zvonkin::ZvonkinConfig zc;
  zc.lambda = cfg.value("lambda", 0.0);
  zc.L = cfg.value("L", 3.5);
  zc.n_nodes = cfg.value("n_nodes", 281);
  zc.tol = cfg.value("tol", 1e-10);
  zc.max_iter = cfg.value("max_iter", 60);
  if (cfg.value("semigroup", std::string("grid_pde")) == "mc")
    zc.semigroup_eval = zvonkin::SemigroupEval::Mc;
  const auto tab = zvonkin::solve_phi(spec, b, zc);
  const double K1 = cfg.value("K1", spec.reference_data ? spec.reference_data->K1 : 0.0);
  const double K2 = cfg.value("K2", spec.reference_data ? spec.reference_data->K2 : 1.0);
  const auto diffeo = zvonkin::check_diffeo(tab, K1, K2);
  Json out{{"lambda", tab.lambda},
           {"iterations", tab.iterations},
           {"converged", tab.converged},
           {"rho_history", tab.iteration_history},
           {"sup_phi", tab.sup_phi()},
           {"sup_phi_prime", tab.sup_phi_prime()},
           {"diffeo", diffeo.to_json()}};
  if (spec.reference_data) {
    const auto mono = zvonkin::transformed_drift_monotonicity(
        spec, tab, cfg.value("n_pairs", static_cast<std::size_t>(1000)),
        cfg.value("radius", 3.0), g.seed ? *g.seed : 11);
    out["monotonicity"] = mono.to_json();
  }
  const auto dir = g.resolve_out();
  tab.write_csv((dir / "phi.csv").string());
  write_json(dir / "zvonkin_report.json", out);
  std::cout << out.dump(2) << "\n";
  return 0;
}

int cmd_probe_ultra(const GlobalOpts& g) {
  const Json cfg = load_json(g.config);
  auto spec = model::problem_from_json(cfg.at("problem"));
  std::vector<double> t_list, x0_grid;
  for (const auto& t : cfg.at("t_list")) t_list.push_back(t.get<double>());
  for (const auto& x : cfg.at("x0_grid")) x0_grid.push_back(x.get<double>());
  const auto rep = bismut::ultracontractivity_probe(
      spec, cfg.at("delta").get<double>(), t_list, x0_grid,
      cfg.value("n", static_cast<std::size_t>(20000)), cfg.value("dt", 1e-3),
      g.seed ? *g.seed : cfg.value("seed", 7), g.threads);
  write_json(g.resolve_out() / "ultra_report.json", rep.to_json());
  std::cout << rep.to_json().dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"contraction-certificate laboratory"};
  app.require_subcommand(1);
  GlobalOpts g;

  auto add_common = [&](CLI::App* sub, bool needs_config) {
    auto* copt = sub->add_option("--config", g.config, "JSON configuration file");
    if (needs_config) copt->required();
    sub->add_option("--seed", [&g](const std::vector<std::string>& v) {
      g.seed = std::stoull(v.front());
      return true;
    }, "override the master seed");
    sub->add_option("--threads", g.threads, "worker cap");
    sub->add_option("--out-dir", g.out_dir, "output directory (CONTRACTLAB_OUT overrides)");
  };

  auto* c_cert = app.add_subcommand("certificate", "profile -> certificate + psi table");
  add_common(c_cert, true);
  auto* c_sim = app.add_subcommand("simulate", "coupled-pair ensemble -> CSV");
  add_common(c_sim, true);
  auto* c_w = app.add_subcommand("wasserstein", "distance between two sample clouds");
  std::string file_a, file_b, method = "exact";
  double q = 1.0, epsilon = 0.0;
  c_w->add_option("a", file_a, "first cloud CSV")->required();
  c_w->add_option("b", file_b, "second cloud CSV")->required();
  c_w->add_option("--q", q, "order q >= 1");
  c_w->add_option("--method", method, "exact | entropic");
  c_w->add_option("--epsilon", epsilon, "entropic regularization");
  add_common(c_w, false);
  auto* c_verify = app.add_subcommand("verify", "full certificate-vs-simulation report");
  add_common(c_verify, true);
  auto* c_bis = app.add_subcommand("bismut", "gradient-representation check");
  add_common(c_bis, true);
  auto* c_zv = app.add_subcommand("zvonkin", "1-D drift-transform solve report");
  add_common(c_zv, true);
  auto* c_ultra = app.add_subcommand("probe-ultra", "exponential-moment probe");
  add_common(c_ultra, true);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_cert->parsed()) return cmd_certificate(g);
    if (c_sim->parsed()) return cmd_simulate(g);
    if (c_w->parsed()) return cmd_wasserstein(file_a, file_b, q, method, epsilon, g);
    if (c_verify->parsed()) return cmd_verify(g);
    if (c_bis->parsed()) return cmd_bismut(g);
    if (c_zv->parsed()) return cmd_zvonkin(g);
    if (c_ultra->parsed()) return cmd_probe_ultra(g);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    std::cerr << "usage: see `" << argv[0] << " --help`\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
