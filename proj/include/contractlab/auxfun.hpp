#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "contractlab/common.hpp"
#include "contractlab/model.hpp"
#include "contractlab/quadrature.hpp"

namespace contractlab::auxfun {

using Json = nlohmann::ordered_json;
using model::DissipativityProfile;

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct FeasiblePoint {
  double ktilde2 = 1.0;
  double v0 = 1.0;
};

struct GridConfig {
  int n_nodes = 2048;
  double vmin_factor = 1e-8;  // lowest table node = vmin_factor * v0
};

struct FeasibilityReport {
  bool member = false;
  double margin1 = 0.0;  // inf_{v>=v0} (K2 - v^{-(2+th)/p}(K1(v^{1/p}) + s0^2(p-1)))
  double margin2 = 0.0;  // inf_{v<=v0} of the normalized rate integrand
  double v_max = 0.0;    // upper end used for the first infimum
};

struct Certificate {
  double kappa = 0.0;
  double c0 = 0.0, c1 = 0.0, c2 = 0.0;
  double C1 = 0.0, C2 = 0.0;
  FeasiblePoint point;
  double p = 1.0;
  double theta = 0.0;
  double sigma0 = 1.0;
  std::string profile_hash;

  Json to_json() const {
    return Json{{"kappa", kappa}, {"c0", c0},       {"c1", c1},
                {"c2", c2},       {"C1", C1},       {"C2", C2},
                {"ktilde2", point.ktilde2},         {"v0", point.v0},
                {"p", p},         {"theta", theta}, {"sigma0", sigma0},
                {"profile_hash", profile_hash}};
  }

  static Certificate from_json(const Json& j) {
    Certificate c;
    c.kappa = j.at("kappa").get<double>();
    c.c0 = j.at("c0").get<double>();
    c.c1 = j.at("c1").get<double>();
    c.c2 = j.at("c2").get<double>();
    c.C1 = j.at("C1").get<double>();
    c.C2 = j.at("C2").get<double>();
    c.point = {j.at("ktilde2").get<double>(), j.at("v0").get<double>()};
    c.p = j.at("p").get<double>();
    c.theta = j.at("theta").get<double>();
    c.sigma0 = j.at("sigma0").get<double>();
    c.profile_hash = j.at("profile_hash").get<std::string>();
    return c;
  }
};

// ---------------------------------------------------------------------------
// [OP] p_coeffs: the drift/diffusion coefficients of the scalar comparison ODE
//   p1(v) = p v^{(p-2)/p} K1(v^{1/p}) - p K2 v^{1+th/p} + 2 s0^2 p(p-1) v^{(p-2)/p}
//   p0(v) = 2 s0^2 p^2 v^{(2p-2)/p}
// ---------------------------------------------------------------------------

struct PCoeffs {
  double p1 = 0.0;
  double p0 = 0.0;
};

inline PCoeffs p_coeffs(const DissipativityProfile& prof, double sigma0, double p,
                        double v) {
  if (!(v > 0.0)) throw DomainError("p_coeffs requires v > 0");
  if (!(p >= 1.0)) throw DomainError("p_coeffs requires p >= 1");
  const double s2 = sigma0 * sigma0;
  const double vp2 = powi(v, (p - 2.0) / p);
  PCoeffs out;
  out.p1 = p * vp2 * prof.kbar1(powi(v, 1.0 / p)) -
           p * prof.kbar2 * powi(v, 1.0 + prof.theta / p) +
           2.0 * s2 * p * (p - 1.0) * vp2;
  out.p0 = 2.0 * s2 * p * p * powi(v, (2.0 * p - 2.0) / p);
  return out;
}

// [OP] q_function: piecewise rate multiplier
inline double q_function(const DissipativityProfile& prof, double sigma0, double p,
                         const FeasiblePoint& pt, double v) {
  if (!(v > 0.0)) throw DomainError("q_function requires v > 0");
  if (v < pt.v0) return pt.ktilde2 * v;
  const PCoeffs c = p_coeffs(prof, sigma0, p, v);
  return -c.p1 + (0.5 - 0.5 / p) * c.p0 / v;
}

// ---------------------------------------------------------------------------
// G(u) = int_{v0}^u ( K1(v^{1/p})/(2 p s0^2 v) + Kt2 v^{-1+2/p}/(2 s0^2 p^2)
//                     - K2 v^{-1+(2+th)/p}/(2 s0^2 p) ) dv
// in closed form via the substitution v = s^p (the K1 family is piecewise
// power, so the s-integral has exact antiderivatives).
// ---------------------------------------------------------------------------

namespace detail {

struct GClosed {
  const DissipativityProfile* prof;
  double sigma0, p, ktilde2, v0;

  double operator()(double u) const {
    const double s2 = sigma0 * sigma0;
    const double s_lo = powi(std::min(u, v0), 1.0 / p);
    const double s_hi = powi(std::max(u, v0), 1.0 / p);
    double k1part = prof->kbar1.integral_over_s(s_lo, s_hi);
    if (u < v0) k1part = -k1part;
    const double kt = ktilde2 * (powi(u, 2.0 / p) - powi(v0, 2.0 / p)) / (4.0 * s2 * p);
    const double k2 = prof->kbar2 *
                      (powi(u, (2.0 + prof->theta) / p) - powi(v0, (2.0 + prof->theta) / p)) /
                      (2.0 * s2 * (2.0 + prof->theta));
    return k1part / (2.0 * s2) + kt - k2;
  }

  // limit u -> 0+ (all power terms vanish, the K1 integral converges)
  double at_zero() const {
    const double s2 = sigma0 * sigma0;
    const double s0p = powi(v0, 1.0 / p);
    return -prof->kbar1.integral_over_s(0.0, s0p) / (2.0 * s2) -
           ktilde2 * powi(v0, 2.0 / p) / (4.0 * s2 * p) +
           prof->kbar2 * powi(v0, (2.0 + prof->theta) / p) / (2.0 * s2 * (2.0 + prof->theta));
  }
};

// The feasibility integrand on (0, v0]; equals G'(v).
inline double rate_integrand(const DissipativityProfile& prof, double sigma0,
                             double p, double ktilde2, double v) {
  const double s2 = sigma0 * sigma0;
  return prof.kbar1(powi(v, 1.0 / p)) / (2.0 * s2 * p * v) +
         ktilde2 * powi(v, -1.0 + 2.0 / p) / (2.0 * s2 * p * p) -
         prof.kbar2 * powi(v, -1.0 + (2.0 + prof.theta) / p) / (2.0 * s2 * p);
}

// Decaying part of the first feasibility expression.
inline double decay_term(const DissipativityProfile& prof, double sigma0, double p,
                         double v) {
  return powi(v, -(2.0 + prof.theta) / p) *
         (prof.kbar1(powi(v, 1.0 / p)) + sigma0 * sigma0 * (p - 1.0));
}

using quadrature::adaptive_gl;
using quadrature::gl15;

}  // namespace detail

// ---------------------------------------------------------------------------
// [OP] feasibility
// ---------------------------------------------------------------------------

inline FeasibilityReport feasibility(const DissipativityProfile& prof, double sigma0,
                                     double p, const FeasiblePoint& pt,
                                     int grid_n = 4096) {
  if (!(pt.v0 > 0.0)) throw DomainError("feasibility requires v0 > 0");
  if (!(pt.ktilde2 >= 0.0)) throw DomainError("feasibility requires ktilde2 >= 0");
  FeasibilityReport rep;

  // First infimum over [v0, v_max]: the subtracted term decays by the growth
  // condition, so v_max is pushed out until it is below 1e-3 * K2.
  double v_max = pt.v0;
  for (int i = 0; i < 200 && detail::decay_term(prof, sigma0, p, v_max) > 1e-3 * prof.kbar2;
       ++i)
    v_max *= 2.0;
  rep.v_max = v_max;
  const auto g1 = geomspace(pt.v0, std::max(v_max, pt.v0 * (1.0 + 1e-12)), grid_n);
  double m1 = std::numeric_limits<double>::infinity();
  std::size_t arg1 = 0;
  std::vector<double> f1(g1.size());
  for (std::size_t i = 0; i < g1.size(); ++i) {
    f1[i] = prof.kbar2 - detail::decay_term(prof, sigma0, p, g1[i]);
    if (f1[i] < m1) {
      m1 = f1[i];
      arg1 = i;
    }
  }
  rep.margin1 = m1;

  // Second infimum over (0, v0].
  const auto g2 = geomspace(pt.v0 * 1e-12, pt.v0, grid_n);
  double m2 = std::numeric_limits<double>::infinity();
  std::size_t arg2 = 0;
  std::vector<double> f2(g2.size());
  for (std::size_t i = 0; i < g2.size(); ++i) {
    f2[i] = detail::rate_integrand(prof, sigma0, p, pt.ktilde2, g2[i]);
    if (f2[i] < m2) {
      m2 = f2[i];
      arg2 = i;
    }
  }
  rep.margin2 = m2;

  // Under-resolution guard: a margin that is zero within the local grid
  // variation around its minimizer cannot be trusted either way.
  auto local_variation = [](const std::vector<double>& f, std::size_t i) {
    double var = 0.0;
    if (i > 0) var = std::max(var, std::abs(f[i] - f[i - 1]));
    if (i + 1 < f.size()) var = std::max(var, std::abs(f[i + 1] - f[i]));
    return var;
  };
  const double var1 = local_variation(f1, arg1);
  const double var2 = local_variation(f2, arg2);
  if (m1 != 0.0 && var1 > 0.0 && std::abs(m1) < 10.0 * var1)
    throw InconclusiveError("first margin " + std::to_string(m1) +
                            " within 10x grid variation " + std::to_string(var1));
  if (m2 != 0.0 && var2 > 0.0 && std::abs(m2) < 10.0 * var2)
    throw InconclusiveError("second margin " + std::to_string(m2) +
                            " within 10x grid variation " + std::to_string(var2));

  const double scale2 = 1.0 + std::abs(pt.ktilde2) + prof.kbar2;
  rep.member = (m1 > 0.0) && (m2 >= -1e-12 * scale2);
  return rep;
}

// ---------------------------------------------------------------------------
// PsiTable: the auxiliary concave transform tabulated on (v_min, v0] with the
// closed-form branch above v0.
// ---------------------------------------------------------------------------

struct PsiTable {
  std::vector<double> grid;          // strictly increasing, last node == v0
  std::vector<double> psi_values;
  std::vector<double> psi_prime_values;
  std::vector<std::uint8_t> kink;    // profile kink snapped onto this node
  double p = 1.0;
  double v0 = 1.0;
  double psi_v0 = 0.0;               // tail anchor
  double g_at_vmin = 0.0;            // used for the sub-table head extension

  double tail_psi(double v) const {
    const double e = (p + 1.0) / (2.0 * p);
    return psi_v0 + (2.0 * p * powi(v0, (p - 1.0) / (2.0 * p)) / (p + 1.0)) *
                        (powi(v, e) - powi(v0, e));
  }
  double tail_psi_prime(double v) const {
    return powi(v0, (p - 1.0) / (2.0 * p)) * powi(v, (1.0 - p) / (2.0 * p));
  }

  double psi(double v) const {
    if (!(v >= 0.0)) throw DomainError("psi requires v >= 0");
    if (v == 0.0) return 0.0;
    if (v >= v0) return tail_psi(v);
    if (v <= grid.front())
      return psi_values.front() * powi(v / grid.front(), 1.0 / p);
    return interp(psi_values, v);
  }

  double psi_prime(double v) const {
    if (!(v > 0.0)) throw DomainError("psi_prime requires v > 0");
    if (v >= v0) return tail_psi_prime(v);
    if (v <= grid.front())
      return psi_prime_values.front() * powi(v / grid.front(), (1.0 - p) / p);
    return interp(psi_prime_values, v);
  }

  void write_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot open '" + path + "' for writing");
    out.precision(17);
    out << "v,psi,psi_prime\n";
    for (std::size_t i = 0; i < grid.size(); ++i)
      out << grid[i] << "," << psi_values[i] << "," << psi_prime_values[i] << "\n";
  }

 private:
  double interp(const std::vector<double>& ys, double v) const {
    const auto it = std::upper_bound(grid.begin(), grid.end(), v);
    std::size_t hi = static_cast<std::size_t>(it - grid.begin());
    if (hi == 0) return ys.front();
    if (hi >= grid.size()) return ys.back();
    const std::size_t lo = hi - 1;
    const double w = (v - grid[lo]) / (grid[hi] - grid[lo]);
    return ys[lo] + w * (ys[hi] - ys[lo]);
  }
};

// ---------------------------------------------------------------------------
// [OP] build_psi
// ---------------------------------------------------------------------------

inline PsiTable build_psi(const DissipativityProfile& prof, double sigma0, double p,
                          const FeasiblePoint& pt, const GridConfig& cfg = {}) {
  const auto feas = feasibility(prof, sigma0, p, pt);
  if (!feas.member)
    throw FeasibilityError("point (ktilde2=" + std::to_string(pt.ktilde2) +
                           ", v0=" + std::to_string(pt.v0) + ") is not feasible");

  PsiTable tab;
  tab.p = p;
  tab.v0 = pt.v0;
  const double v_min = cfg.vmin_factor * pt.v0;
  tab.grid = geomspace(v_min, pt.v0, cfg.n_nodes);
  tab.kink.assign(tab.grid.size(), 0);

  // Snap profile kinks (term clips, min-branch crossover) onto grid nodes so
  // that quadrature panels and difference stencils stay within smooth pieces.
  for (double s_kink : prof.kbar1.kink_points()) {
    const double v_kink = powi(s_kink, p);
    if (v_kink <= v_min || v_kink >= pt.v0) continue;
    const auto it = std::lower_bound(tab.grid.begin(), tab.grid.end(), v_kink);
    std::size_t idx = static_cast<std::size_t>(it - tab.grid.begin());
    if (idx > 0 && v_kink - tab.grid[idx - 1] < tab.grid[idx] - v_kink) --idx;
    if (idx == 0 || idx + 1 >= tab.grid.size()) continue;
    tab.grid[idx] = v_kink;
    tab.kink[idx] = 1;
  }

  const detail::GClosed G{&prof, sigma0, p, pt.ktilde2, pt.v0};
  const double pref = powi(pt.v0, (p - 1.0) / p);

  // psi'(v) = v0^{(p-1)/p} e^{-G(v)} v^{(1-p)/p} on (0, v0]
  tab.psi_prime_values.resize(tab.grid.size());
  for (std::size_t i = 0; i < tab.grid.size(); ++i)
    tab.psi_prime_values[i] =
        pref * std::exp(-G(tab.grid[i])) * powi(tab.grid[i], (1.0 - p) / p);
  tab.g_at_vmin = G(tab.grid.front());

  // psi(v) = v0^{(p-1)/p} p int_0^{v^{1/p}} e^{-G(s^p)} ds: the substitution
  // removes the endpoint singularity entirely, so the head panel reaches 0.
  auto integrand = [&](double s) { return std::exp(-G(powi(s, p))); };
  tab.psi_values.resize(tab.grid.size());
  const double s_head = powi(tab.grid.front(), 1.0 / p);
  double acc = detail::adaptive_gl(integrand, 0.0, s_head, 1e-14 * (1.0 + s_head));
  tab.psi_values.front() = pref * p * acc;
  for (std::size_t i = 1; i < tab.grid.size(); ++i) {
    const double a = powi(tab.grid[i - 1], 1.0 / p);
    const double b = powi(tab.grid[i], 1.0 / p);
    acc += detail::gl15(integrand, a, b);
    tab.psi_values[i] = pref * p * acc;
  }
  tab.psi_v0 = tab.psi_values.back();

  // Construction invariants: strict increase, positive non-increasing slope.
  for (std::size_t i = 1; i < tab.grid.size(); ++i) {
    if (!(tab.psi_values[i] > tab.psi_values[i - 1]))
      throw QuadratureError("psi table not strictly increasing at node " +
                            std::to_string(i));
    if (tab.psi_prime_values[i] >
        tab.psi_prime_values[i - 1] * (1.0 + 1e-12) + 1e-300)
      throw QuadratureError("psi' table increased at node " + std::to_string(i));
    if (!(tab.psi_prime_values[i] > 0.0))
      throw QuadratureError("psi' not positive at node " + std::to_string(i));
  }
  return tab;
}

// ---------------------------------------------------------------------------
// [OP] certificate
// ---------------------------------------------------------------------------

inline Certificate certificate(const DissipativityProfile& prof, double sigma0,
                               double p, const FeasiblePoint& pt,
                               const GridConfig& cfg = {}) {
  const auto feas = feasibility(prof, sigma0, p, pt);
  if (!feas.member)
    throw FeasibilityError("point (ktilde2=" + std::to_string(pt.ktilde2) +
                           ", v0=" + std::to_string(pt.v0) + ") is not feasible");

  const detail::GClosed G{&prof, sigma0, p, pt.ktilde2, pt.v0};
  const auto grid = geomspace(cfg.vmin_factor * pt.v0, pt.v0, cfg.n_nodes);
  double c1big = std::numeric_limits<double>::infinity();
  double c2big = 0.0;
  for (double v : grid) {
    const double e = std::exp(-G(v));
    c1big = std::min(c1big, e);
    c2big = std::max(c2big, e);
  }
  // include the v -> 0+ limit, where the supremum lives for feasible points
  {
    const double e0 = std::exp(-G.at_zero());
    c1big = std::min(c1big, e0);
    c2big = std::max(c2big, e0);
  }

  const double theta = prof.theta;
  const double expo = 2.0 * theta / (p + 1.0);
  const double denom1 =
      c2big * (powi(pt.v0, -theta / p) +
               powi(p * powi(pt.v0, (p - 1.0) / (2.0 * p)) * c2big, expo));
  const double branch1 = feas.margin1 / denom1;
  const double branch2 =
      pt.ktilde2 * c1big / (p * c2big * (1.0 + powi(p * c2big * pt.v0, expo)));
  Certificate cert;
  cert.kappa = std::min(branch1, branch2);
  cert.C1 = c1big;
  cert.C2 = c2big;
  cert.c0 = 0.5 * (p + 1.0) * c2big *
            powi(std::max(pt.v0 * pt.v0, 1.0 / pt.v0), (p - 1.0) / (2.0 * p));
  cert.c1 = (2.0 * p / (p + 1.0)) * std::min(1.0, powi(pt.v0, (p - 1.0) / p));
  cert.c2 = p * c2big * std::max(powi(pt.v0, (p - 1.0) / p),
                                 powi(pt.v0, (p - 1.0) / (2.0 * p)));
  cert.point = pt;
  cert.p = p;
  cert.theta = theta;
  cert.sigma0 = sigma0;
  cert.profile_hash = [&] {
    Json j{{"sigma0", sigma0}, {"profile", prof.to_json()}};
    return hash_hex(fnv1a(j.dump()));
  }();
  if (!(cert.kappa > 0.0))
    throw FeasibilityError("certificate produced non-positive rate");
  return cert;
}

// ---------------------------------------------------------------------------
// [OP] optimize_certificate: coarse-to-fine search maximizing kappa (ties by
// smaller c0) over the box; two refinement rounds.
// ---------------------------------------------------------------------------

struct SearchBox {
  double ktilde2_min = 0.0, ktilde2_max = 0.0;
  double v0_min = 0.0, v0_max = 0.0;
};

inline std::pair<FeasiblePoint, Certificate> optimize_certificate(
    const DissipativityProfile& prof, double sigma0, double q,
    const SearchBox& box, int grid_side = 16) {
  if (box.ktilde2_min > box.ktilde2_max || box.v0_min > box.v0_max)
    throw FeasibilityError("empty search box");
  if (!(box.v0_min > 0.0)) throw DomainError("v0 range must be positive");
  const double p = 2.0 * q - 1.0;

  bool found = false;
  FeasiblePoint best;
  Certificate best_cert;
  auto consider = [&](double kt, double v0) {
    try {
      Certificate c = certificate(prof, sigma0, p, {kt, v0});
      if (!found || c.kappa > best_cert.kappa ||
          (c.kappa == best_cert.kappa && c.c0 < best_cert.c0)) {
        found = true;
        best = {kt, v0};
        best_cert = c;
      }
    } catch (const FeasibilityError&) {
    } catch (const InconclusiveError&) {
    }
  };

  double kt_lo = box.ktilde2_min, kt_hi = box.ktilde2_max;
  double v_lo = box.v0_min, v_hi = box.v0_max;
  for (int round = 0; round < 3; ++round) {
    const auto kts = linspace(kt_lo, kt_hi, grid_side);
    const auto v0s = linspace(v_lo, v_hi, grid_side);
    for (double kt : kts)
      for (double v0 : v0s) consider(kt, v0);
    if (!found) throw FeasibilityError("no feasible point in search box");
    const double dk = (kt_hi - kt_lo) / (grid_side - 1);
    const double dv = (v_hi - v_lo) / (grid_side - 1);
    kt_lo = std::max(box.ktilde2_min, best.ktilde2 - dk);
    kt_hi = std::min(box.ktilde2_max, best.ktilde2 + dk);
    v_lo = std::max(box.v0_min, best.v0 - dv);
    v_hi = std::min(box.v0_max, best.v0 + dv);
  }
  return {best, best_cert};
}

// ---------------------------------------------------------------------------
// [OP] theoretical_bound: the distance-decay envelope
//   c0^{1/q} (1 + c1^{th/q}(1-e^{-kappa th t/q}) r^th)^{-1/th} e^{-kappa t/q}
//     * (r v r^{1/q}),
// with the analytic theta -> 0 limit c0^{1/q} e^{-2 kappa t/q}(r v r^{1/q}).
// ---------------------------------------------------------------------------

inline double theoretical_bound(const Certificate& cert, double q, double r, double t) {
  if (!(r >= 0.0) || !(t >= 0.0)) throw DomainError("theoretical_bound needs r,t >= 0");
  if (std::abs(2.0 * q - 1.0 - cert.p) > 1e-9)
    throw ConfigError("q does not match the certificate order p = 2q-1");
  if (r == 0.0) return 0.0;
  const double norm = std::max(r, powi(r, 1.0 / q));
  const double c0q = powi(cert.c0, 1.0 / q);
  if (cert.theta == 0.0)
    return c0q * std::exp(-2.0 * cert.kappa * t / q) * norm;
  const double th = cert.theta;
  const double fac = 1.0 + powi(cert.c1, th / q) *
                               (1.0 - std::exp(-cert.kappa * th * t / q)) * powi(r, th);
  return c0q * powi(fac, -1.0 / th) * std::exp(-cert.kappa * t / q) * norm;
}

// ---------------------------------------------------------------------------
// [OP] u_theta: comparison function solving y' = -kappa y (1 + y^{2 th/(p+1)})
// with y(0) = psi(V0); explicit theta = 0 branch e^{-2 kappa t} psi(V0).
// ---------------------------------------------------------------------------

inline double u_theta(const Certificate& cert, double psi_v0, double t) {
  if (!(psi_v0 >= 0.0) || !(t >= 0.0)) throw DomainError("u_theta needs psi_v0,t >= 0");
  if (cert.theta == 0.0) return std::exp(-2.0 * cert.kappa * t) * psi_v0;
  const double a = 2.0 * cert.theta / (cert.p + 1.0);
  const double fac = 1.0 + (1.0 - std::exp(-a * cert.kappa * t)) * powi(psi_v0, a);
  return powi(fac, -1.0 / a) * std::exp(-cert.kappa * t) * psi_v0;
}

}  // namespace contractlab::auxfun
