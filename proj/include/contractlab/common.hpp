#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace contractlab {

// ---------------------------------------------------------------------------
// Error taxonomy. Every module throws one of these; the CLI maps them to
// exit code 1 with the stage name in the message.
// ---------------------------------------------------------------------------

struct Error : std::runtime_error {
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

#define CONTRACTLAB_DEFINE_ERROR(NAME)                          \
  struct NAME : Error {                                         \
    explicit NAME(const std::string& msg) : Error(#NAME ": " + msg) {} \
  }

CONTRACTLAB_DEFINE_ERROR(ConfigError);
CONTRACTLAB_DEFINE_ERROR(DomainError);
CONTRACTLAB_DEFINE_ERROR(EvaluationError);
CONTRACTLAB_DEFINE_ERROR(SimulationError);
CONTRACTLAB_DEFINE_ERROR(LinAlgError);
CONTRACTLAB_DEFINE_ERROR(QuadratureError);
CONTRACTLAB_DEFINE_ERROR(FeasibilityError);
CONTRACTLAB_DEFINE_ERROR(InconclusiveError);
CONTRACTLAB_DEFINE_ERROR(ConvergenceError);
CONTRACTLAB_DEFINE_ERROR(DivergenceError);
CONTRACTLAB_DEFINE_ERROR(IterationError);
CONTRACTLAB_DEFINE_ERROR(NonContractionError);
CONTRACTLAB_DEFINE_ERROR(DiffeoError);

#undef CONTRACTLAB_DEFINE_ERROR

// ---------------------------------------------------------------------------
// Small utilities shared across modules.
// ---------------------------------------------------------------------------

inline constexpr double kPi = 3.14159265358979323846;

inline bool is_finite(double x) { return std::isfinite(x); }

template <typename Derived>
bool all_finite(const Derived& v) {
  for (int i = 0; i < static_cast<int>(v.size()); ++i)
    if (!std::isfinite(v[i])) return false;
  return true;
}

// x^e with the convention 0^0 = 1 (exponents here are algebraic, not limits).
inline double powi(double x, double e) {
  if (e == 0.0) return 1.0;
  return std::pow(x, e);
}

// Geometric grid with n nodes from a to b inclusive (a, b > 0).
inline std::vector<double> geomspace(double a, double b, int n) {
  if (!(a > 0.0) || !(b > 0.0) || n < 2)
    throw DomainError("geomspace requires a,b>0 and n>=2");
  std::vector<double> g(static_cast<size_t>(n));
  const double la = std::log(a), lb = std::log(b);
  for (int i = 0; i < n; ++i)
    g[static_cast<size_t>(i)] = std::exp(la + (lb - la) * i / (n - 1));
  g.front() = a;
  g.back() = b;
  return g;
}

inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> g(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i)
    g[static_cast<size_t>(i)] = a + (b - a) * i / (n - 1);
  g.front() = a;
  g.back() = b;
  return g;
}

// FNV-1a, used for problem/profile identity stamps in reports.
inline std::uint64_t fnv1a(const std::string& s, std::uint64_t h = 1469598103934665603ull) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline std::string hash_hex(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<size_t>(i)] = digits[h & 0xf];
    h >>= 4;
  }
  return out;
}

// Sample mean / unnormalized stderr helpers.
struct MeanStderr {
  double mean = 0.0;
  double stderr_ = 0.0;
  std::size_t n = 0;
};

inline MeanStderr mean_stderr(const std::vector<double>& xs) {
  MeanStderr out;
  out.n = xs.size();
  if (xs.empty()) return out;
  double s = 0.0;
  for (double x : xs) s += x;
  out.mean = s / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stderr_ = std::sqrt(ss / (static_cast<double>(xs.size() - 1) * static_cast<double>(xs.size())));
  }
  return out;
}

// Least-squares line fit y ~ a + b x, returning (intercept, slope, r2).
struct LineFit {
  double intercept = 0.0;
  double slope = 0.0;
  double r2 = 0.0;
};

inline LineFit fit_line(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size() || x.size() < 2) throw DomainError("fit_line: need >=2 points");
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0, sxy = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    sxy += (x[i] - mx) * (y[i] - my);
    syy += (y[i] - my) * (y[i] - my);
  }
  LineFit f;
  f.slope = sxy / sxx;
  f.intercept = my - f.slope * mx;
  f.r2 = (syy > 0.0) ? (f.slope * f.slope * sxx / syy) : 1.0;
  return f;
}

// Standard normal CDF.
inline double norm_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace contractlab
