#pragma once

#include <cmath>
#include <functional>
#include <string>

#include "contractlab/common.hpp"

namespace contractlab::quadrature {

// 15-point Gauss-Legendre panel on [a,b].
inline double gl15(const std::function<double(double)>& f, double a, double b) {
  static const double xs[8] = {0.0,
                               0.2011940939974345,
                               0.3941513470775634,
                               0.5709721726085388,
                               0.7244177313601701,
                               0.8482065834104272,
                               0.9372733924007060,
                               0.9879925180204854};
  static const double ws[8] = {0.2025782419255613,
                               0.1984314853271116,
                               0.1861610000155622,
                               0.1662692058169939,
                               0.1395706779261543,
                               0.1071592204671719,
                               0.0703660474881081,
                               0.0307532419961173};
  const double c = 0.5 * (a + b), h = 0.5 * (b - a);
  double s = ws[0] * f(c);
  for (int i = 1; i < 8; ++i) s += ws[i] * (f(c - h * xs[i]) + f(c + h * xs[i]));
  return s * h;
}

inline double adaptive_gl(const std::function<double(double)>& f, double a, double b,
                          double tol, int depth = 0) {
  const double whole = gl15(f, a, b);
  const double mid = 0.5 * (a + b);
  const double split = gl15(f, a, mid) + gl15(f, mid, b);
  if (std::abs(whole - split) <= tol || depth > 40) {
    if (depth > 40 && std::abs(whole - split) > tol)
      throw QuadratureError("adaptive panel failed; achieved " +
                            std::to_string(std::abs(whole - split)));
    return split;
  }
  return adaptive_gl(f, a, mid, 0.5 * tol, depth + 1) +
         adaptive_gl(f, mid, b, 0.5 * tol, depth + 1);
}

}  // namespace contractlab::quadrature
