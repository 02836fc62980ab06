#pragma once

#include <cmath>
#include <limits>

#include "ypbp/errors.hpp"

namespace ypbp {

inline double log_beta(double a, double b) {
  return std::lgamma(a) + std::lgamma(b) - std::lgamma(a + b);
}

// Density of Beta(a, b) at x. Endpoints follow the limiting values, so
// Beta(1, b) at 0 is b and Beta(a, 1) at 1 is a.
inline double beta_density(double x, double a, double b) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("beta_density: shape parameters must be positive");
  if (x < 0.0 || x > 1.0) return 0.0;
  if (x == 0.0) {
    if (a < 1.0) return std::numeric_limits<double>::infinity();
    if (a > 1.0) return 0.0;
    return std::exp(-log_beta(a, b));
  }
  if (x == 1.0) {
    if (b < 1.0) return std::numeric_limits<double>::infinity();
    if (b > 1.0) return 0.0;
    return std::exp(-log_beta(a, b));
  }
  return std::exp((a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta(a, b));
}

namespace detail {

// Modified Lentz evaluation of the continued fraction for I_x(a, b).
inline double incomplete_beta_fraction(double a, double b, double x) {
  constexpr int kMaxIterations = 1000;
  constexpr double kEpsilon = 1e-16;
  constexpr double kTiny = 1e-300;

  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIterations; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < kEpsilon) return h;
  }
  throw NumericRangeError("incomplete beta continued fraction did not converge");
}

}  // namespace detail

/// Regularized incomplete beta function I_x(a, b), the CDF of Beta(a, b) at x.
/// The continued fraction is evaluated on whichever side of the mean converges
/// fastest; the other side is recovered by the reflection I_x(a,b) = 1 - I_{1-x}(b,a).
inline double regularized_incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw DomainError("incomplete beta: shape parameters must be positive");
  if (std::isnan(x)) throw DomainError("incomplete beta: x is NaN");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
  if (x < (a + 1.0) / (a + b + 2.0)) {
    return std::exp(log_front) * detail::incomplete_beta_fraction(a, b, x) / a;
  }
  return 1.0 - std::exp(log_front) * detail::incomplete_beta_fraction(b, a, 1.0 - x) / b;
}

}  // namespace ypbp
