#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/errors.hpp"
#include "ypbp/special_functions.hpp"

namespace ypbp {

// Which baseline function the polynomial models: the hazard h0 (coefficients
// gamma) or the derivative of the baseline odds R0' (coefficients xi).
enum class BaselineKind { Hazard, Odds };

inline const char* to_string(BaselineKind kind) {
  return kind == BaselineKind::Hazard ? "hazard" : "odds";
}

/// Bernstein basis of degree m on (0, tau].
///
/// Basis densities are g_k(t) = f_Beta(t/tau | k, m-k+1) / tau and basis CDFs
/// are G_k(t) = F_Beta(t/tau | k, m-k+1), for k = 1..m. The bulk evaluators
/// below use the binomial identities g_k = (m/tau) * P[Bin(m-1, x) = k-1] and
/// G_k = P[Bin(m, x) >= k], which give all m values from one pass.
class BpBasis {
 public:
  BpBasis(int degree, double tau) : degree_(degree), tau_(tau) {
    if (degree < 1) throw DomainError("BpBasis: degree must be >= 1");
    if (!(tau > 0.0) || !std::isfinite(tau)) throw DomainError("BpBasis: tau must be positive and finite");
    log_choose_m_.resize(static_cast<std::size_t>(degree) + 1);
    log_choose_m1_.resize(static_cast<std::size_t>(degree));
    const double m = degree;
    for (int j = 0; j <= degree; ++j) {
      log_choose_m_[j] = std::lgamma(m + 1.0) - std::lgamma(j + 1.0) - std::lgamma(m - j + 1.0);
    }
    for (int j = 0; j < degree; ++j) {
      log_choose_m1_[j] = std::lgamma(m) - std::lgamma(j + 1.0) - std::lgamma(m - j);
    }
  }

  int degree() const { return degree_; }
  double tau() const { return tau_; }

  // out[k-1] = g_k(t). Zero outside [0, tau].
  void densities(double t, std::span<double> out) const {
    check_span(out);
    check_time(t);
    std::fill(out.begin(), out.end(), 0.0);
    if (t > tau_) return;
    const double x = t / tau_;
    const double scale = degree_ / tau_;
    const int n = degree_ - 1;
    if (x == 0.0) {
      out[0] = scale;
      return;
    }
    if (x == 1.0) {
      out[static_cast<std::size_t>(n)] = scale;
      return;
    }
    const double lx = std::log(x);
    const double l1x = std::log1p(-x);
    for (int j = 0; j <= n; ++j) {
      out[static_cast<std::size_t>(j)] = scale * std::exp(log_choose_m1_[j] + j * lx + (n - j) * l1x);
    }
  }

  // out[k-1] = G_k(t). Values beyond tau are clamped at 1.
  void cdfs(double t, std::span<double> out) const {
    check_span(out);
    check_time(t);
    if (t >= tau_) {
      std::fill(out.begin(), out.end(), 1.0);
      return;
    }
    std::fill(out.begin(), out.end(), 0.0);
    if (t == 0.0) return;
    const double x = t / tau_;
    const double lx = std::log(x);
    const double l1x = std::log1p(-x);
    double tail = 0.0;
    for (int j = degree_; j >= 1; --j) {
      tail += std::exp(log_choose_m_[j] + j * lx + (degree_ - j) * l1x);
      out[static_cast<std::size_t>(j - 1)] = std::min(tail, 1.0);
    }
  }

  // Rows of the tail-adjusted hazard: the BP densities below tau and the
  // constant m/tau on the last coefficient from tau onwards.
  void tail_densities(double t, std::span<double> out) const {
    if (t >= tau_) {
      check_span(out);
      std::fill(out.begin(), out.end(), 0.0);
      out.back() = degree_ / tau_;
      return;
    }
    densities(t, out);
  }

  // Rows of the tail-adjusted cumulative hazard.
  void tail_cdfs(double t, std::span<double> out) const {
    cdfs(t, out);
    if (t > tau_) out.back() += degree_ * (t - tau_) / tau_;
  }

 private:
  void check_span(std::span<double> out) const {
    if (out.size() != static_cast<std::size_t>(degree_)) throw ContractError("BpBasis: output span has wrong size");
  }
  static void check_time(double t) {
    if (!(t >= 0.0)) throw DomainError("BpBasis: time must be nonnegative");
  }

  int degree_;
  double tau_;
  std::vector<double> log_choose_m_;   // log C(m, j), j = 0..m
  std::vector<double> log_choose_m1_;  // log C(m-1, j), j = 0..m-1
};

struct BaselineCoefficients {
  BaselineKind kind = BaselineKind::Hazard;
  Eigen::VectorXd values;

  void validate(const BpBasis& basis) const {
    if (values.size() != basis.degree()) throw ContractError("baseline coefficients: length must equal the basis degree");
    for (Eigen::Index k = 0; k < values.size(); ++k) {
      if (!(values[k] >= 0.0) || !std::isfinite(values[k])) {
        throw ContractError("baseline coefficients must be finite and nonnegative");
      }
    }
  }
};

inline void check_index(const BpBasis& basis, int k) {
  if (k < 1 || k > basis.degree()) {
    throw DomainError("basis index " + std::to_string(k) + " outside 1.." + std::to_string(basis.degree()));
  }
}

// g_k(t), evaluated through the beta density directly.
inline double basis_density(const BpBasis& basis, int k, double t) {
  check_index(basis, k);
  if (!(t >= 0.0)) throw DomainError("basis_density: time must be nonnegative");
  const int m = basis.degree();
  return beta_density(t / basis.tau(), k, m - k + 1) / basis.tau();
}

// G_k(t), evaluated through the regularized incomplete beta function.
inline double basis_cdf(const BpBasis& basis, int k, double t) {
  check_index(basis, k);
  if (!(t >= 0.0)) throw DomainError("basis_cdf: time must be nonnegative");
  const int m = basis.degree();
  return regularized_incomplete_beta(k, m - k + 1, std::min(t / basis.tau(), 1.0));
}

namespace detail {

template <class Fill>
double weighted_sum(const BpBasis& basis, const BaselineCoefficients& coef, Fill&& fill) {
  if (coef.values.size() != basis.degree()) throw ContractError("baseline coefficients: length must equal the basis degree");
  std::vector<double> row(static_cast<std::size_t>(basis.degree()));
  fill(std::span<double>(row));
  double sum = 0.0;
  for (int k = 0; k < basis.degree(); ++k) sum += coef.values[k] * row[static_cast<std::size_t>(k)];
  return sum;
}

inline void require_matching_horizon(const BpBasis& basis, double tau_hat) {
  if (std::fabs(tau_hat - basis.tau()) > 1e-12 * basis.tau()) {
    throw ContractError("tail adjustment: tau_hat must equal the basis horizon");
  }
}

}  // namespace detail

// Sum_k coef_k g_k(t): h0 for Hazard coefficients, R0' for Odds coefficients.
inline double bp_hazard(const BpBasis& basis, const BaselineCoefficients& coef, double t) {
  if (!(t >= 0.0)) throw DomainError("bp_hazard: time must be nonnegative");
  return detail::weighted_sum(basis, coef, [&](std::span<double> row) { basis.densities(t, row); });
}

// Sum_k coef_k G_k(t). Beyond tau the CDFs are clamped at 1; use tail_cumulative
// for a cumulative function that keeps growing.
inline double bp_cumulative(const BpBasis& basis, const BaselineCoefficients& coef, double t) {
  if (!(t >= 0.0)) throw DomainError("bp_cumulative: time must be nonnegative");
  return detail::weighted_sum(basis, coef, [&](std::span<double> row) { basis.cdfs(t, row); });
}

// Constant hazard m * coef_m / tau_hat from tau_hat onwards.
inline double tail_hazard(const BpBasis& basis, const BaselineCoefficients& coef, double t) {
  if (!(t >= 0.0)) throw DomainError("tail_hazard: time must be nonnegative");
  return detail::weighted_sum(basis, coef, [&](std::span<double> row) { basis.tail_densities(t, row); });
}

inline double tail_hazard(const BpBasis& basis, const BaselineCoefficients& coef, double tau_hat, double t) {
  detail::require_matching_horizon(basis, tau_hat);
  return tail_hazard(basis, coef, t);
}

inline double tail_cumulative(const BpBasis& basis, const BaselineCoefficients& coef, double t) {
  if (!(t >= 0.0)) throw DomainError("tail_cumulative: time must be nonnegative");
  return detail::weighted_sum(basis, coef, [&](std::span<double> row) { basis.tail_cdfs(t, row); });
}

inline double tail_cumulative(const BpBasis& basis, const BaselineCoefficients& coef, double tau_hat, double t) {
  detail::require_matching_horizon(basis, tau_hat);
  return tail_cumulative(basis, coef, t);
}

/// Order-m Bernstein polynomial approximation of a function C on (0, tau],
/// with node values b_k = C(k tau / m). C(0) is taken as the right limit C(0+),
/// approximated by evaluating C at the smallest positive normal double times tau.
template <class Function>
struct BpApproximation {
  Function target;
  double tau;

  double node(int k, int m) const {
    if (k == 0) return target(std::numeric_limits<double>::min() * tau);
    return target(tau * static_cast<double>(k) / m);
  }

  // Increments C(k tau/m) - C((k-1) tau/m), k = 1..m: the basis coefficients whose
  // tail_cumulative reproduces the approximation of C - C(0+).
  Eigen::VectorXd increments(int m) const {
    Eigen::VectorXd out(m);
    double previous = node(0, m);
    for (int k = 1; k <= m; ++k) {
      const double current = node(k, m);
      out[k - 1] = current - previous;
      previous = current;
    }
    return out;
  }
};

template <class Function>
BpApproximation(Function, double) -> BpApproximation<Function>;

template <class Function>
double bp_approximate(const BpApproximation<Function>& approx, int m, double t) {
  if (m < 1) throw DomainError("bp_approximate: degree must be >= 1");
  if (!(t >= 0.0) || t > approx.tau) throw DomainError("bp_approximate: t must lie in [0, tau]");
  const double x = t / approx.tau;
  if (x == 0.0) return approx.node(0, m);
  if (x == 1.0) return approx.node(m, m);
  const double lx = std::log(x);
  const double l1x = std::log1p(-x);
  const double lm = std::lgamma(m + 1.0);
  double sum = 0.0;
  for (int k = 0; k <= m; ++k) {
    const double log_weight = lm - std::lgamma(k + 1.0) - std::lgamma(m - k + 1.0) + k * lx + (m - k) * l1x;
    sum += approx.node(k, m) * std::exp(log_weight);
  }
  return sum;
}

// Degree used when none is configured: ceil(n^0.4), clamped to [5, 30].
inline int default_degree(std::size_t n) {
  const double raw = std::ceil(std::pow(static_cast<double>(n), 0.4));
  return static_cast<int>(std::clamp(raw, 5.0, 30.0));
}

}  // namespace ypbp
