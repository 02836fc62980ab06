#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/bernstein.hpp"
#include "ypbp/errors.hpp"

namespace ypbp {

// The four model variants: baseline hazard (M1) or baseline odds (M2), each in
// the original form or with a constant-effect covariate block (the star forms).
enum class Variant { M1, M2, M1Star, M2Star };

inline BaselineKind baseline_kind(Variant v) {
  return (v == Variant::M1 || v == Variant::M1Star) ? BaselineKind::Hazard : BaselineKind::Odds;
}

inline bool has_constant_block(Variant v) { return v == Variant::M1Star || v == Variant::M2Star; }

inline const char* to_string(Variant v) {
  switch (v) {
    case Variant::M1: return "m1";
    case Variant::M2: return "m2";
    case Variant::M1Star: return "m1-star";
    case Variant::M2Star: return "m2-star";
  }
  return "?";
}

inline Variant parse_variant(std::string_view text) {
  if (text == "m1") return Variant::M1;
  if (text == "m2") return Variant::M2;
  if (text == "m1-star") return Variant::M1Star;
  if (text == "m2-star") return Variant::M2Star;
  throw ConfigError("unknown variant '" + std::string(text) + "' (expected m1, m2, m1-star or m2-star)");
}

// Covariates of one subject: z has distinct short/long-term effects, x a constant effect.
struct CovariateRow {
  Eigen::VectorXd z;
  Eigen::VectorXd x;
};

// Short-term (lambda) and long-term (theta) hazard ratios.
struct RatioPair {
  double lambda;
  double theta;
};

struct YpParameters {
  Eigen::VectorXd psi;   // short-term coefficients
  Eigen::VectorXd phi;   // long-term coefficients
  Eigen::VectorXd beta;  // constant-effect coefficients; empty in the original formulation
  BpBasis basis;
  BaselineCoefficients baseline;

  Eigen::Index q() const { return psi.size(); }
  Eigen::Index p() const { return beta.size(); }

  Variant variant() const {
    const bool star = beta.size() > 0;
    if (baseline.kind == BaselineKind::Hazard) return star ? Variant::M1Star : Variant::M1;
    return star ? Variant::M2Star : Variant::M2;
  }

  void validate() const {
    if (psi.size() < 1) throw ContractError("YpParameters: at least one time-varying-effect covariate is required");
    if (phi.size() != psi.size()) throw ContractError("YpParameters: psi and phi must have the same length");
    baseline.validate(basis);
  }

  void check_row(const CovariateRow& row) const {
    if (row.z.size() != psi.size() || row.x.size() != beta.size()) {
      throw ContractError("covariate row dimensions do not match the parameters");
    }
  }
};

namespace detail {

inline constexpr double kMaxLinearPredictor = 700.0;

inline double checked_exp(double linear_predictor, const char* what) {
  if (!std::isfinite(linear_predictor) || std::fabs(linear_predictor) > kMaxLinearPredictor) {
    throw NumericRangeError(std::string(what) + ": linear predictor outside [-700, 700]");
  }
  return std::exp(linear_predictor);
}

}  // namespace detail

inline RatioPair ratios(const YpParameters& params, const CovariateRow& row) {
  params.check_row(row);
  return {detail::checked_exp(row.z.dot(params.psi), "short-term ratio"),
          detail::checked_exp(row.z.dot(params.phi), "long-term ratio")};
}

// exp(x beta), the multiplier of the constant-effect block (1 when x is empty).
inline double constant_effect(const YpParameters& params, const CovariateRow& row) {
  params.check_row(row);
  if (params.beta.size() == 0) return 1.0;
  return detail::checked_exp(row.x.dot(params.beta), "constant-effect ratio");
}

struct BaselineFunctions {
  double R0;   // baseline odds
  double dR0;  // derivative of the baseline odds
  double S0;
  double F0;
  double h0;
  double H0;
};

inline BaselineFunctions baseline_functions(const YpParameters& params, double t) {
  if (!(t >= 0.0)) throw DomainError("baseline_functions: time must be nonnegative");
  const double cumulative = tail_cumulative(params.basis, params.baseline, t);
  const double rate = tail_hazard(params.basis, params.baseline, t);
  BaselineFunctions out{};
  if (params.baseline.kind == BaselineKind::Hazard) {
    out.H0 = cumulative;
    out.h0 = rate;
    out.S0 = std::exp(-cumulative);
    out.F0 = -std::expm1(-cumulative);
    out.R0 = std::expm1(cumulative);
    out.dR0 = rate * std::exp(cumulative);
  } else {
    out.R0 = cumulative;
    out.dR0 = rate;
    out.S0 = 1.0 / (1.0 + cumulative);
    out.F0 = cumulative / (1.0 + cumulative);
    out.H0 = std::log1p(cumulative);
    out.h0 = rate / (1.0 + cumulative);
  }
  return out;
}

/// log S(t | row). Hazard baselines use
///   log S = -theta w [H0 + log1p((lambda/theta - 1) F0)],
/// which equals -theta w log1p((lambda/theta) R0) without forming R0 = e^H0 - 1.
inline double log_survival(const YpParameters& params, const CovariateRow& row, double t) {
  const RatioPair r = ratios(params, row);
  const double w = constant_effect(params, row);
  const BaselineFunctions b = baseline_functions(params, t);
  const double ratio = r.lambda / r.theta;
  if (params.baseline.kind == BaselineKind::Hazard) {
    return -r.theta * w * (b.H0 + std::log1p((ratio - 1.0) * b.F0));
  }
  return -r.theta * w * std::log1p(ratio * b.R0);
}

inline double survival(const YpParameters& params, const CovariateRow& row, double t) {
  return std::exp(log_survival(params, row, t));
}

// lambda theta R0' / (theta + lambda R0), times exp(x beta).
inline double hazard_odds_form(const YpParameters& params, const CovariateRow& row, double t) {
  const RatioPair r = ratios(params, row);
  const double w = constant_effect(params, row);
  const BaselineFunctions b = baseline_functions(params, t);
  return w * r.lambda * r.theta * b.dR0 / (r.theta + r.lambda * b.R0);
}

// lambda theta h0 / (lambda F0 + theta S0), times exp(x beta).
inline double hazard_baseline_form(const YpParameters& params, const CovariateRow& row, double t) {
  const RatioPair r = ratios(params, row);
  const double w = constant_effect(params, row);
  const BaselineFunctions b = baseline_functions(params, t);
  return w * r.lambda * r.theta * b.h0 / (r.lambda * b.F0 + r.theta * b.S0);
}

// Uses the form native to the baseline kind, which stays finite when S0 underflows.
inline double hazard(const YpParameters& params, const CovariateRow& row, double t) {
  return params.baseline.kind == BaselineKind::Hazard ? hazard_baseline_form(params, row, t)
                                                      : hazard_odds_form(params, row, t);
}

inline double log_hazard(const YpParameters& params, const CovariateRow& row, double t) {
  const RatioPair r = ratios(params, row);
  const double log_w = params.beta.size() > 0 ? row.x.dot(params.beta) : 0.0;
  const BaselineFunctions b = baseline_functions(params, t);
  const double log_ratios = std::log(r.lambda) + std::log(r.theta) + log_w;
  if (params.baseline.kind == BaselineKind::Hazard) {
    return log_ratios + std::log(b.h0) - std::log(r.lambda * b.F0 + r.theta * b.S0);
  }
  return log_ratios + std::log(b.dR0) - std::log(r.theta + r.lambda * b.R0);
}

/// log f(t) = log h(t) + log S(t). A zero hazard yields -infinity, which callers
/// must treat as an invalid point.
inline double log_density(const YpParameters& params, const CovariateRow& row, double t) {
  const double lh = log_hazard(params, row, t);
  if (!(lh > -std::numeric_limits<double>::infinity())) return -std::numeric_limits<double>::infinity();
  return lh + log_survival(params, row, t);
}

}  // namespace ypbp
