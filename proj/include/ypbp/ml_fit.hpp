#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include "ypbp/bernstein.hpp"
#include "ypbp/dataset.hpp"
#include "ypbp/errors.hpp"
#include "ypbp/likelihood.hpp"
#include "ypbp/optimizer.hpp"
#include "ypbp/yp_model.hpp"

namespace ypbp {

struct FitConfig {
  Variant variant = Variant::M1;
  int degree = 0;  // 0 selects default_degree(n)
  double gradient_tolerance = 1e-6;
  double relative_tolerance = 1e-10;
  int max_iter = 500;
  std::optional<Eigen::VectorXd> initial_point;  // unconstrained scale
  bool compute_covariance = true;
};

enum class FitStatus { Converged, NotConverged, IllConditioned };

inline const char* to_string(FitStatus status) {
  switch (status) {
    case FitStatus::Converged: return "converged";
    case FitStatus::NotConverged: return "not-converged";
    case FitStatus::IllConditioned: return "ill-conditioned";
  }
  return "?";
}

struct FitResult {
  Variant variant;
  ParameterLayout layout;
  YpParameters estimates;
  std::vector<std::string> names;
  Eigen::VectorXd unconstrained;
  Eigen::VectorXd natural;
  Eigen::MatrixXd covariance_unconstrained;  // inverse observed information
  Eigen::MatrixXd covariance;                // natural scale, by the delta method
  double loglik = 0.0;
  bool converged = false;
  FitStatus status = FitStatus::NotConverged;
  StopReason stop_reason = StopReason::MaxIterations;
  int iterations = 0;
  double gradient_norm = 0.0;
  double gradient_tolerance = 0.0;
  double hessian_condition = 0.0;
  int boundary_coefficients = 0;  // baseline coefficients held at the zero boundary
  std::vector<double> objective_trace;  // maximized objective after each accepted iteration
  std::string diagnostic;

  Eigen::VectorXd standard_errors() const { return covariance.diagonal().cwiseMax(0.0).cwiseSqrt(); }
};

namespace detail {

// Baseline start: total cumulative hazard at tau_hat from the Nelson-Aalen
// estimator, split equally across the m coefficients.
inline Eigen::VectorXd crude_start(const SurvivalDataset& data, const ParameterLayout& layout) {
  const auto na = nelson_aalen(data.time(), data.status());
  const double cumulative = na.empty() ? 1.0 : na.back().value;
  const double total = layout.kind == BaselineKind::Hazard ? cumulative : std::expm1(cumulative);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(layout.size());
  u.segment(layout.baseline_offset(), layout.m).setConstant(std::log(total / layout.m));
  return u;
}

}  // namespace detail

/// Observed information: central differences of the analytic gradient of
/// -objective with step 1e-5 (1 + |u_j|), symmetrized.
/// Objective signature: double f(const Eigen::VectorXd& u, Eigen::VectorXd* grad).
template <class Objective>
Eigen::MatrixXd observed_information(const Objective& evaluator, const Eigen::VectorXd& u) {
  const Eigen::Index d = u.size();
  Eigen::MatrixXd info(d, d);
  Eigen::VectorXd gp(d), gm(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double step = 1e-5 * (1.0 + std::fabs(u[j]));
    Eigen::VectorXd up = u, um = u;
    up[j] += step;
    um[j] -= step;
    const double fp = evaluator(up, &gp);
    const double fm = evaluator(um, &gm);
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      info.col(j).setConstant(std::numeric_limits<double>::quiet_NaN());
      continue;
    }
    info.col(j) = -(gp - gm) / (2.0 * step);
  }
  return 0.5 * (info + info.transpose());
}

struct InformationCheck {
  bool positive_definite = false;
  double condition = std::numeric_limits<double>::infinity();
  std::string reason;
};

// Definiteness and conditioning of the information matrix in correlation form,
// so parameters on very different scales do not register as ill-conditioned.
inline InformationCheck check_information(const Eigen::MatrixXd& info) {
  InformationCheck out;
  if (!info.allFinite()) {
    out.reason = "information matrix has non-finite entries";
    return out;
  }
  const Eigen::VectorXd diag = info.diagonal();
  for (Eigen::Index j = 0; j < diag.size(); ++j) {
    if (!(diag[j] > 0.0)) {
      out.reason = "no curvature in coordinate " + std::to_string(j + 1) + " (parameter not identifiable)";
      return out;
    }
  }
  const Eigen::VectorXd scale = diag.cwiseSqrt().cwiseInverse();
  const Eigen::MatrixXd corr = scale.asDiagonal() * info * scale.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(corr, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  out.condition = lo > 0.0 ? hi / lo : std::numeric_limits<double>::infinity();
  if (!(lo > 0.0)) {
    out.reason = "information matrix is not positive definite";
    return out;
  }
  if (out.condition > 1e12) {
    out.reason = "information matrix is ill-conditioned";
    return out;
  }
  out.positive_definite = true;
  return out;
}

// Relative size below which a baseline coefficient is treated as sitting on
// the zero boundary of its support.
inline constexpr double kBoundaryRatio = 1e-3;

struct ReducedInformation {
  std::vector<Eigen::Index> active;
  Eigen::MatrixXd information;  // restricted to the active coordinates
  InformationCheck check;

  // Inverse of the reduced information embedded in a d x d matrix; held
  // coordinates get zero rows and columns.
  Eigen::MatrixXd covariance(Eigen::Index d) const {
    const auto k = static_cast<Eigen::Index>(active.size());
    const Eigen::VectorXd scale = information.diagonal().cwiseSqrt().cwiseInverse();
    const Eigen::MatrixXd corr = scale.asDiagonal() * information * scale.asDiagonal();
    const Eigen::MatrixXd inverse = scale.asDiagonal() * corr.ldlt().solve(Eigen::MatrixXd::Identity(k, k)) * scale.asDiagonal();
    Eigen::MatrixXd out = Eigen::MatrixXd::Zero(d, d);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) out(active[a], active[b]) = 0.5 * (inverse(a, b) + inverse(b, a));
    }
    return out;
  }
};

/// Restricts the information matrix to the coordinates that carry curvature.
///
/// Baseline coefficients on the zero boundary (log scale drifting towards
/// -infinity) have vanishing curvature; they are held fixed at their estimate.
/// A coefficient is held when it is below kBoundaryRatio times the largest
/// one, and further baseline coefficients are released smallest-first while
/// the remaining matrix is not positive definite. Regression coefficients are
/// never held, so an unidentifiable regression parameter is reported.
inline ReducedInformation reduce_information(const Eigen::MatrixXd& info, const ParameterLayout& layout,
                                             const Eigen::VectorXd& u) {
  const Eigen::VectorXd eta = u.segment(layout.baseline_offset(), layout.m);
  const double largest = eta.maxCoeff();
  std::vector<Eigen::Index> baseline;
  for (int k = 0; k < layout.m; ++k) {
    if (eta[k] - largest >= std::log(kBoundaryRatio)) baseline.push_back(layout.baseline_offset() + k);
  }
  std::sort(baseline.begin(), baseline.end(), [&](Eigen::Index a, Eigen::Index b) { return u[a] > u[b]; });

  ReducedInformation out;
  while (true) {
    out.active.clear();
    for (Eigen::Index j = 0; j < layout.regression_size(); ++j) out.active.push_back(j);
    out.active.insert(out.active.end(), baseline.begin(), baseline.end());
    std::sort(out.active.begin(), out.active.end());
    const auto k = static_cast<Eigen::Index>(out.active.size());
    out.information.resize(k, k);
    for (Eigen::Index a = 0; a < k; ++a) {
      for (Eigen::Index b = 0; b < k; ++b) out.information(a, b) = info(out.active[a], out.active[b]);
    }
    out.check = check_information(out.information);
    if (out.check.positive_definite || baseline.size() <= 1) return out;
    bool regression_flat = false;
    for (Eigen::Index j = 0; j < layout.regression_size(); ++j) regression_flat |= !(info(j, j) > 0.0);
    if (regression_flat) return out;
    baseline.pop_back();
  }
}

// Original-formulation variants treat x_ columns as extra time-varying-effect covariates.
inline SurvivalDataset dataset_for_variant(const SurvivalDataset& data, Variant variant) {
  return has_constant_block(variant) || data.p() == 0 ? data : data.merged_blocks();
}

namespace detail {

// Adds nothing to the log-likelihood.
struct NoPenalty {
  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd* grad) const {
    if (grad) grad->setZero(u.size());
    return 0.0;
  }
};

/// Maximizes loglik(u) + penalty(u) by BFGS on the unconstrained scale.
/// Penalty signature matches the likelihood: double f(u, Eigen::VectorXd* grad).
template <class Penalty>
FitResult fit_penalized(const SurvivalDataset& input, const FitConfig& config, const Penalty& penalty) {
  input.require_events();
  const SurvivalDataset data = dataset_for_variant(input, config.variant);
  const int degree = config.degree > 0 ? config.degree : default_degree(data.n());
  const ParameterLayout layout = ParameterLayout::for_data(data, config.variant, degree);
  BpBasis basis(degree, data.tau_hat());
  const LikelihoodEvaluator evaluator(data, layout, basis);

  Eigen::VectorXd start = config.initial_point ? *config.initial_point : detail::crude_start(data, layout);
  if (start.size() != layout.size()) throw ContractError("fit_ml: initial point has the wrong length");

  auto objective = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    const double value = evaluator(u, grad);
    if (!std::isfinite(value)) return value;
    Eigen::VectorXd extra;
    const double added = penalty(u, grad ? &extra : nullptr);
    if (grad) *grad += extra;
    return value + added;
  };
  auto negative = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    const double value = objective(u, grad);
    if (grad) *grad = -*grad;
    return -value;
  };
  BfgsOptions options;
  options.gradient_tolerance = config.gradient_tolerance;
  options.relative_tolerance = config.relative_tolerance;
  options.max_iterations = config.max_iter;
  BfgsResult opt = minimize_bfgs(negative, start, options);

  FitResult fit{config.variant,
                layout,
                layout.unpack(opt.x, basis),
                layout.names(data.z_names(), data.x_names()),
                opt.x,
                layout.natural(opt.x),
                {},
                {},
                std::isfinite(opt.value) ? evaluator(opt.x) : -opt.value,
                false,
                FitStatus::NotConverged,
                opt.reason,
                opt.iterations,
                opt.scaled_gradient_norm,
                config.gradient_tolerance,
                0.0,
                0,
                {},
                {}};
  fit.objective_trace.reserve(opt.trace.size());
  for (double v : opt.trace) fit.objective_trace.push_back(-v);

  const Eigen::Index d = layout.size();
  fit.covariance_unconstrained = Eigen::MatrixXd::Constant(d, d, std::numeric_limits<double>::quiet_NaN());
  fit.covariance = fit.covariance_unconstrained;

  if (!opt.converged()) {
    fit.status = FitStatus::NotConverged;
    fit.diagnostic = std::string("optimizer stopped: ") + to_string(opt.reason);
  } else {
    fit.status = FitStatus::Converged;
  }

  if (config.compute_covariance && std::isfinite(opt.value)) {
    const Eigen::MatrixXd info = observed_information(objective, opt.x);
    const ReducedInformation reduced = reduce_information(info, layout, opt.x);
    fit.hessian_condition = reduced.check.condition;
    fit.boundary_coefficients = static_cast<int>(d - static_cast<Eigen::Index>(reduced.active.size()));
    if (!reduced.check.positive_definite) {
      fit.status = FitStatus::IllConditioned;
      fit.diagnostic = reduced.check.reason;
    } else {
      fit.covariance_unconstrained = reduced.covariance(d);
      const Eigen::VectorXd jac = layout.natural_jacobian(opt.x);
      fit.covariance = jac.asDiagonal() * fit.covariance_unconstrained * jac.asDiagonal();
    }
  }
  fit.converged = fit.status == FitStatus::Converged;
  return fit;
}

}  // namespace detail

/// Maximum-likelihood fit by BFGS on the unconstrained scale (baseline
/// coefficients in log scale). Original-formulation variants treat any x_
/// columns as additional time-varying-effect covariates.
inline FitResult fit_ml(const SurvivalDataset& input, const FitConfig& config) {
  return detail::fit_penalized(input, config, detail::NoPenalty{});
}

struct Interval {
  double lower;
  double upper;
};

// Standard normal quantile.
inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(), p);
}

inline Interval wald_interval(double estimate, double se, double level) {
  if (!(level >= 0.0 && level < 1.0)) throw ContractError("wald_interval: level must lie in [0, 1)");
  if (!(se >= 0.0)) throw ContractError("wald_interval: standard error must be nonnegative");
  const double z = level == 0.0 ? 0.0 : normal_quantile(0.5 * (1.0 + level));
  return {estimate - z * se, estimate + z * se};
}

/// estimate +- z_{(1+level)/2} se for every natural-scale parameter.
inline std::vector<Interval> wald_interval(const FitResult& fit, double level) {
  if (!fit.converged) throw ContractError("wald_interval: fit did not converge (" + fit.diagnostic + ")");
  const Eigen::MatrixXd& cov = fit.covariance;
  if (!cov.allFinite()) throw ContractError("wald_interval: covariance is not available");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov, Eigen::EigenvaluesOnly);
  const double lo = eig.eigenvalues().minCoeff();
  const double hi = eig.eigenvalues().maxCoeff();
  if (lo < -1e-10 * std::max(hi, 1.0)) {
    throw ContractError("wald_interval: covariance is not positive semidefinite (condition number " +
                        std::to_string(lo != 0.0 ? std::fabs(hi / lo) : std::numeric_limits<double>::infinity()) + ")");
  }
  std::vector<Interval> out;
  const Eigen::VectorXd se = fit.standard_errors();
  for (Eigen::Index j = 0; j < fit.natural.size(); ++j) out.push_back(wald_interval(fit.natural[j], se[j], level));
  return out;
}

// Wald z statistic for H0: parameter a == parameter b (natural scale indices).
inline double wald_difference_z(const FitResult& fit, Eigen::Index a, Eigen::Index b) {
  const double diff = fit.natural[a] - fit.natural[b];
  const double var = fit.covariance(a, a) + fit.covariance(b, b) - 2.0 * fit.covariance(a, b);
  if (!(var > 0.0)) throw ContractError("wald_difference_z: nonpositive variance");
  return diff / std::sqrt(var);
}

}  // namespace ypbp
