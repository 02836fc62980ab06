#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <Eigen/Dense>

namespace ypbp {

enum class StopReason { GradientTolerance, ObjectiveStalled, MaxIterations, LineSearchFailed, NonFiniteStart };

inline const char* to_string(StopReason reason) {
  switch (reason) {
    case StopReason::GradientTolerance: return "gradient-tolerance";
    case StopReason::ObjectiveStalled: return "objective-stalled";
    case StopReason::MaxIterations: return "max-iterations";
    case StopReason::LineSearchFailed: return "line-search-failed";
    case StopReason::NonFiniteStart: return "non-finite-start";
  }
  return "?";
}

struct BfgsOptions {
  double gradient_tolerance = 1e-6;   // on the scaled gradient norm
  double relative_tolerance = 1e-10;  // on the relative objective change per iteration
  int max_iterations = 500;
  double max_step = 5.0;  // largest coordinate move tried by the first trial step
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = std::numeric_limits<double>::infinity();
  Eigen::VectorXd gradient;
  int iterations = 0;
  int evaluations = 0;
  StopReason reason = StopReason::MaxIterations;
  double scaled_gradient_norm = std::numeric_limits<double>::infinity();
  std::vector<double> trace;  // objective after every accepted iteration

  // Either stopping rule counts: scaled gradient small, or the relative
  // objective change of an accepted step below its tolerance.
  bool converged() const { return reason == StopReason::GradientTolerance || reason == StopReason::ObjectiveStalled; }
};

// max_i |g_i| max(|x_i|, 1) / max(|f|, 1): invariant to the scale of the objective.
inline double scaled_gradient_norm(const Eigen::VectorXd& x, const Eigen::VectorXd& g, double f) {
  double worst = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    worst = std::max(worst, std::fabs(g[i]) * std::max(std::fabs(x[i]), 1.0));
  }
  return worst / std::max(std::fabs(f), 1.0);
}

namespace detail {

// Minimizer of the cubic matching values and slopes at a and b, clamped into
// the inner part of the interval; falls back to bisection.
inline double cubic_step(double a, double fa, double ga, double b, double fb, double gb) {
  const double d1 = ga + gb - 3.0 * (fa - fb) / (a - b);
  const double disc = d1 * d1 - ga * gb;
  const double lo = std::min(a, b);
  const double hi = std::max(a, b);
  double trial = 0.5 * (a + b);
  if (disc >= 0.0) {
    const double d2 = std::copysign(std::sqrt(disc), b - a);
    const double denom = gb - ga + 2.0 * d2;
    if (denom != 0.0) trial = b - (b - a) * (gb + d2 - d1) / denom;
  }
  const double margin = 0.1 * (hi - lo);
  if (!std::isfinite(trial) || trial < lo + margin || trial > hi - margin) trial = 0.5 * (a + b);
  return trial;
}

}  // namespace detail

/// Quasi-Newton BFGS minimization of f with a strong-Wolfe line search.
///
/// Objective signature: double f(const Eigen::VectorXd& x, Eigen::VectorXd* grad).
/// A non-finite value marks an invalid point; the line search backs off from it.
/// Accepted iterations strictly decrease f.
template <class Objective>
BfgsResult minimize_bfgs(Objective&& objective, Eigen::VectorXd x0, const BfgsOptions& options = {}) {
  constexpr double kArmijo = 1e-4;
  constexpr double kCurvature = 0.9;
  constexpr int kMaxLineSearch = 40;

  BfgsResult result;
  const Eigen::Index dim = x0.size();
  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd g(dim);
  double f = objective(x, &g);
  ++result.evaluations;
  if (!std::isfinite(f) || !g.allFinite()) {
    result.x = x;
    result.value = f;
    result.gradient = g;
    result.reason = StopReason::NonFiniteStart;
    return result;
  }

  Eigen::MatrixXd inverse_hessian = Eigen::MatrixXd::Identity(dim, dim);
  bool fresh_metric = true;
  result.reason = StopReason::MaxIterations;

  for (int iter = 0; iter < options.max_iterations; ++iter) {
    result.scaled_gradient_norm = scaled_gradient_norm(x, g, f);
    if (result.scaled_gradient_norm <= options.gradient_tolerance) {
      result.reason = StopReason::GradientTolerance;
      break;
    }

    Eigen::VectorXd direction = -inverse_hessian * g;
    double slope = g.dot(direction);
    if (!(slope < 0.0)) {
      inverse_hessian.setIdentity();
      fresh_metric = true;
      direction = -g;
      slope = -g.squaredNorm();
    }
    double alpha = 1.0;
    if (fresh_metric) {
      const double largest = direction.cwiseAbs().maxCoeff();
      if (largest > options.max_step) alpha = options.max_step / largest;
    }

    // Strong-Wolfe search: bracket, then zoom.
    double prev_alpha = 0.0;
    double prev_f = f;
    double prev_slope = slope;
    double accepted_alpha = -1.0;
    double new_f = f;
    Eigen::VectorXd new_x(dim);
    Eigen::VectorXd new_g(dim);
    double lo = 0.0, lo_f = f, lo_slope = slope;
    double hi = 0.0, hi_f = 0.0, hi_slope = 0.0;
    bool zoom = false;

    int trials = 0;
    for (; trials < kMaxLineSearch && !zoom; ++trials) {
      new_x = x + alpha * direction;
      new_f = objective(new_x, &new_g);
      ++result.evaluations;
      if (!std::isfinite(new_f) || !new_g.allFinite()) {
        alpha = prev_alpha + 0.25 * (alpha - prev_alpha);
        continue;
      }
      const double new_slope = new_g.dot(direction);
      if (new_f > f + kArmijo * alpha * slope || (trials > 0 && new_f >= prev_f)) {
        lo = prev_alpha; lo_f = prev_f; lo_slope = prev_slope;
        hi = alpha; hi_f = new_f; hi_slope = new_slope;
        zoom = true;
        break;
      }
      if (std::fabs(new_slope) <= -kCurvature * slope) {
        accepted_alpha = alpha;
        break;
      }
      if (new_slope >= 0.0) {
        lo = alpha; lo_f = new_f; lo_slope = new_slope;
        hi = prev_alpha; hi_f = prev_f; hi_slope = prev_slope;
        zoom = true;
        break;
      }
      prev_alpha = alpha;
      prev_f = new_f;
      prev_slope = new_slope;
      alpha *= 2.0;
    }

    if (zoom) {
      for (; trials < kMaxLineSearch; ++trials) {
        alpha = detail::cubic_step(lo, lo_f, lo_slope, hi, hi_f, hi_slope);
        new_x = x + alpha * direction;
        new_f = objective(new_x, &new_g);
        ++result.evaluations;
        if (!std::isfinite(new_f) || !new_g.allFinite()) {
          hi = alpha; hi_f = std::numeric_limits<double>::max(); hi_slope = 0.0;
          continue;
        }
        const double new_slope = new_g.dot(direction);
        if (new_f > f + kArmijo * alpha * slope || new_f >= lo_f) {
          hi = alpha; hi_f = new_f; hi_slope = new_slope;
        } else {
          if (std::fabs(new_slope) <= -kCurvature * slope) {
            accepted_alpha = alpha;
            break;
          }
          if (new_slope * (hi - lo) >= 0.0) {
            hi = lo; hi_f = lo_f; hi_slope = lo_slope;
          }
          lo = alpha; lo_f = new_f; lo_slope = new_slope;
        }
        if (std::fabs(hi - lo) * direction.cwiseAbs().maxCoeff() < 1e-16 * (1.0 + x.cwiseAbs().maxCoeff())) break;
      }
      // Sufficient decrease without the curvature condition is still progress.
      if (accepted_alpha < 0.0 && lo > 0.0 && lo_f < f) {
        accepted_alpha = lo;
        new_x = x + lo * direction;
        new_f = objective(new_x, &new_g);
        ++result.evaluations;
      }
    }

    if (accepted_alpha <= 0.0 || !(new_f < f)) {
      if (!fresh_metric) {
        inverse_hessian.setIdentity();
        fresh_metric = true;
        continue;
      }
      result.reason = StopReason::LineSearchFailed;
      break;
    }

    const Eigen::VectorXd s = new_x - x;
    const Eigen::VectorXd y = new_g - g;
    const double relative_change = (f - new_f) / std::max({std::fabs(f), std::fabs(new_f), 1.0});
    x = new_x;
    f = new_f;
    g = new_g;
    result.trace.push_back(f);
    result.iterations = iter + 1;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (fresh_metric) {
        inverse_hessian *= sy / y.squaredNorm();
        fresh_metric = false;
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = inverse_hessian * y;
      inverse_hessian += ((sy + y.dot(hy)) * rho * rho) * (s * s.transpose()) -
                         rho * (hy * s.transpose() + s * hy.transpose());
    }

    if (relative_change <= options.relative_tolerance) {
      result.scaled_gradient_norm = scaled_gradient_norm(x, g, f);
      result.reason = result.scaled_gradient_norm <= options.gradient_tolerance ? StopReason::GradientTolerance
                                                                               : StopReason::ObjectiveStalled;
      break;
    }
  }

  result.x = x;
  result.value = f;
  result.gradient = g;
  result.scaled_gradient_norm = scaled_gradient_norm(x, g, f);
  return result;
}

}  // namespace ypbp
