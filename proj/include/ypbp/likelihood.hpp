#pragma once

#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/bernstein.hpp"
#include "ypbp/dataset.hpp"
#include "ypbp/errors.hpp"
#include "ypbp/yp_model.hpp"

namespace ypbp {

/// Position of each parameter block inside the unconstrained vector
/// (psi, phi, beta, log baseline coefficients).
struct ParameterLayout {
  Eigen::Index q = 0;
  Eigen::Index p = 0;
  int m = 0;
  BaselineKind kind = BaselineKind::Hazard;

  Eigen::Index size() const { return 2 * q + p + m; }
  Eigen::Index psi_offset() const { return 0; }
  Eigen::Index phi_offset() const { return q; }
  Eigen::Index beta_offset() const { return 2 * q; }
  Eigen::Index baseline_offset() const { return 2 * q + p; }
  Eigen::Index regression_size() const { return 2 * q + p; }

  static ParameterLayout for_data(const SurvivalDataset& data, Variant variant, int degree) {
    if (has_constant_block(variant) && data.p() == 0) {
      throw ConfigError(std::string("variant ") + to_string(variant) + " needs at least one constant-effect (x_) column");
    }
    if (data.q() < 1) throw ContractError("at least one time-varying-effect (z_) covariate is required");
    return {data.q(), has_constant_block(variant) ? data.p() : 0, degree, baseline_kind(variant)};
  }

  Eigen::VectorXd pack(const YpParameters& params) const {
    check(params);
    Eigen::VectorXd u(size());
    u.segment(psi_offset(), q) = params.psi;
    u.segment(phi_offset(), q) = params.phi;
    if (p > 0) u.segment(beta_offset(), p) = params.beta;
    constexpr double kLogFloor = -708.0;
    for (int k = 0; k < m; ++k) {
      const double c = params.baseline.values[k];
      u[baseline_offset() + k] = c > 0.0 ? std::max(std::log(c), kLogFloor) : kLogFloor;
    }
    return u;
  }

  YpParameters unpack(const Eigen::VectorXd& u, const BpBasis& basis) const {
    if (u.size() != size()) throw ContractError("parameter vector has the wrong length");
    if (basis.degree() != m) throw ContractError("basis degree does not match the layout");
    YpParameters params{u.segment(psi_offset(), q), u.segment(phi_offset(), q),
                        p > 0 ? Eigen::VectorXd(u.segment(beta_offset(), p)) : Eigen::VectorXd(0), basis,
                        BaselineCoefficients{kind, u.segment(baseline_offset(), m).array().exp().matrix()}};
    return params;
  }

  // Natural scale: baseline block exponentiated.
  Eigen::VectorXd natural(const Eigen::VectorXd& u) const {
    Eigen::VectorXd out = u;
    out.segment(baseline_offset(), m) = u.segment(baseline_offset(), m).array().exp().matrix();
    return out;
  }

  // Diagonal of d natural / d unconstrained.
  Eigen::VectorXd natural_jacobian(const Eigen::VectorXd& u) const {
    Eigen::VectorXd out = Eigen::VectorXd::Ones(size());
    out.segment(baseline_offset(), m) = u.segment(baseline_offset(), m).array().exp().matrix();
    return out;
  }

  std::vector<std::string> names(const std::vector<std::string>& z_names, const std::vector<std::string>& x_names) const {
    std::vector<std::string> out;
    for (Eigen::Index j = 0; j < q; ++j) out.push_back("psi." + z_names.at(static_cast<std::size_t>(j)));
    for (Eigen::Index j = 0; j < q; ++j) out.push_back("phi." + z_names.at(static_cast<std::size_t>(j)));
    for (Eigen::Index j = 0; j < p; ++j) out.push_back("beta." + x_names.at(static_cast<std::size_t>(j)));
    const char* symbol = kind == BaselineKind::Hazard ? "gamma." : "xi.";
    for (int k = 1; k <= m; ++k) out.push_back(symbol + std::to_string(k));
    return out;
  }

  void check(const YpParameters& params) const {
    if (params.q() != q || params.p() != p || params.basis.degree() != m || params.baseline.kind != kind) {
      throw ContractError("parameters do not match the layout");
    }
  }
};

/// Tail-adjusted basis rows at every observed time: cumulative (n x m) and
/// rate (n x m). Both baseline functions are linear in the coefficients, so
/// H0 = cumulative * c and h0 = rate * c.
struct BasisDesign {
  Eigen::MatrixXd cumulative;
  Eigen::MatrixXd rate;

  BasisDesign(std::span<const double> times, const BpBasis& basis)
      : cumulative(static_cast<Eigen::Index>(times.size()), basis.degree()),
        rate(static_cast<Eigen::Index>(times.size()), basis.degree()) {
    std::vector<double> row(static_cast<std::size_t>(basis.degree()));
    for (std::size_t i = 0; i < times.size(); ++i) {
      const auto r = static_cast<Eigen::Index>(i);
      basis.tail_cdfs(times[i], row);
      for (int k = 0; k < basis.degree(); ++k) cumulative(r, k) = row[static_cast<std::size_t>(k)];
      basis.tail_densities(times[i], row);
      for (int k = 0; k < basis.degree(); ++k) rate(r, k) = row[static_cast<std::size_t>(k)];
    }
  }
};

/// Log-likelihood of a dataset as a function of the unconstrained parameter
/// vector, with its analytic gradient. Invalid points (zero hazard at an event,
/// linear predictors beyond +-700) evaluate to -infinity.
class LikelihoodEvaluator {
 public:
  LikelihoodEvaluator(const SurvivalDataset& data, ParameterLayout layout, BpBasis basis)
      : layout_(layout), basis_(std::move(basis)), design_(data.time(), basis_), z_(data.z()) {
    data.require_events();
    if (layout_.q != data.q() || (layout_.p > 0 && layout_.p != data.p())) {
      throw ContractError("likelihood: parameter layout does not match the data dimensions");
    }
    if (layout_.m != basis_.degree()) throw ContractError("likelihood: basis degree does not match the layout");
    if (layout_.p > 0) x_ = data.x();
    status_.resize(static_cast<Eigen::Index>(data.n()));
    for (std::size_t i = 0; i < data.n(); ++i) status_[static_cast<Eigen::Index>(i)] = data.status()[i];
  }

  const ParameterLayout& layout() const { return layout_; }
  const BpBasis& basis() const { return basis_; }
  std::size_t n() const { return static_cast<std::size_t>(status_.size()); }

  double operator()(const Eigen::VectorXd& u, Eigen::VectorXd* gradient = nullptr) const {
    constexpr double kNegInf = -std::numeric_limits<double>::infinity();
    constexpr double kLimit = 700.0;
    if (u.size() != layout_.size()) throw ContractError("likelihood: parameter vector has the wrong length");
    const auto q = layout_.q;
    const auto p = layout_.p;
    const auto m = layout_.m;
    const auto n = status_.size();

    const Eigen::VectorXd eta = u.segment(layout_.baseline_offset(), m);
    if (!u.allFinite() || eta.maxCoeff() > kLimit) return kNegInf;
    const Eigen::VectorXd coef = eta.array().exp().matrix();
    const Eigen::VectorXd short_lp = z_ * u.segment(layout_.psi_offset(), q);
    const Eigen::VectorXd long_lp = z_ * u.segment(layout_.phi_offset(), q);
    Eigen::VectorXd const_lp = Eigen::VectorXd::Zero(n);
    if (p > 0) const_lp = x_ * u.segment(layout_.beta_offset(), p);
    const Eigen::VectorXd cumulative = design_.cumulative * coef;
    const Eigen::VectorXd rate = design_.rate * coef;

    Eigen::VectorXd d_short, d_long, d_const, d_rate, d_cumulative;
    if (gradient) {
      d_short.resize(n);
      d_long.resize(n);
      d_const.resize(n);
      d_rate.resize(n);
      d_cumulative.resize(n);
    }

    const bool hazard_kind = layout_.kind == BaselineKind::Hazard;
    double total = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const double rho = short_lp[i];
      const double vphi = long_lp[i];
      const double xi = const_lp[i];
      if (std::fabs(rho) > kLimit || std::fabs(vphi) > kLimit || std::fabs(xi) > kLimit ||
          std::fabs(rho - vphi) > kLimit || std::fabs(vphi + xi) > kLimit) {
        return kNegInf;
      }
      const double lambda = std::exp(rho);
      const double theta = std::exp(vphi);
      const double w = p > 0 ? std::exp(xi) : 1.0;
      const double theta_w = theta * w;
      const double ratio = lambda / theta;
      const double event = status_[i];
      const double rt = rate[i];
      if (event > 0.0 && !(rt > 0.0)) return kNegInf;

      if (hazard_kind) {
        const double cum = cumulative[i];
        const double s0 = std::exp(-cum);
        const double f0 = cum < 0.5 ? -std::expm1(-cum) : 1.0 - s0;
        const double denom = lambda * f0 + theta * s0;
        const double neg_log_s = cum + std::log1p((ratio - 1.0) * f0);
        total -= theta_w * neg_log_s;
        if (event > 0.0) total += rho + vphi + xi + std::log(rt / denom);
        if (gradient) {
          const double lf = lambda * f0 / denom;
          const double ts = theta * s0 / denom;
          d_short[i] = event * ts - theta_w * lf;
          d_long[i] = event * lf - theta_w * neg_log_s + theta_w * lf;
          d_const[i] = event - theta_w * neg_log_s;
          d_rate[i] = event > 0.0 ? event / rt : 0.0;
          d_cumulative[i] = -event * (lambda - theta) * s0 / denom - theta_w * lambda / denom;
        }
      } else {
        const double odds = cumulative[i];
        const double k = theta + lambda * odds;
        const double b = std::log1p(ratio * odds);
        total -= theta_w * b;
        if (event > 0.0) total += rho + vphi + xi + std::log(rt / k);
        if (gradient) {
          const double mixed = w * theta * lambda * odds / k;
          d_short[i] = event * theta / k - mixed;
          d_long[i] = event * lambda * odds / k - theta_w * b + mixed;
          d_const[i] = event - theta_w * b;
          d_rate[i] = event > 0.0 ? event / rt : 0.0;
          d_cumulative[i] = -(event + theta_w) * lambda / k;
        }
      }
    }
    if (!std::isfinite(total)) return kNegInf;

    if (gradient) {
      gradient->resize(layout_.size());
      gradient->segment(layout_.psi_offset(), q) = z_.transpose() * d_short;
      gradient->segment(layout_.phi_offset(), q) = z_.transpose() * d_long;
      if (p > 0) gradient->segment(layout_.beta_offset(), p) = x_.transpose() * d_const;
      const Eigen::VectorXd d_coef = design_.rate.transpose() * d_rate + design_.cumulative.transpose() * d_cumulative;
      gradient->segment(layout_.baseline_offset(), m) = coef.cwiseProduct(d_coef);
    }
    return total;
  }

 private:
  ParameterLayout layout_;
  BpBasis basis_;
  BasisDesign design_;
  Eigen::MatrixXd z_;
  Eigen::MatrixXd x_;
  Eigen::VectorXd status_;
};

namespace detail {

inline ParameterLayout layout_of(const YpParameters& params, const SurvivalDataset& data) {
  params.validate();
  if (params.q() != data.q()) throw ContractError("likelihood: psi/phi length does not match the z_ columns");
  if (params.p() != 0 && params.p() != data.p()) {
    throw ContractError("likelihood: beta length does not match the x_ columns");
  }
  return {params.q(), params.p(), params.basis.degree(), params.baseline.kind};
}

}  // namespace detail

inline double log_likelihood(const YpParameters& params, const SurvivalDataset& data) {
  const ParameterLayout layout = detail::layout_of(params, data);
  const LikelihoodEvaluator evaluator(data, layout, params.basis);
  Eigen::VectorXd u = layout.pack(params);
  // Zero coefficients have no log; evaluate them exactly rather than through the floor.
  if ((params.baseline.values.array() == 0.0).any()) {
    double total = 0.0;
    for (std::size_t i = 0; i < data.n(); ++i) {
      const CovariateRow row = data.row(i);
      const CovariateRow used{row.z, params.p() > 0 ? row.x : Eigen::VectorXd(0)};
      total += log_survival(params, used, data.time()[i]);
      if (data.status()[i] == 1) total += log_hazard(params, used, data.time()[i]);
    }
    return std::isfinite(total) ? total : -std::numeric_limits<double>::infinity();
  }
  return evaluator(u);
}

// Gradient with respect to (psi, phi, beta, log baseline coefficients).
inline Eigen::VectorXd log_likelihood_gradient(const YpParameters& params, const SurvivalDataset& data) {
  const ParameterLayout layout = detail::layout_of(params, data);
  const LikelihoodEvaluator evaluator(data, layout, params.basis);
  Eigen::VectorXd gradient;
  const double value = evaluator(layout.pack(params), &gradient);
  if (!std::isfinite(value)) throw NumericRangeError("log-likelihood is not finite at the evaluation point");
  return gradient;
}

}  // namespace ypbp
