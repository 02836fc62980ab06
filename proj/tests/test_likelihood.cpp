#include <algorithm>
#include <cmath>
#include <numeric>

#include <boost/math/special_functions/beta.hpp>
#include <gtest/gtest.h>

#include "test_support.hpp"
#include "ypbp/likelihood.hpp"
#include "ypbp/simulation.hpp"

using namespace ypbp;
using ypbp::testing::random_dataset;
using ypbp::testing::random_parameters;
using ypbp::testing::vec;

namespace {

// From-scratch evaluation on Boost's beta functions: R0 and R0' from the basis
// series, then the likelihood as the log of a product of f^delta S^(1 - delta).
struct OracleTerms {
  double survival;
  double hazard;
};

OracleTerms oracle_terms(const YpParameters& p, const CovariateRow& row, double t) {
  const int m = p.basis.degree();
  const double tau = p.basis.tau();
  const double x = std::min(t / tau, 1.0);
  double cumulative = 0.0, rate = 0.0;
  for (int k = 1; k <= m; ++k) {
    const double c = p.baseline.values[k - 1];
    cumulative += c * boost::math::ibeta(k, m - k + 1, x);
    if (t < tau) rate += c * boost::math::ibeta_derivative(k, m - k + 1, x) / tau;
  }
  if (t >= tau) rate = p.baseline.values[m - 1] * m / tau;
  if (t > tau) cumulative += p.baseline.values[m - 1] * m * (t - tau) / tau;
  const bool hazard_kind = p.baseline.kind == BaselineKind::Hazard;
  const double r0 = hazard_kind ? std::expm1(cumulative) : cumulative;
  const double dr0 = hazard_kind ? rate * std::exp(cumulative) : rate;
  const double lambda = std::exp(row.z.dot(p.psi));
  const double theta = std::exp(row.z.dot(p.phi));
  const double w = p.beta.size() ? std::exp(row.x.dot(p.beta)) : 1.0;
  return {std::pow(1.0 + lambda / theta * r0, -theta * w), w * lambda * theta * dr0 / (theta + lambda * r0)};
}

double oracle_log_likelihood(const YpParameters& p, const SurvivalDataset& data) {
  double product = 1.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const CovariateRow full = data.row(i);
    const CovariateRow row{full.z, p.beta.size() ? full.x : Eigen::VectorXd(0)};
    const OracleTerms o = oracle_terms(p, row, data.time()[i]);
    product *= data.status()[i] == 1 ? o.hazard * o.survival : o.survival;
  }
  return std::log(product);
}

SurvivalDataset single(double t, int status, double z) {
  return SurvivalDataset({t}, {status}, Eigen::MatrixXd::Constant(1, 1, z), Eigen::MatrixXd(1, 0));
}

}  // namespace

TEST(Likelihood, SingleObservation) {
  YpParameters p{vec({0.4}), vec({-0.3}), Eigen::VectorXd(0), BpBasis(3, 2.0),
                 BaselineCoefficients{BaselineKind::Hazard, vec({0.5, 0.2, 0.9})}};
  const CovariateRow row{vec({1.0}), Eigen::VectorXd(0)};
  EXPECT_NEAR(log_likelihood(p, single(2.0, 1, 1.0)), log_hazard(p, row, 2.0) + log_survival(p, row, 2.0), 1e-13);
  // A censored row needs an event elsewhere; add one at z = 0 and subtract its contribution.
  SurvivalDataset two({2.0, 1.0}, {0, 1}, (Eigen::MatrixXd(2, 1) << 1.0, 0.0).finished(), Eigen::MatrixXd(2, 0));
  const CovariateRow zero{vec({0.0}), Eigen::VectorXd(0)};
  EXPECT_NEAR(log_likelihood(p, two) - log_hazard(p, zero, 1.0) - log_survival(p, zero, 1.0), log_survival(p, row, 2.0),
              1e-13);
}

TEST(Likelihood, MatchesBruteForceOracle) {
  RandomStream rng(20);
  for (auto kind : {BaselineKind::Hazard, BaselineKind::Odds}) {
    for (int p_dim : {0, 1}) {
      SurvivalDataset data = random_dataset(rng, 20, 2, 1);
      YpParameters p = random_parameters(rng, 2, p_dim, 6, data.tau_hat(), kind);
      const double expected = oracle_log_likelihood(p, data);
      EXPECT_NEAR(log_likelihood(p, data), expected, 1e-10 * std::fabs(expected)) << to_string(kind) << " p=" << p_dim;
    }
  }
}

TEST(Likelihood, TimesBeyondHorizonUseTail) {
  RandomStream rng(21);
  SurvivalDataset data = random_dataset(rng, 15, 1, 0);
  for (auto kind : {BaselineKind::Hazard, BaselineKind::Odds}) {
    // Basis horizon below the largest time exercises the linear tail.
    YpParameters p = random_parameters(rng, 1, 0, 5, 0.6 * data.tau_hat(), kind);
    const double expected = oracle_log_likelihood(p, data);
    EXPECT_NEAR(log_likelihood(p, data), expected, 1e-10 * std::fabs(expected));
  }
}

TEST(Likelihood, GradientMatchesFiniteDifferences) {
  RandomStream rng(22);
  for (auto variant : {Variant::M1, Variant::M2, Variant::M1Star, Variant::M2Star}) {
    SurvivalDataset data = random_dataset(rng, 60, 2, 2);
    const ParameterLayout layout = ParameterLayout::for_data(data, variant, 7);
    const LikelihoodEvaluator ll(data, layout, BpBasis(7, data.tau_hat()));
    Eigen::VectorXd u(layout.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) u[i] = 0.4 * rng.normal();
    Eigen::VectorXd g;
    ll(u, &g);
    for (Eigen::Index i = 0; i < u.size(); ++i) {
      const double h = 1e-5;
      Eigen::VectorXd up = u, down = u;
      up[i] += h;
      down[i] -= h;
      const double fd = (ll(up) - ll(down)) / (2 * h);
      EXPECT_NEAR(g[i], fd, 1e-5 * std::max(std::fabs(g[i]), 1.0)) << to_string(variant) << " index " << i;
    }
  }
}

TEST(Likelihood, ValueWithGradientEqualsValue) {
  RandomStream rng(23);
  SurvivalDataset data = random_dataset(rng, 40, 1, 0);
  const ParameterLayout layout = ParameterLayout::for_data(data, Variant::M2, 5);
  const LikelihoodEvaluator ll(data, layout, BpBasis(5, data.tau_hat()));
  Eigen::VectorXd u = Eigen::VectorXd::Constant(layout.size(), -0.3);
  Eigen::VectorXd g;
  EXPECT_EQ(ll(u, &g), ll(u));
}

TEST(Likelihood, PermutationInvariance) {
  RandomStream rng(24);
  SurvivalDataset data = random_dataset(rng, 50, 2, 1);
  YpParameters p = random_parameters(rng, 2, 1, 6, data.tau_hat(), BaselineKind::Hazard);
  std::vector<std::size_t> order(data.n());
  std::iota(order.begin(), order.end(), 0);
  std::reverse(order.begin(), order.end());
  std::swap(order[3], order[17]);
  const SurvivalDataset permuted = data.select(order);
  EXPECT_NEAR(log_likelihood(p, data), log_likelihood(p, permuted), 1e-10 * std::fabs(log_likelihood(p, data)));
}

TEST(Likelihood, ProportionalHazardsSpecialCase) {
  RandomStream rng(25);
  SurvivalDataset data = random_dataset(rng, 30, 1, 0);
  YpParameters p = random_parameters(rng, 1, 0, 6, data.tau_hat(), BaselineKind::Hazard);
  p.phi = p.psi;
  double expected = 0.0;
  for (std::size_t i = 0; i < data.n(); ++i) {
    const double t = data.time()[i];
    const double theta = std::exp(data.z()(static_cast<Eigen::Index>(i), 0) * p.psi[0]);
    expected -= theta * tail_cumulative(p.basis, p.baseline, t);
    if (data.status()[i]) expected += std::log(theta * tail_hazard(p.basis, p.baseline, t));
  }
  EXPECT_NEAR(log_likelihood(p, data), expected, 1e-10 * std::fabs(expected));
}

TEST(Likelihood, ZeroCoefficientsAreHandledExactly) {
  RandomStream rng(26);
  SurvivalDataset data = random_dataset(rng, 25, 1, 0);
  YpParameters p = random_parameters(rng, 1, 0, 5, data.tau_hat(), BaselineKind::Hazard);
  p.baseline.values[2] = 0.0;
  const double expected = oracle_log_likelihood(p, data);
  EXPECT_NEAR(log_likelihood(p, data), expected, 1e-10 * std::fabs(expected));
}

TEST(Likelihood, InvalidPointsAreNegativeInfinity) {
  RandomStream rng(27);
  SurvivalDataset data = random_dataset(rng, 10, 1, 0);
  const ParameterLayout layout = ParameterLayout::for_data(data, Variant::M1, 5);
  const LikelihoodEvaluator ll(data, layout, BpBasis(5, data.tau_hat()));
  Eigen::VectorXd u = Eigen::VectorXd::Zero(layout.size());
  u[0] = 1000.0;
  EXPECT_EQ(ll(u), -std::numeric_limits<double>::infinity());
}

TEST(Likelihood, Errors) {
  SurvivalDataset censored({1.0, 2.0}, {0, 0}, Eigen::MatrixXd::Ones(2, 1), Eigen::MatrixXd(2, 0));
  YpParameters p{vec({0.0}), vec({0.0}), Eigen::VectorXd(0), BpBasis(2, 2.0),
                 BaselineCoefficients{BaselineKind::Hazard, vec({1.0, 1.0})}};
  EXPECT_THROW(log_likelihood(p, censored), ContractError);
  SurvivalDataset two_z({1.0}, {1}, Eigen::MatrixXd::Ones(1, 2), Eigen::MatrixXd(1, 0));
  EXPECT_THROW(log_likelihood(p, two_z), ContractError);
  EXPECT_THROW(ParameterLayout::for_data(two_z, Variant::M1Star, 3), ConfigError);
  EXPECT_THROW(SurvivalDataset({1.0}, {2}, Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd(1, 0)), ContractError);
  EXPECT_THROW(SurvivalDataset({0.0}, {1}, Eigen::MatrixXd::Ones(1, 1), Eigen::MatrixXd(1, 0)), ContractError);
}

TEST(Likelihood, ParameterNames) {
  SurvivalDataset data({1.0}, {1}, Eigen::MatrixXd::Ones(1, 2), Eigen::MatrixXd::Ones(1, 1), {"a", "b"}, {"c"});
  const auto names = ParameterLayout::for_data(data, Variant::M2Star, 2).names(data.z_names(), data.x_names());
  const std::vector<std::string> expected{"psi.a", "psi.b", "phi.a", "phi.b", "beta.c", "xi.1", "xi.2"};
  EXPECT_EQ(names, expected);
}

TEST(Likelihood, BaselineOnlyExamples) {
  YpParameters p{vec({0.9}), vec({-0.4}), Eigen::VectorXd(0), BpBasis(4, 3.0),
                 BaselineCoefficients{BaselineKind::Hazard, vec({0.3, 0.6, 0.2, 0.8})}};
  const double h0 = bp_hazard(p.basis, p.baseline, 2.0);
  const double big_h0 = bp_cumulative(p.basis, p.baseline, 2.0);
  // A censored row at z = 0 next to an event far in the tail: split off the event's contribution.
  SurvivalDataset two({2.0, 3.0}, {0, 1}, Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd(2, 0));
  const double tail_event = std::log(tail_hazard(p.basis, p.baseline, 3.0)) - tail_cumulative(p.basis, p.baseline, 3.0);
  EXPECT_NEAR(log_likelihood(p, two) - tail_event, -big_h0, 1e-12);
  EXPECT_NEAR(log_likelihood(p, single(2.0, 1, 0.0)), std::log(h0) - big_h0, 1e-12);
}

TEST(Likelihood, ScoreAtTruthIsSmallOnLargeData) {
  // The generating baseline is smooth, so a degree-20 Bernstein fit of its cumulative
  // hazard stands in for the true coefficients.
  const SimulationDesign design = scenario_i();
  SimulationDesign large = design;
  large.n = 20000;
  const SurvivalDataset data = generate_dataset(large, tune_censoring_bound(design, 0.3), 0);
  const int m = 20;
  BpApproximation weibull{[&](double t) { return design.baseline.cumulative_hazard(t); }, data.tau_hat()};
  const YpParameters truth{design.psi, design.phi, Eigen::VectorXd(0), BpBasis(m, data.tau_hat()),
                           BaselineCoefficients{BaselineKind::Hazard, weibull.increments(m)}};
  const Eigen::VectorXd g = log_likelihood_gradient(truth, data);
  EXPECT_TRUE(g.allFinite());
  EXPECT_LE(g.head(2).norm() / static_cast<double>(data.n()), 0.05);
}

TEST(Likelihood, GradientStaysFiniteUnderBaselineShift) {
  RandomStream rng(28);
  SurvivalDataset data = random_dataset(rng, 40, 1, 0);
  YpParameters p = random_parameters(rng, 1, 0, 6, data.tau_hat(), BaselineKind::Hazard);
  p.phi = p.psi;
  Eigen::VectorXd previous = log_likelihood_gradient(p, data);
  for (int step = 1; step <= 20; ++step) {
    p.baseline.values *= std::exp(0.01);
    const Eigen::VectorXd g = log_likelihood_gradient(p, data);
    ASSERT_TRUE(g.allFinite());
    EXPECT_LT((g - previous).norm(), 0.1 * (1.0 + previous.norm()));
    previous = g;
  }
}
