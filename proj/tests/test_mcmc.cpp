#include <chrono>
#include <cmath>
#include <numbers>

#include <boost/math/distributions/normal.hpp>
#include <gtest/gtest.h>

#include "test_support.hpp"
#include "ypbp/mcmc.hpp"
#include "ypbp/simulation.hpp"

using namespace ypbp;
using ypbp::testing::random_dataset;
using ypbp::testing::random_parameters;
using ypbp::testing::vec;

namespace {

Eigen::VectorXd column_means(const Eigen::MatrixXd& m) { return m.colwise().mean().transpose(); }

Eigen::MatrixXd column_covariance(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd centered = m.rowwise() - m.colwise().mean();
  return centered.transpose() * centered / static_cast<double>(m.rows() - 1);
}

}  // namespace

TEST(Prior, Examples) {
  const ParameterLayout layout{1, 0, 2, BaselineKind::Hazard};
  const PriorSpec prior;
  const double log_norm = -std::log(4.0) - 0.5 * std::log(2.0 * std::numbers::pi);
  EXPECT_NEAR(log_prior(prior, layout, Eigen::VectorXd::Zero(4)), 4 * log_norm, 1e-14);
  Eigen::VectorXd g;
  EXPECT_NEAR(log_prior(prior, layout, vec({4.0, 0.0, 0.0, 0.0}), &g), 4 * log_norm - 0.5, 1e-14);
  EXPECT_NEAR(g[0], -0.25, 1e-15);
  boost::math::normal_distribution<double> oracle(0.3, 2.5);
  EXPECT_NEAR((NormalPrior{0.3, 2.5}.log_density(-1.7)), std::log(boost::math::pdf(oracle, -1.7)), 1e-13);
  PriorSpec bad;
  bad.phi.sd = 0.0;
  EXPECT_THROW(log_prior(bad, layout, Eigen::VectorXd::Zero(4)), ContractError);
  EXPECT_THROW(log_prior(prior, layout, Eigen::VectorXd::Zero(3)), ContractError);
}

TEST(Prior, NearFlatWidensRegressionBlocksOnly) {
  const PriorSpec flat = PriorSpec::near_flat();
  EXPECT_EQ(flat.psi.sd, 1e6);
  EXPECT_EQ(flat.phi.sd, 1e6);
  EXPECT_EQ(flat.beta.sd, 1e6);
  EXPECT_EQ(flat.baseline.sd, PriorSpec{}.baseline.sd);
}

TEST(Posterior, IsLikelihoodPlusPrior) {
  RandomStream rng(31);
  const SurvivalDataset data = random_dataset(rng, 30, 2, 0);
  const YpParameters p = random_parameters(rng, 2, 0, 5, data.tau_hat(), BaselineKind::Odds);
  const ParameterLayout layout{2, 0, 5, BaselineKind::Odds};
  const PriorSpec prior;
  EXPECT_NEAR(log_posterior(prior, p, data), log_likelihood(p, data) + log_prior(prior, layout, layout.pack(p)), 1e-10);
}

TEST(Posterior, VagueMapMatchesMle) {
  const SurvivalDataset data = generate_dataset(scenario_i(), tune_censoring_bound(scenario_i(), 0.3), 4);
  PriorSpec vague = PriorSpec::near_flat();
  vague.baseline.sd = 1e6;
  const FitResult mle = fit_ml(data, FitConfig{});
  const FitResult map = fit_map(vague, data, FitConfig{});
  ASSERT_TRUE(mle.converged && map.converged);
  EXPECT_NEAR(map.natural[0], mle.natural[0], 1e-2);
  EXPECT_NEAR(map.natural[1], mle.natural[1], 1e-2);
}

TEST(Nuts, CorrelatedNormal) {
  const int d = 5;
  Eigen::MatrixXd cov(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) cov(i, j) = std::pow(0.8, std::abs(i - j)) * (1.0 + i) * (1.0 + j) / 4.0;
  const Eigen::VectorXd mean = vec({1.0, -2.0, 0.5, 3.0, 0.0});
  const Eigen::MatrixXd precision = cov.inverse();
  auto log_density = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    const Eigen::VectorXd r = u - mean;
    if (grad) *grad = -precision * r;
    return -0.5 * r.dot(precision * r);
  };
  SamplerConfig config;
  config.iterations = 6000;
  config.warmup = 1000;
  RandomStream rng(7);
  const ChainOutput out = run_nuts(log_density, Eigen::VectorXd::Zero(d), Eigen::MatrixXd::Identity(d, d), config, rng);
  ASSERT_EQ(out.draws.rows(), 5000);
  const Eigen::VectorXd m = column_means(out.draws);
  const Eigen::MatrixXd c = column_covariance(out.draws);
  for (int i = 0; i < d; ++i) {
    const double sd = std::sqrt(cov(i, i));
    EXPECT_NEAR(m[i], mean[i], 0.1 * sd) << i;
    EXPECT_NEAR(std::sqrt(c(i, i)), sd, 0.08 * sd) << i;
  }
  EXPECT_EQ(out.divergences, 0);
  EXPECT_GT(out.acceptance, 0.6);
}

TEST(Nuts, HeavyScaleDifferencesAreAdapted) {
  // Independent normals with scales 1e-3 and 1e3: the metric adaptation must find both.
  const Eigen::VectorXd scale = vec({1e-3, 1.0, 1e3});
  auto log_density = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    const Eigen::VectorXd r = u.cwiseQuotient(scale);
    if (grad) *grad = -r.cwiseQuotient(scale);
    return -0.5 * r.squaredNorm();
  };
  SamplerConfig config;
  config.iterations = 4000;
  config.warmup = 1500;
  RandomStream rng(8);
  const ChainOutput out = run_nuts(log_density, Eigen::VectorXd::Zero(3), Eigen::MatrixXd::Identity(3, 3), config, rng);
  const Eigen::MatrixXd c = column_covariance(out.draws);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(std::sqrt(c(i, i)) / scale[i], 1.0, 0.1) << i;
}

TEST(Hpd, Examples) {
  const std::vector<double> draws{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
  const Interval all = hpd_interval(draws, 0.9);
  EXPECT_EQ(all.lower, 1.0);
  EXPECT_EQ(all.upper, 9.0);
  const std::vector<double> skewed{0.0, 0.1, 0.2, 0.3, 10.0};
  const Interval i = hpd_interval(skewed, 0.8);
  EXPECT_EQ(i.lower, 0.0);
  EXPECT_EQ(i.upper, 0.3);
  const std::vector<double> constant(20, 4.2);
  const Interval c = hpd_interval(constant, 0.95);
  EXPECT_EQ(c.lower, 4.2);
  EXPECT_EQ(c.upper, 4.2);
  EXPECT_THROW(hpd_interval(std::vector<double>{1.0}, 0.9), ContractError);
  EXPECT_THROW(hpd_interval(draws, 1.0), ContractError);
}

TEST(Hpd, NoWiderThanEqualTailed) {
  RandomStream rng(9);
  std::vector<double> draws(4000);
  for (auto& v : draws) v = std::exp(rng.normal());
  const Interval h = hpd_interval(draws, 0.95);
  std::vector<double> sorted = draws;
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted[static_cast<std::size_t>(0.025 * 4000)];
  const double hi = sorted[static_cast<std::size_t>(0.975 * 4000) - 1];
  EXPECT_LE(h.upper - h.lower, hi - lo);
  const auto covered = std::count_if(draws.begin(), draws.end(), [&](double v) { return v >= h.lower && v <= h.upper; });
  EXPECT_GE(covered, 3800);
}

TEST(Diagnostics, Ar1Chains) {
  const double rho = 0.9;
  const int n = 20000;
  std::vector<std::vector<double>> chains(4);
  for (int c = 0; c < 4; ++c) {
    RandomStream rng(50, static_cast<std::uint64_t>(c));
    double v = rng.normal() / std::sqrt(1 - rho * rho);
    for (int i = 0; i < n; ++i) {
      v = rho * v + rng.normal();
      chains[static_cast<std::size_t>(c)].push_back(v);
    }
  }
  const double expected_ess = 4.0 * n * (1 - rho) / (1 + rho);
  EXPECT_NEAR(effective_sample_size(chains) / expected_ess, 1.0, 0.25);
  EXPECT_LT(split_rhat(chains), 1.01);
  // Shift one chain: R-hat must flag it.
  for (auto& v : chains[0]) v += 5.0;
  EXPECT_GT(split_rhat(chains), 1.1);
}

TEST(Sampler, DeterministicAndThreadIndependent) {
  const SurvivalDataset data = generate_dataset(scenario_i(), tune_censoring_bound(scenario_i(), 0.3), 11);
  SamplerConfig config;
  config.chains = 2;
  config.iterations = 300;
  config.warmup = 150;
  config.seed = 5;
  const PosteriorSample a = sample_posterior(PriorSpec{}, data, FitConfig{}, config);
  config.threads = 2;
  const PosteriorSample b = sample_posterior(PriorSpec{}, data, FitConfig{}, config);
  EXPECT_EQ(a.draws, b.draws);
  EXPECT_EQ(a.draws.rows(), 300);
  EXPECT_EQ(a.chain.size(), 300u);
  EXPECT_EQ(a.chain.back(), 1);
  const auto summary = summarize(a, 0.95);
  EXPECT_EQ(summary.front().name, "psi.z1");
  for (const auto& s : summary) EXPECT_LE(s.hpd.lower, s.hpd.upper);
}

TEST(Sampler, ConfigErrors) {
  SamplerConfig config;
  config.warmup = config.iterations;
  EXPECT_THROW(config.validate(), ContractError);
  config = SamplerConfig{};
  config.chains = 0;
  EXPECT_THROW(config.validate(), ContractError);
}

TEST(Sampler, ScenarioIReplicates) {
  const SimulationDesign design = scenario_i();
  const double nu = tune_censoring_bound(design, 0.3);
  int flagged = 0, total = 0, within = 0;
  for (std::uint64_t r = 0; r < 10; ++r) {
    SamplerConfig config;
    config.seed = 100 + r;
    const PosteriorSample s = sample_posterior(PriorSpec{}, generate_dataset(design, nu, 300 + r), FitConfig{}, config);
    flagged += static_cast<int>((s.rhat.array() > kRhatThreshold).count());
    total += static_cast<int>(s.rhat.size());
    const auto summary = summarize(s, 0.95);
    within += std::fabs(summary[0].mean - 2.0) <= 3.0 * summary[0].sd;
  }
  EXPECT_LE(flagged, static_cast<int>(0.05 * total));
  EXPECT_GE(within, 9);
}

TEST(Hpd, UniformAndNormalExamples) {
  std::vector<double> integers(100);
  for (int k = 0; k < 100; ++k) integers[static_cast<std::size_t>(k)] = k + 1;
  const Interval i = hpd_interval(integers, 0.95);
  EXPECT_EQ(i.upper - i.lower, 94.0);
  RandomStream rng(12);
  std::vector<double> normal(100000);
  for (auto& v : normal) v = rng.normal();
  const Interval n = hpd_interval(normal, 0.95);
  EXPECT_NEAR(n.lower, -1.959963984540054, 0.05);
  EXPECT_NEAR(n.upper, 1.959963984540054, 0.05);
}

TEST(Nuts, PurePriorTarget) {
  // No data term: draws must reproduce the prior of every block.
  PriorSpec prior;
  prior.psi = {0.5, 2.0};
  prior.phi = {-1.0, 0.5};
  prior.baseline = {0.2, 1.5};
  const ParameterLayout layout{1, 0, 3, BaselineKind::Hazard};
  auto log_density = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) { return log_prior(prior, layout, u, grad); };
  SamplerConfig config;
  config.iterations = 5000;
  config.warmup = 1000;
  RandomStream rng(13);
  const ChainOutput out = run_nuts(log_density, Eigen::VectorXd::Zero(5), Eigen::MatrixXd::Identity(5, 5), config, rng);
  std::vector<std::vector<double>> single(1);
  for (Eigen::Index j = 0; j < 5; ++j) {
    const NormalPrior& block = j == 0 ? prior.psi : j == 1 ? prior.phi : prior.baseline;
    const Eigen::VectorXd col = out.draws.col(j);
    single[0].assign(col.data(), col.data() + col.size());
    const double mcse = block.sd / std::sqrt(effective_sample_size(single));
    const double sd = std::sqrt((col.array() - col.mean()).square().sum() / static_cast<double>(col.size() - 1));
    EXPECT_NEAR(col.mean(), block.mean, 3.0 * mcse) << j;
    EXPECT_NEAR(sd / block.sd, 1.0, 0.10) << j;
  }
}

TEST(Posterior, ChangingOnlyPriorShiftsByPriorDelta) {
  RandomStream rng(32);
  const SurvivalDataset data = random_dataset(rng, 30, 1, 0);
  const YpParameters p = random_parameters(rng, 1, 0, 4, data.tau_hat(), BaselineKind::Hazard);
  const ParameterLayout layout{1, 0, 4, BaselineKind::Hazard};
  PriorSpec a, b;
  b.psi = {1.0, 0.5};
  EXPECT_NEAR(log_posterior(b, p, data) - log_posterior(a, p, data),
              log_prior(b, layout, layout.pack(p)) - log_prior(a, layout, layout.pack(p)), 1e-10);
  SurvivalDataset censored({1.0, 2.0}, {0, 0}, Eigen::MatrixXd::Ones(2, 1), Eigen::MatrixXd(2, 0));
  YpParameters q{vec({0.0}), vec({0.0}), Eigen::VectorXd(0), BpBasis(2, 2.0), BaselineCoefficients{BaselineKind::Hazard, vec({1.0, 1.0})}};
  EXPECT_THROW(log_posterior(a, q, censored), ContractError);
}
