#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/crossing.hpp"
#include "ypbp/dataset.hpp"
#include "ypbp/errors.hpp"
#include "ypbp/mcmc.hpp"
#include "ypbp/ml_fit.hpp"
#include "ypbp/parallel.hpp"
#include "ypbp/rng.hpp"
#include "ypbp/yp_model.hpp"

namespace ypbp {

// S0(t) = exp(-rate * t^shape).
struct WeibullBaseline {
  double shape = 1.5;
  double rate = 0.05;

  void validate() const {
    if (!(shape > 0.0) || !(rate > 0.0) || !std::isfinite(shape) || !std::isfinite(rate)) {
      throw ConfigError("Weibull baseline: shape and rate must be positive and finite");
    }
  }
  double cumulative_hazard(double t) const { return rate * std::pow(t, shape); }
  double survival(double t) const { return std::exp(-cumulative_hazard(t)); }
};

struct CovariateSpec {
  enum class Kind { Bernoulli, Normal };
  std::string name;
  Kind kind = Kind::Bernoulli;
  double probability = 0.5;  // Bernoulli only

  double draw(RandomStream& rng) const { return kind == Kind::Bernoulli ? (rng.bernoulli(probability) ? 1.0 : 0.0) : rng.normal(); }
};

struct SimulationDesign {
  std::string name;
  std::size_t n = 500;
  std::vector<CovariateSpec> z_columns;
  std::vector<CovariateSpec> x_columns;
  Eigen::VectorXd psi;
  Eigen::VectorXd phi;
  Eigen::VectorXd beta;
  WeibullBaseline baseline;
  std::optional<double> censoring_bound;  // nu; unset means tune to target_censoring
  double target_censoring = 0.30;
  int replications = 200;
  std::uint64_t seed = 1;

  void validate() const {
    if (n < 2) throw ConfigError("design: n must be at least 2");
    if (z_columns.empty()) throw ConfigError("design: at least one z covariate is required");
    if (psi.size() != static_cast<Eigen::Index>(z_columns.size()) || phi.size() != psi.size()) {
      throw ConfigError("design: psi and phi need one entry per z covariate");
    }
    if (beta.size() != static_cast<Eigen::Index>(x_columns.size())) {
      throw ConfigError("design: beta needs one entry per x covariate");
    }
    baseline.validate();
    if (censoring_bound && !(*censoring_bound > 0.0)) throw ConfigError("design: censoring bound must be positive");
    if (!censoring_bound && !(target_censoring > 0.0 && target_censoring < 1.0)) {
      throw ConfigError("design: target censoring rate must lie in (0, 1)");
    }
    if (replications < 2) throw ConfigError("design: at least 2 replications are required");
    for (const auto* block : {&z_columns, &x_columns}) {
      for (const auto& c : *block) {
        if (c.kind == CovariateSpec::Kind::Bernoulli && !(c.probability > 0.0 && c.probability < 1.0)) {
          throw ConfigError("design: Bernoulli probability must lie in (0, 1)");
        }
      }
    }
  }

  // One Bernoulli z column and no x block: the two groups z = 1 and z = 0.
  bool two_sample() const {
    return z_columns.size() == 1 && x_columns.empty() && z_columns.front().kind == CovariateSpec::Kind::Bernoulli;
  }

  YpParameters true_parameters_shell() const {
    return {psi, phi, beta, BpBasis(1, 1.0), BaselineCoefficients{BaselineKind::Hazard, Eigen::VectorXd::Ones(1)}};
  }
};

/// Two-sample design: z ~ Bernoulli(0.5), log lambda = 2 z, log theta = -z.
inline SimulationDesign scenario_i() {
  SimulationDesign d;
  d.name = "scenario-i";
  d.z_columns = {{"z1", CovariateSpec::Kind::Bernoulli, 0.5}};
  d.psi = Eigen::VectorXd::Constant(1, 2.0);
  d.phi = Eigen::VectorXd::Constant(1, -1.0);
  d.beta = Eigen::VectorXd(0);
  return d;
}

/// Four covariates. z3 and z4 have equal short- and long-term effects, so they
/// form the constant-effect block (beta = (1.5, -1.5)); original-formulation
/// fits move them back into z.
inline SimulationDesign scenario_ii() {
  SimulationDesign d;
  d.name = "scenario-ii";
  d.z_columns = {{"z1", CovariateSpec::Kind::Bernoulli, 0.5}, {"z2", CovariateSpec::Kind::Normal, 0.5}};
  d.x_columns = {{"z3", CovariateSpec::Kind::Bernoulli, 0.5}, {"z4", CovariateSpec::Kind::Normal, 0.5}};
  d.psi = (Eigen::VectorXd(2) << 2.0, -0.5).finished();
  d.phi = (Eigen::VectorXd(2) << -1.0, 1.0).finished();
  d.beta = (Eigen::VectorXd(2) << 1.5, -1.5).finished();
  return d;
}

inline SimulationDesign design_by_name(const std::string& name) {
  if (name == "scenario-i") return scenario_i();
  if (name == "scenario-ii") return scenario_ii();
  throw ConfigError("unknown scenario '" + name + "' (expected scenario-i or scenario-ii)");
}

namespace detail {

// log1p(c expm1(a)) for c > 0, a >= 0; the large-a branch avoids overflowing expm1.
inline double log1p_scaled_expm1(double c, double a) {
  return a < 30.0 ? std::log1p(c * std::expm1(a)) : a + std::log(c) + std::log1p((1.0 / c - 1.0) * std::exp(-a));
}

}  // namespace detail

/// Failure time with S(t | row) = u under the Weibull baseline:
/// R0 = (theta/lambda)(u^{-1/(theta w)} - 1), H0 = log1p(R0), t = (H0/rate)^{1/shape}.
inline double draw_failure_time(const SimulationDesign& design, const CovariateRow& row, double u) {
  if (!(u > 0.0 && u < 1.0)) throw ContractError("draw_failure_time: u must lie in (0, 1)");
  const YpParameters shell = design.true_parameters_shell();
  const RatioPair r = ratios(shell, row);
  const double w = constant_effect(shell, row);
  const double a = -std::log(u) / (r.theta * w);
  const double cumulative = detail::log1p_scaled_expm1(r.theta / r.lambda, a);
  return std::pow(cumulative / design.baseline.rate, 1.0 / design.baseline.shape);
}

/// Exact survival of the generating model, for checks against draws.
inline double generator_survival(const SimulationDesign& design, const CovariateRow& row, double t) {
  const YpParameters shell = design.true_parameters_shell();
  const RatioPair r = ratios(shell, row);
  const double w = constant_effect(shell, row);
  return std::exp(-r.theta * w * detail::log1p_scaled_expm1(r.lambda / r.theta, design.baseline.cumulative_hazard(t)));
}

struct CensoredSample {
  std::vector<double> time;
  std::vector<int> status;
};

// y = min(t, c) and status = 1{t <= c} with c ~ U(0, nu).
inline CensoredSample apply_censoring(std::span<const double> failure, double nu, RandomStream& rng) {
  if (!(nu > 0.0)) throw ContractError("apply_censoring: bound must be positive");
  CensoredSample out{std::vector<double>(failure.size()), std::vector<int>(failure.size())};
  for (std::size_t i = 0; i < failure.size(); ++i) {
    const double c = nu * rng.uniform();
    out.time[i] = std::min(failure[i], c);
    out.status[i] = failure[i] <= c ? 1 : 0;
  }
  return out;
}

namespace detail {

inline CovariateRow draw_row(const SimulationDesign& design, RandomStream& rng) {
  CovariateRow row{Eigen::VectorXd(static_cast<Eigen::Index>(design.z_columns.size())),
                   Eigen::VectorXd(static_cast<Eigen::Index>(design.x_columns.size()))};
  for (std::size_t j = 0; j < design.z_columns.size(); ++j) row.z[static_cast<Eigen::Index>(j)] = design.z_columns[j].draw(rng);
  for (std::size_t j = 0; j < design.x_columns.size(); ++j) row.x[static_cast<Eigen::Index>(j)] = design.x_columns[j].draw(rng);
  return row;
}

inline constexpr std::uint64_t kTuningStream = 0x7475'6e65ull;  // separate from replicate streams
inline constexpr std::size_t kTuningDraws = 100000;

}  // namespace detail

/// Bound nu of U(0, nu) censoring giving the target expected censoring rate.
///
/// Uses 1e5 pilot failure times from a dedicated stream; given the pilot times
/// the expected censored fraction mean(min(t, nu)) / nu is monotone in nu, and
/// is solved by bisection.
inline double tune_censoring_bound(const SimulationDesign& design, double target_rate) {
  if (!(target_rate > 0.0 && target_rate < 1.0)) {
    throw ContractError("tune_censoring_bound: target rate must lie strictly between 0 and 1");
  }
  RandomStream rng(design.seed, detail::kTuningStream);
  std::vector<double> pilot(detail::kTuningDraws);
  for (auto& t : pilot) {
    const CovariateRow row = detail::draw_row(design, rng);
    t = draw_failure_time(design, row, rng.uniform());
  }
  auto censored = [&](double nu) {
    double total = 0.0;
    for (double t : pilot) total += std::min(t, nu);
    return total / (static_cast<double>(pilot.size()) * nu);
  };
  std::vector<double> sorted = pilot;
  std::sort(sorted.begin(), sorted.end());
  double lo = sorted.front();
  const auto finite_end = std::find_if(sorted.begin(), sorted.end(), [](double t) { return !std::isfinite(t); });
  double hi = finite_end == sorted.begin() ? 1.0 : *(finite_end - 1);
  if (!(censored(lo) > target_rate) || !(censored(hi) < target_rate)) {
    while (!(censored(lo) > target_rate) && lo > 1e-300) lo *= 0.5;
    while (!(censored(hi) < target_rate) && hi < 1e300) hi *= 2.0;
  }
  if (!(censored(lo) > target_rate) || !(censored(hi) < target_rate)) {
    throw ContractError("tune_censoring_bound: target rate is not attainable");
  }
  for (int iter = 0; iter < 200 && hi - lo > 1e-12 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    (censored(mid) > target_rate ? lo : hi) = mid;
  }
  return 0.5 * (lo + hi);
}

inline double resolve_censoring_bound(const SimulationDesign& design) {
  return design.censoring_bound ? *design.censoring_bound : tune_censoring_bound(design, design.target_censoring);
}

/// Dataset of replicate r, drawn from the stream (seed, r). Row by row:
/// covariates in column order, the failure uniform, then the censoring uniform.
inline SurvivalDataset generate_dataset(const SimulationDesign& design, double nu, std::uint64_t replicate) {
  RandomStream rng(design.seed, replicate);
  const auto n = static_cast<Eigen::Index>(design.n);
  Eigen::MatrixXd z(n, static_cast<Eigen::Index>(design.z_columns.size()));
  Eigen::MatrixXd x(n, static_cast<Eigen::Index>(design.x_columns.size()));
  std::vector<double> time(design.n);
  std::vector<int> status(design.n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const CovariateRow row = detail::draw_row(design, rng);
    z.row(i) = row.z.transpose();
    x.row(i) = row.x.transpose();
    const double failure = draw_failure_time(design, row, rng.uniform());
    const double censor = nu * rng.uniform();
    time[static_cast<std::size_t>(i)] = std::min(failure, censor);
    status[static_cast<std::size_t>(i)] = failure <= censor ? 1 : 0;
  }
  std::vector<std::string> z_names, x_names;
  for (const auto& c : design.z_columns) z_names.push_back(c.name);
  for (const auto& c : design.x_columns) x_names.push_back(c.name);
  return SurvivalDataset(std::move(time), std::move(status), std::move(z), std::move(x), std::move(z_names), std::move(x_names));
}

/// Crossing time of the two generating survival curves (z = 1 against z = 0)
/// of a two-sample design, by bisection on the closed forms in the scale of
/// the baseline cumulative hazard.
inline std::optional<double> generator_crossing_time(const SimulationDesign& design) {
  if (!design.two_sample()) throw ContractError("generator_crossing_time: design is not a two-sample design");
  const double lambda = std::exp(design.psi[0]);
  const double theta = std::exp(design.phi[0]);
  // log S1 - log S0 as a function of H = H0(t).
  auto difference = [&](double h) { return -theta * detail::log1p_scaled_expm1(lambda / theta, h) + h; };
  double lo = 1e-8;
  double hi = lo;
  const int start_sign = difference(lo) > 0.0 ? 1 : -1;
  while (hi < 1e4 && (difference(hi) > 0.0 ? 1 : -1) == start_sign) hi *= 1.5;
  if ((difference(hi) > 0.0 ? 1 : -1) == start_sign) return std::nullopt;
  lo = hi / 1.5;
  for (int iter = 0; iter < 200 && hi - lo > 1e-15 * hi; ++iter) {
    const double mid = 0.5 * (lo + hi);
    ((difference(mid) > 0.0 ? 1 : -1) == start_sign ? lo : hi) = mid;
  }
  const double h = 0.5 * (lo + hi);
  return std::pow(h / design.baseline.rate, 1.0 / design.baseline.shape);
}

enum class Estimator { ML, Bayes };

inline const char* to_string(Estimator e) { return e == Estimator::ML ? "ml" : "bayes"; }

struct EstimatorConfig {
  Estimator estimator = Estimator::ML;
  FitConfig fit;
  PriorSpec prior;
  SamplerConfig sampler;
  double level = 0.95;
  int bootstrap = 0;  // crossing-time bootstrap replicates per ML fit; 0 skips t*
  int threads = 1;
};

struct McMetrics {
  std::string name;
  double truth = 0.0;
  double est = 0.0;       // mean estimate
  double se = 0.0;        // mean reported standard error
  double sde = 0.0;       // SD of the estimates, denominator R - 1
  double rb = 0.0;        // 100 (est - truth) / |truth|
  double coverage = 0.0;  // fraction of intervals containing the truth
  int used = 0;           // replicates entering the row
};

// What one replicate reports for one quantity.
struct ReplicateEstimate {
  double estimate = 0.0;
  double se = 0.0;
  Interval interval{0.0, 0.0};
};

struct ReplicateResult {
  bool ok = false;
  std::string failure;
  double censoring = 0.0;                    // realized censored fraction
  std::vector<ReplicateEstimate> parameters;  // regression coefficients
  std::optional<ReplicateEstimate> crossing;
};

struct McStudyResult {
  std::string design;
  Variant variant = Variant::M1;
  Estimator estimator = Estimator::ML;
  double nu = 0.0;
  std::optional<double> true_crossing;
  std::vector<std::string> names;  // regression coefficients, in fit order
  Eigen::VectorXd truth;
  std::vector<McMetrics> metrics;  // one per coefficient, then t* when present
  std::vector<ReplicateResult> replicates;
  int failures = 0;
  bool flagged = false;  // more than 10% of replicates failed
  double mean_censoring = 0.0;
};

/// est/se/sde/rb/coverage of one quantity over the replicates that report it.
inline McMetrics compute_metrics(const std::string& name, double truth, std::span<const ReplicateEstimate> values) {
  McMetrics m{name, truth};
  m.used = static_cast<int>(values.size());
  if (values.empty()) {
    m.est = m.se = m.sde = m.rb = m.coverage = std::numeric_limits<double>::quiet_NaN();
    return m;
  }
  double sum = 0.0, se_sum = 0.0;
  int covered = 0;
  for (const auto& v : values) {
    sum += v.estimate;
    se_sum += v.se;
    covered += v.interval.lower <= truth && truth <= v.interval.upper;
  }
  const double count = static_cast<double>(values.size());
  m.est = sum / count;
  m.se = se_sum / count;
  double ss = 0.0;
  for (const auto& v : values) ss += (v.estimate - m.est) * (v.estimate - m.est);
  m.sde = values.size() > 1 ? std::sqrt(ss / (count - 1.0)) : 0.0;
  m.rb = 100.0 * (m.est - truth) / std::fabs(truth);
  m.coverage = covered / count;
  return m;
}

// True regression coefficients in the order of the fitted layout.
inline Eigen::VectorXd design_truth(const SimulationDesign& design, Variant variant) {
  if (has_constant_block(variant)) {
    if (design.x_columns.empty()) throw ConfigError("design has no constant-effect block for a star variant");
    Eigen::VectorXd t(design.psi.size() * 2 + design.beta.size());
    t << design.psi, design.phi, design.beta;
    return t;
  }
  Eigen::VectorXd t(2 * (design.psi.size() + design.beta.size()));
  t << design.psi, design.beta, design.phi, design.beta;
  return t;
}

namespace detail {

inline ReplicateResult run_replicate(const SimulationDesign& design, const EstimatorConfig& config, double nu,
                                     std::uint64_t r, const std::optional<CrossingQuery>& crossing) {
  ReplicateResult out;
  const SurvivalDataset data = generate_dataset(design, nu, r);
  out.censoring = 1.0 - static_cast<double>(data.events()) / static_cast<double>(data.n());
  if (data.events() == 0) {
    out.failure = "no events";
    return out;
  }
  try {
    if (config.estimator == Estimator::ML) {
      const FitResult fit = fit_ml(data, config.fit);
      if (!fit.converged) {
        out.failure = std::string(to_string(fit.status)) + ": " + fit.diagnostic;
        return out;
      }
      const auto intervals = wald_interval(fit, config.level);
      const Eigen::VectorXd se = fit.standard_errors();
      for (Eigen::Index j = 0; j < fit.layout.regression_size(); ++j) {
        out.parameters.push_back({fit.natural[j], se[j], intervals[static_cast<std::size_t>(j)]});
      }
      if (crossing && config.bootstrap > 0) {
        BootstrapConfig boot{config.bootstrap, config.level, derive_seed(design.seed, r, 1), 1};
        CrossingQuery query = CrossingQuery::for_data(data, crossing->profile_a, crossing->profile_b);
        const CrossingEstimate est = bootstrap_crossing(data, fit, config.fit, query, boot);
        if (est.t_star && est.interval && !est.unreliable) out.crossing = ReplicateEstimate{*est.t_star, est.se, *est.interval};
      }
    } else {
      SamplerConfig sampler = config.sampler;
      sampler.seed = derive_seed(design.seed, r, 2);
      sampler.threads = 1;
      const PosteriorSample sample = sample_posterior(config.prior, data, config.fit, sampler);
      if (!sample.converged) {
        out.failure = "sampler did not converge (R-hat above threshold)";
        return out;
      }
      const auto summary = summarize(sample, config.level);
      for (Eigen::Index j = 0; j < sample.layout.regression_size(); ++j) {
        const auto& s = summary[static_cast<std::size_t>(j)];
        out.parameters.push_back({s.mean, s.sd, s.hpd});
      }
      if (crossing) {
        CrossingQuery query = CrossingQuery::for_data(data, crossing->profile_a, crossing->profile_b);
        const CrossingEstimate est = posterior_crossing(sample, query, config.level);
        if (est.t_star && est.interval && !est.unreliable) out.crossing = ReplicateEstimate{*est.t_star, est.se, *est.interval};
      }
    }
  } catch (const std::exception& e) {
    out.parameters.clear();
    out.failure = e.what();
    return out;
  }
  out.ok = true;
  return out;
}

}  // namespace detail

/// Monte Carlo study: R replicate datasets from the design, each fitted by
/// the configured estimator. Replicate r uses the stream (seed, r), so the
/// result does not depend on the thread count. Failed replicates are
/// excluded from the metrics and counted.
inline McStudyResult run_mc_study(const SimulationDesign& design, const EstimatorConfig& config) {
  design.validate();
  if (!(config.level > 0.0 && config.level < 1.0)) throw ConfigError("study: level must lie in (0, 1)");
  McStudyResult out;
  out.design = design.name;
  out.variant = config.fit.variant;
  out.estimator = config.estimator;
  out.nu = resolve_censoring_bound(design);
  out.truth = design_truth(design, config.fit.variant);

  std::vector<std::string> z_names, x_names;
  for (const auto& c : design.z_columns) z_names.push_back(c.name);
  for (const auto& c : design.x_columns) x_names.push_back(c.name);
  if (!has_constant_block(config.fit.variant)) {
    z_names.insert(z_names.end(), x_names.begin(), x_names.end());
    x_names.clear();
  }
  const ParameterLayout names_layout{static_cast<Eigen::Index>(z_names.size()), static_cast<Eigen::Index>(x_names.size()), 0,
                                     baseline_kind(config.fit.variant)};
  out.names = names_layout.names(z_names, x_names);

  std::optional<CrossingQuery> crossing;
  if (design.two_sample()) {
    out.true_crossing = generator_crossing_time(design);
    CrossingQuery q;
    q.profile_a = {Eigen::VectorXd::Ones(1), Eigen::VectorXd(0)};
    q.profile_b = {Eigen::VectorXd::Zero(1), Eigen::VectorXd(0)};
    if (out.true_crossing && (config.estimator == Estimator::Bayes || config.bootstrap > 0)) crossing = q;
  }

  out.replicates.resize(static_cast<std::size_t>(design.replications));
  parallel_for(out.replicates.size(), resolve_threads(config.threads), [&](std::size_t r) {
    out.replicates[r] = detail::run_replicate(design, config, out.nu, r, crossing);
  });

  double censoring = 0.0;
  for (const auto& rep : out.replicates) {
    censoring += rep.censoring;
    out.failures += !rep.ok;
  }
  out.mean_censoring = censoring / static_cast<double>(out.replicates.size());
  out.flagged = 10 * out.failures > design.replications;

  for (std::size_t j = 0; j < out.names.size(); ++j) {
    std::vector<ReplicateEstimate> values;
    for (const auto& rep : out.replicates) {
      if (rep.ok) values.push_back(rep.parameters[j]);
    }
    out.metrics.push_back(compute_metrics(out.names[j], out.truth[static_cast<Eigen::Index>(j)], values));
  }
  if (crossing) {
    std::vector<ReplicateEstimate> values;
    for (const auto& rep : out.replicates) {
      if (rep.ok && rep.crossing) values.push_back(*rep.crossing);
    }
    out.metrics.push_back(compute_metrics("t*", *out.true_crossing, values));
  }
  return out;
}

}  // namespace ypbp
