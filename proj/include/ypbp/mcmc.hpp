#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/dataset.hpp"
#include "ypbp/errors.hpp"
#include "ypbp/likelihood.hpp"
#include "ypbp/ml_fit.hpp"
#include "ypbp/parallel.hpp"
#include "ypbp/rng.hpp"

namespace ypbp {

struct NormalPrior {
  double mean = 0.0;
  double sd = 4.0;

  double log_density(double x) const {
    const double r = (x - mean) / sd;
    return -0.5 * r * r - std::log(sd) - 0.5 * std::log(2.0 * std::numbers::pi);
  }
};

/// Independent normal priors per block; the baseline prior acts on the log
/// coefficients.
struct PriorSpec {
  NormalPrior psi;
  NormalPrior phi;
  NormalPrior beta;
  NormalPrior baseline;

  // Regression blocks with standard deviation `sd`; the log-baseline prior keeps
  // its default. Those coefficients are nuisance parameters whose likelihood is
  // flat towards zero, so a vague prior there leaves the posterior improper in
  // practice.
  static PriorSpec near_flat(double sd = 1e6) {
    PriorSpec prior;
    prior.psi.sd = prior.phi.sd = prior.beta.sd = sd;
    return prior;
  }

  void validate() const {
    for (const NormalPrior* prior : {&psi, &phi, &beta, &baseline}) {
      if (!(prior->sd > 0.0) || !std::isfinite(prior->sd) || !std::isfinite(prior->mean)) {
        throw ContractError("prior: every block needs a finite mean and a positive standard deviation");
      }
    }
  }
};

namespace detail {

inline const NormalPrior& prior_block(const PriorSpec& prior, const ParameterLayout& layout, Eigen::Index j) {
  if (j < layout.phi_offset()) return prior.psi;
  if (j < layout.beta_offset()) return prior.phi;
  if (j < layout.baseline_offset()) return prior.beta;
  return prior.baseline;
}

}  // namespace detail

/// Sum of the independent normal log-densities over the unconstrained vector.
inline double log_prior(const PriorSpec& prior, const ParameterLayout& layout, const Eigen::VectorXd& u,
                        Eigen::VectorXd* gradient = nullptr) {
  if (u.size() != layout.size()) throw ContractError("log_prior: parameter vector has the wrong length");
  prior.validate();
  double total = 0.0;
  if (gradient) gradient->resize(u.size());
  for (Eigen::Index j = 0; j < u.size(); ++j) {
    const NormalPrior& block = detail::prior_block(prior, layout, j);
    total += block.log_density(u[j]);
    if (gradient) (*gradient)[j] = -(u[j] - block.mean) / (block.sd * block.sd);
  }
  return total;
}

inline double log_posterior(const PriorSpec& prior, const YpParameters& params, const SurvivalDataset& data) {
  const double loglik = log_likelihood(params, data);
  if (!std::isfinite(loglik)) return loglik;
  const ParameterLayout layout = detail::layout_of(params, data);
  return loglik + log_prior(prior, layout, layout.pack(params));
}

/// Posterior mode by BFGS on the unconstrained scale. The covariance fields
/// hold the inverse negative Hessian of the log posterior.
inline FitResult fit_map(const PriorSpec& prior, const SurvivalDataset& input, const FitConfig& config) {
  prior.validate();
  input.require_events();
  const SurvivalDataset data = dataset_for_variant(input, config.variant);
  const int degree = config.degree > 0 ? config.degree : default_degree(data.n());
  const ParameterLayout layout = ParameterLayout::for_data(data, config.variant, degree);
  FitConfig resolved = config;
  resolved.degree = degree;
  return detail::fit_penalized(data, resolved, [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    return log_prior(prior, layout, u, grad);
  });
}

struct SamplerConfig {
  int chains = 4;
  int iterations = 2000;  // per chain, warmup included
  int warmup = 1000;
  std::uint64_t seed = 1;
  double target_acceptance = 0.8;
  int max_depth = 10;
  int threads = 1;

  void validate() const {
    if (chains < 1) throw ContractError("sampler: at least one chain is required");
    if (warmup < 0 || iterations <= warmup) throw ContractError("sampler: iterations must exceed warmup");
    if (!(target_acceptance > 0.0 && target_acceptance < 1.0)) {
      throw ContractError("sampler: target acceptance must lie in (0, 1)");
    }
    if (max_depth < 1) throw ContractError("sampler: max_depth must be positive");
  }
};

// Post-warmup output of one chain.
struct ChainOutput {
  Eigen::MatrixXd draws;  // kept iterations x dimension
  double acceptance = 0.0;  // mean acceptance statistic
  int divergences = 0;
  double mean_depth = 0.0;
  double step_size = 0.0;
};

namespace detail {

inline double log_sum_exp(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log1p(std::exp(-std::fabs(a - b)));
}

// No-U-turn criterion between two momenta spanning a trajectory with momentum sum rho.
inline bool no_u_turn(const Eigen::VectorXd& a, const Eigen::VectorXd& b, const Eigen::VectorXd& rho) {
  return a.dot(rho) > 0.0 && b.dot(rho) > 0.0;
}

/// Multinomial no-U-turn sampler on y, where the target coordinates are
/// u = L y with L the Cholesky factor of the current metric. In y the metric
/// is the identity.
template <class LogDensity>
class NutsChain {
 public:
  struct Point {
    Eigen::VectorXd y, p, grad;
    double logp = 0.0;
  };

  NutsChain(const LogDensity& log_density, RandomStream& rng, int max_depth)
      : log_density_(log_density), rng_(rng), max_depth_(max_depth) {}

  void set_metric(const Eigen::MatrixXd& covariance, const Eigen::VectorXd& u) {
    Eigen::LLT<Eigen::MatrixXd> llt(covariance);
    if (llt.info() == Eigen::Success) {
      chol_ = llt.matrixL();
    } else {
      chol_ = covariance.diagonal().cwiseMax(1e-12).cwiseSqrt().asDiagonal();
    }
    current_.y = chol_.triangularView<Eigen::Lower>().solve(u);
    evaluate(current_);
    if (!std::isfinite(current_.logp)) throw ContractError("sampler: log density is not finite at the chain state");
  }

  Eigen::VectorXd position() const { return chol_ * current_.y; }
  Eigen::Index dimension() const { return current_.y.size(); }

  // Doubles or halves from `step` until the one-step acceptance crosses 0.8.
  double reasonable_step(double step) {
    Point z = current_;
    draw_momentum(z);
    const double h0 = hamiltonian(z);
    Point trial = z;
    leapfrog(trial, step);
    double delta = h0 - hamiltonian(trial);
    if (!std::isfinite(delta)) delta = -std::numeric_limits<double>::infinity();
    const int direction = delta > std::log(0.8) ? 1 : -1;
    for (int i = 0; i < 100; ++i) {
      trial = z;
      draw_momentum(trial);
      const double h = hamiltonian(trial);
      leapfrog(trial, step);
      double d = h - hamiltonian(trial);
      if (!std::isfinite(d)) d = -std::numeric_limits<double>::infinity();
      if ((direction == 1 && !(d > std::log(0.8))) || (direction == -1 && !(d < std::log(0.8)))) break;
      step = direction == 1 ? 2.0 * step : 0.5 * step;
      if (step > 1e7 || step < 1e-12) break;
    }
    return step;
  }

  struct Transition {
    double accept_stat;
    int depth;
    bool divergent;
  };

  Transition transition(double step) {
    draw_momentum(current_);
    const double h0 = hamiltonian(current_);
    Point left = current_, right = current_;
    Point sample = current_;
    Eigen::VectorXd rho = current_.p;
    double log_weight = 0.0;
    double metro_sum = 0.0;
    int leapfrogs = 0;
    bool divergent = false;
    int depth = 0;
    while (depth < max_depth_) {
      const int direction = rng_.uniform() > 0.5 ? 1 : -1;
      Point& edge = direction == 1 ? right : left;
      const Eigen::VectorXd old_near = edge.p;
      const Eigen::VectorXd old_far = direction == 1 ? left.p : right.p;
      Subtree sub;
      const bool valid = build(depth, edge, direction * step, h0, sub, leapfrogs, metro_sum, divergent);
      if (!valid) break;
      ++depth;
      if (sub.log_weight > log_weight || rng_.uniform() < std::exp(sub.log_weight - log_weight)) {
        sample = sub.proposal;
      }
      log_weight = log_sum_exp(log_weight, sub.log_weight);
      const Eigen::VectorXd rho_old = rho;
      rho += sub.rho;
      bool persist = no_u_turn(old_far, sub.p_end, rho);
      persist = persist && no_u_turn(old_far, sub.p_begin, rho_old + sub.p_begin);
      persist = persist && no_u_turn(old_near, sub.p_end, sub.rho + old_near);
      if (!persist) break;
    }
    current_ = sample;
    return {leapfrogs > 0 ? metro_sum / leapfrogs : 0.0, depth, divergent};
  }

 private:
  struct Subtree {
    Point proposal;
    Eigen::VectorXd p_begin, p_end, rho;
    double log_weight = -std::numeric_limits<double>::infinity();
  };

  void evaluate(Point& z) const {
    const Eigen::VectorXd u = chol_ * z.y;
    Eigen::VectorXd grad_u;
    z.logp = log_density_(u, &grad_u);
    if (std::isfinite(z.logp) && grad_u.allFinite()) {
      z.grad = chol_.transpose() * grad_u;
    } else {
      z.logp = -std::numeric_limits<double>::infinity();
      z.grad = Eigen::VectorXd::Zero(z.y.size());
    }
  }

  void draw_momentum(Point& z) {
    z.p.resize(z.y.size());
    for (Eigen::Index j = 0; j < z.p.size(); ++j) z.p[j] = rng_.normal();
  }

  static double hamiltonian(const Point& z) { return -z.logp + 0.5 * z.p.squaredNorm(); }

  void leapfrog(Point& z, double step) const {
    z.p += 0.5 * step * z.grad;
    z.y += step * z.p;
    evaluate(z);
    z.p += 0.5 * step * z.grad;
  }

  // Extends `edge` by 2^depth leapfrog steps; false when the subtree turns
  // back on itself or diverges.
  bool build(int depth, Point& edge, double step, double h0, Subtree& out, int& leapfrogs, double& metro_sum,
             bool& divergent) {
    if (depth == 0) {
      leapfrog(edge, step);
      ++leapfrogs;
      double h = hamiltonian(edge);
      if (!std::isfinite(h)) h = std::numeric_limits<double>::infinity();
      constexpr double kMaxEnergyError = 1000.0;
      if (h - h0 > kMaxEnergyError) divergent = true;
      out.log_weight = h0 - h;
      metro_sum += h0 - h > 0.0 ? 1.0 : std::exp(h0 - h);
      out.proposal = edge;
      out.p_begin = edge.p;
      out.p_end = edge.p;
      out.rho = edge.p;
      return !divergent;
    }
    Subtree first;
    if (!build(depth - 1, edge, step, h0, first, leapfrogs, metro_sum, divergent)) return false;
    Subtree second;
    if (!build(depth - 1, edge, step, h0, second, leapfrogs, metro_sum, divergent)) return false;
    out.log_weight = log_sum_exp(first.log_weight, second.log_weight);
    out.proposal = rng_.uniform() < std::exp(second.log_weight - out.log_weight) ? second.proposal : first.proposal;
    out.p_begin = first.p_begin;
    out.p_end = second.p_end;
    out.rho = first.rho + second.rho;
    bool persist = no_u_turn(first.p_begin, second.p_end, out.rho);
    persist = persist && no_u_turn(first.p_begin, second.p_begin, first.rho + second.p_begin);
    persist = persist && no_u_turn(first.p_end, second.p_end, second.rho + first.p_end);
    return persist;
  }

  const LogDensity& log_density_;
  RandomStream& rng_;
  int max_depth_;
  Eigen::MatrixXd chol_;
  Point current_;
};

// Nesterov dual averaging of the log step size towards a target acceptance.
struct DualAveraging {
  double target;
  double mu = 0.0;
  double log_step = 0.0;
  double log_step_bar = 0.0;
  double h_bar = 0.0;
  int count = 0;

  void restart(double step) {
    mu = std::log(10.0 * step);
    log_step = std::log(step);
    log_step_bar = 0.0;
    h_bar = 0.0;
    count = 0;
  }
  double update(double accept_stat) {
    constexpr double kGamma = 0.05, kT0 = 10.0, kKappa = 0.75;
    ++count;
    const double eta = 1.0 / (count + kT0);
    h_bar = (1.0 - eta) * h_bar + eta * (target - accept_stat);
    log_step = mu - std::sqrt(static_cast<double>(count)) / kGamma * h_bar;
    const double weight = std::pow(static_cast<double>(count), -kKappa);
    log_step_bar = weight * log_step + (1.0 - weight) * log_step_bar;
    return std::exp(log_step);
  }
  double final_step() const { return std::exp(log_step_bar); }
};

// Ends of the metric-estimation windows inside warmup: a fast initial
// buffer, doubling slow windows, and a fast terminal buffer.
inline std::vector<int> metric_windows(int warmup) {
  int init = 75, term = 50, base = 25;
  if (warmup < init + term + base) {
    init = static_cast<int>(0.15 * warmup);
    term = static_cast<int>(0.1 * warmup);
    base = warmup - init - term;
  }
  std::vector<int> ends;
  if (base <= 0) return ends;
  const int last = warmup - term;
  int start = init;
  int size = base;
  while (start < last) {
    int end = start + size;
    if (end + 2 * size > last) end = last;
    ends.push_back(end);
    start = end;
    size *= 2;
  }
  return ends;
}

}  // namespace detail

/// One chain of the no-U-turn sampler with warmup adaptation.
///
/// LogDensity signature: double f(const Eigen::VectorXd& u, Eigen::VectorXd* grad)
/// with grad always requested. Warmup tunes the step size by dual averaging
/// and re-estimates a dense metric from the draws of each slow window; both
/// are frozen for the kept iterations.
template <class LogDensity>
ChainOutput run_nuts(const LogDensity& log_density, const Eigen::VectorXd& start,
                     const Eigen::MatrixXd& initial_covariance, const SamplerConfig& config, RandomStream& rng) {
  const Eigen::Index d = start.size();
  detail::NutsChain<LogDensity> chain(log_density, rng, config.max_depth);
  chain.set_metric(initial_covariance, start);
  double step = chain.reasonable_step(1.0);
  detail::DualAveraging adapt{config.target_acceptance};
  adapt.restart(step);

  const std::vector<int> windows = detail::metric_windows(config.warmup);
  std::size_t window = 0;
  int window_start = windows.empty() ? config.warmup : (config.warmup < 150 ? static_cast<int>(0.15 * config.warmup) : 75);
  std::vector<Eigen::VectorXd> window_draws;

  ChainOutput out;
  out.draws.resize(config.iterations - config.warmup, d);
  double accept_total = 0.0;
  double depth_total = 0.0;
  for (int iter = 0; iter < config.iterations; ++iter) {
    const auto t = chain.transition(step);
    if (iter < config.warmup) {
      step = adapt.update(t.accept_stat);
      if (iter >= window_start && window < windows.size()) {
        window_draws.push_back(chain.position());
        if (iter + 1 == windows[window]) {
          const auto count = static_cast<Eigen::Index>(window_draws.size());
          Eigen::VectorXd mean = Eigen::VectorXd::Zero(d);
          for (const auto& v : window_draws) mean += v;
          mean /= static_cast<double>(count);
          Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(d, d);
          for (const auto& v : window_draws) cov += (v - mean) * (v - mean).transpose();
          cov /= static_cast<double>(std::max<Eigen::Index>(1, count - 1));
          const double weight = static_cast<double>(count) / (count + 5.0);
          cov = weight * cov + (1.0 - weight) * 1e-3 * Eigen::MatrixXd::Identity(d, d);
          chain.set_metric(cov, chain.position());
          window_draws.clear();
          ++window;
          step = chain.reasonable_step(step);
          adapt.restart(step);
        }
      }
      if (iter + 1 == config.warmup) step = adapt.final_step();
    } else {
      out.draws.row(iter - config.warmup) = chain.position().transpose();
      accept_total += t.accept_stat;
      depth_total += t.depth;
      out.divergences += t.divergent;
    }
  }
  const double kept = static_cast<double>(config.iterations - config.warmup);
  out.acceptance = accept_total / kept;
  out.mean_depth = depth_total / kept;
  out.step_size = step;
  return out;
}

/// Split R-hat for one parameter: every chain cut into halves, then the
/// between/within variance ratio over the 2 * chains sequences.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::span<const double>> halves;
  for (const auto& chain : chains) {
    const std::size_t half = chain.size() / 2;
    if (half < 2) throw ContractError("split_rhat: chains need at least 4 draws");
    halves.emplace_back(chain.data(), half);
    halves.emplace_back(chain.data() + chain.size() - half, half);
  }
  const double n = static_cast<double>(halves.front().size());
  std::vector<double> means;
  double within = 0.0;
  for (auto h : halves) {
    double mean = 0.0;
    for (double v : h) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : h) var += (v - mean) * (v - mean);
    within += var / (n - 1.0);
    means.push_back(mean);
  }
  within /= static_cast<double>(halves.size());
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= static_cast<double>(means.size());
  double between = 0.0;
  for (double mu : means) between += (mu - grand) * (mu - grand);
  between *= n / static_cast<double>(means.size() - 1);
  if (!(within > 0.0)) return between > 0.0 ? std::numeric_limits<double>::infinity() : 1.0;
  const double pooled = (n - 1.0) / n * within + between / n;
  return std::sqrt(pooled / within);
}

/// Multi-chain effective sample size with Geyer's initial positive, monotone
/// sequence truncation of the combined autocorrelations.
inline double effective_sample_size(const std::vector<std::vector<double>>& chains) {
  const std::size_t m = chains.size();
  const std::size_t n = chains.front().size();
  if (n < 4) throw ContractError("effective_sample_size: chains need at least 4 draws");
  std::vector<double> means(m), variances(m);
  std::vector<std::vector<double>> acov(m, std::vector<double>(n, 0.0));
  for (std::size_t c = 0; c < m; ++c) {
    const auto& x = chains[c];
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(n);
    means[c] = mean;
    for (std::size_t lag = 0; lag < n; ++lag) {
      double sum = 0.0;
      for (std::size_t i = 0; i + lag < n; ++i) sum += (x[i] - mean) * (x[i + lag] - mean);
      acov[c][lag] = sum / static_cast<double>(n);
    }
    variances[c] = acov[c][0] * static_cast<double>(n) / static_cast<double>(n - 1);
  }
  double within = 0.0;
  for (double v : variances) within += v;
  within /= static_cast<double>(m);
  double grand = 0.0;
  for (double mu : means) grand += mu;
  grand /= static_cast<double>(m);
  double between = 0.0;
  if (m > 1) {
    for (double mu : means) between += (mu - grand) * (mu - grand);
    between /= static_cast<double>(m - 1);
  }
  const double var_plus = within * (static_cast<double>(n) - 1.0) / static_cast<double>(n) + between;
  if (!(var_plus > 0.0)) return static_cast<double>(m * n);

  auto rho = [&](std::size_t lag) {
    double mean_acov = 0.0;
    for (std::size_t c = 0; c < m; ++c) mean_acov += acov[c][lag];
    mean_acov /= static_cast<double>(m);
    return 1.0 - (within - mean_acov) / var_plus;
  };
  double tau = -1.0;
  double previous_pair = std::numeric_limits<double>::infinity();
  for (std::size_t t = 0; t + 1 < n; t += 2) {
    double pair = rho(t) + rho(t + 1);
    if (!(pair > 0.0)) break;
    pair = std::min(pair, previous_pair);
    tau += 2.0 * pair;
    previous_pair = pair;
  }
  tau = std::max(tau, 1.0 / std::log10(static_cast<double>(m * n)));
  return static_cast<double>(m * n) / tau;
}

struct PosteriorSample {
  ParameterLayout layout;
  BpBasis basis;
  std::vector<std::string> names;
  Eigen::MatrixXd unconstrained;  // draws x dimension, chain-major order
  Eigen::MatrixXd draws;          // natural scale
  std::vector<int> chain;         // chain id of every draw
  int warmup = 0;
  std::vector<ChainOutput> chain_stats;  // per chain, draws cleared
  Eigen::VectorXd rhat;
  Eigen::VectorXd ess;
  bool converged = false;
  FitResult map;  // posterior mode used to start the chains

  Eigen::Index size() const { return draws.rows(); }
  YpParameters parameters(Eigen::Index i) const { return layout.unpack(unconstrained.row(i).transpose(), basis); }
};

inline constexpr double kRhatThreshold = 1.05;

/// Per-parameter split R-hat and ESS of a chain-major draw matrix.
inline void chain_diagnostics(const Eigen::MatrixXd& draws, int chains, Eigen::VectorXd& rhat, Eigen::VectorXd& ess) {
  const Eigen::Index per_chain = draws.rows() / chains;
  rhat.resize(draws.cols());
  ess.resize(draws.cols());
  for (Eigen::Index j = 0; j < draws.cols(); ++j) {
    std::vector<std::vector<double>> columns(static_cast<std::size_t>(chains));
    for (int c = 0; c < chains; ++c) {
      const auto seg = draws.col(j).segment(c * per_chain, per_chain);
      columns[static_cast<std::size_t>(c)].assign(seg.data(), seg.data() + per_chain);
    }
    rhat[j] = split_rhat(columns);
    ess[j] = effective_sample_size(columns);
  }
}

/// Posterior draws by the no-U-turn sampler over the unconstrained vector.
///
/// Chains start from the posterior mode plus an overdispersed draw from its
/// Laplace approximation; chain c uses the stream (seed, c), so the result
/// does not depend on the thread count.
inline PosteriorSample sample_posterior(const PriorSpec& prior, const SurvivalDataset& input, const FitConfig& fit_config,
                                        const SamplerConfig& config) {
  config.validate();
  prior.validate();
  input.require_events();
  const SurvivalDataset data = dataset_for_variant(input, fit_config.variant);
  const int degree = fit_config.degree > 0 ? fit_config.degree : default_degree(data.n());
  const ParameterLayout layout = ParameterLayout::for_data(data, fit_config.variant, degree);
  const BpBasis basis(degree, data.tau_hat());
  const LikelihoodEvaluator evaluator(data, layout, basis);
  FitConfig map_config = fit_config;
  map_config.degree = degree;
  map_config.compute_covariance = false;
  FitResult map = fit_map(prior, data, map_config);
  const Eigen::Index d = layout.size();
  auto log_density = [&](const Eigen::VectorXd& u, Eigen::VectorXd* grad) {
    const double value = evaluator(u, grad);
    if (!std::isfinite(value)) return value;
    Eigen::VectorXd extra;
    const double added = log_prior(prior, layout, u, grad ? &extra : nullptr);
    if (grad) *grad += extra;
    return value + added;
  };
  // The prior keeps the posterior information positive definite even for
  // boundary baseline coefficients; fall back to the prior scale if not.
  Eigen::MatrixXd laplace = Eigen::MatrixXd::Identity(d, d) * (prior.baseline.sd * prior.baseline.sd) * 0.01;
  {
    const Eigen::MatrixXd info = observed_information(log_density, map.unconstrained);
    Eigen::LLT<Eigen::MatrixXd> llt(info);
    if (info.allFinite() && llt.info() == Eigen::Success) {
      laplace = llt.solve(Eigen::MatrixXd::Identity(d, d));
      laplace = 0.5 * (laplace + laplace.transpose());
    }
  }
  const Eigen::MatrixXd spread = Eigen::LLT<Eigen::MatrixXd>(laplace).matrixL();

  std::vector<ChainOutput> outputs(static_cast<std::size_t>(config.chains));
  parallel_for(outputs.size(), resolve_threads(config.threads), [&](std::size_t c) {
    RandomStream rng(config.seed, c);
    Eigen::VectorXd start = map.unconstrained;
    constexpr double kOverdispersion = 1.5;
    for (int attempt = 0; attempt < 100; ++attempt) {
      Eigen::VectorXd noise(d);
      for (Eigen::Index j = 0; j < d; ++j) noise[j] = rng.normal();
      const Eigen::VectorXd trial = map.unconstrained + kOverdispersion * (spread * noise);
      if (std::isfinite(log_density(trial, nullptr))) {
        start = trial;
        break;
      }
    }
    outputs[c] = run_nuts(log_density, start, laplace, config, rng);
  });

  PosteriorSample sample{layout, basis, layout.names(data.z_names(), data.x_names()), {}, {}, {}, config.warmup,
                         {}, {}, {}, false, std::move(map)};
  const Eigen::Index kept = config.iterations - config.warmup;
  sample.unconstrained.resize(kept * config.chains, d);
  for (int c = 0; c < config.chains; ++c) {
    sample.unconstrained.middleRows(c * kept, kept) = outputs[static_cast<std::size_t>(c)].draws;
    ChainOutput stats = outputs[static_cast<std::size_t>(c)];
    stats.draws.resize(0, 0);
    sample.chain_stats.push_back(std::move(stats));
    sample.chain.insert(sample.chain.end(), static_cast<std::size_t>(kept), c);
  }
  sample.draws = sample.unconstrained;
  sample.draws.rightCols(layout.m) = sample.unconstrained.rightCols(layout.m).array().exp().matrix();
  if (kept >= 4) {
    chain_diagnostics(sample.unconstrained, config.chains, sample.rhat, sample.ess);
    sample.converged = (sample.rhat.array() <= kRhatThreshold).all();
  } else {
    sample.rhat = Eigen::VectorXd::Constant(d, std::numeric_limits<double>::quiet_NaN());
    sample.ess = sample.rhat;
  }
  return sample;
}

/// Shortest interval holding ceil(level * N) consecutive sorted draws; the
/// leftmost one wins ties.
inline Interval hpd_interval(std::span<const double> draws, double level) {
  if (draws.size() < 2) throw ContractError("hpd_interval: at least two draws are required");
  if (!(level > 0.0 && level < 1.0)) throw ContractError("hpd_interval: level must lie in (0, 1)");
  std::vector<double> sorted(draws.begin(), draws.end());
  std::sort(sorted.begin(), sorted.end());
  const auto n = sorted.size();
  const auto window = std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(level * static_cast<double>(n) - 1e-9)));
  std::size_t best = 0;
  double best_width = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i + window <= n; ++i) {
    const double width = sorted[i + window - 1] - sorted[i];
    if (width < best_width) {
      best_width = width;
      best = i;
    }
  }
  return {sorted[best], sorted[best + window - 1]};
}

struct ParameterSummary {
  std::string name;
  double mean;
  double sd;
  Interval hpd;
  double rhat;
  double ess;
};

// Posterior mean, SD and HPD interval of every natural-scale parameter.
inline std::vector<ParameterSummary> summarize(const PosteriorSample& sample, double level) {
  std::vector<ParameterSummary> out;
  for (Eigen::Index j = 0; j < sample.draws.cols(); ++j) {
    const Eigen::VectorXd column = sample.draws.col(j);
    const double mean = column.mean();
    const double sd = column.size() > 1 ? std::sqrt((column.array() - mean).square().sum() / static_cast<double>(column.size() - 1)) : 0.0;
    out.push_back({sample.names[static_cast<std::size_t>(j)], mean, sd,
                   hpd_interval(std::span<const double>(column.data(), static_cast<std::size_t>(column.size())), level),
                   sample.rhat.size() > j ? sample.rhat[j] : std::numeric_limits<double>::quiet_NaN(),
                   sample.ess.size() > j ? sample.ess[j] : std::numeric_limits<double>::quiet_NaN()});
  }
  return out;
}

}  // namespace ypbp
