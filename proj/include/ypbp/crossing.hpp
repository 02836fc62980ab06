#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/dataset.hpp"
#include "ypbp/errors.hpp"
#include "ypbp/mcmc.hpp"
#include "ypbp/ml_fit.hpp"
#include "ypbp/parallel.hpp"
#include "ypbp/rng.hpp"
#include "ypbp/yp_model.hpp"

namespace ypbp {

/// Two covariate profiles and the time window searched for a crossing.
struct CrossingQuery {
  CovariateRow profile_a;
  CovariateRow profile_b;
  double t_min = 0.0;
  double t_max = 0.0;
  double tolerance = 0.0;  // bracket width; 0 selects 1e-10 * t_max

  // Window (smallest event time / 10, tau_hat] of the data.
  static CrossingQuery for_data(const SurvivalDataset& data, CovariateRow a, CovariateRow b) {
    data.require_events();
    double first_event = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < data.n(); ++i) {
      if (data.status()[i] == 1) first_event = std::min(first_event, data.time()[i]);
    }
    return {std::move(a), std::move(b), first_event / 10.0, data.tau_hat(), 0.0};
  }

  double resolved_tolerance() const { return tolerance > 0.0 ? tolerance : 1e-10 * t_max; }

  void validate() const {
    if (!(t_min > 0.0) || !(t_max > t_min) || !std::isfinite(t_max)) {
      throw ContractError("crossing: the search window needs 0 < t_min < t_max < inf");
    }
    if (profile_a.z.size() != profile_b.z.size() || profile_a.x.size() != profile_b.x.size()) {
      throw ContractError("crossing: the two profiles have different dimensions");
    }
    if (profile_a.z == profile_b.z && profile_a.x == profile_b.x) {
      throw ContractError("crossing: degenerate query (the two profiles are identical)");
    }
  }
};

struct CrossingRoot {
  std::optional<double> t_star;
  int sign_changes = 0;  // on the scan grid; more than one flags multiple crossings
  double bracket_lower = 0.0;
  double bracket_upper = 0.0;
  double residual = 0.0;  // S_a(t*) - S_b(t*)
};

inline constexpr int kCrossingGridSize = 512;
inline constexpr double kCrossingResidual = 1e-8;

namespace detail {

// S_a(t) - S_b(t); rows must already match the parameter layout.
inline double survival_difference(const YpParameters& params, const CrossingQuery& query, double t) {
  return survival(params, query.profile_a, t) - survival(params, query.profile_b, t);
}

inline int sign_of(double v) { return (v > 0.0) - (v < 0.0); }

}  // namespace detail

inline std::vector<double> log_spaced_grid(double lo, double hi, int count) {
  std::vector<double> grid(static_cast<std::size_t>(count));
  const double step = std::log(hi / lo) / (count - 1);
  for (int i = 0; i < count; ++i) grid[static_cast<std::size_t>(i)] = lo * std::exp(step * i);
  grid.back() = hi;
  return grid;
}

/// Smallest root of S_a(t) - S_b(t) on (t_min, t_max].
///
/// Sign changes are located on a 512-point log-spaced grid and the first is
/// refined by bisection until the bracket is narrower than the tolerance and
/// the residual is below 1e-8. Bisection compares signs only, so swapping the
/// profiles gives the identical root.
inline CrossingRoot crossing_time(const YpParameters& params, const CrossingQuery& query) {
  query.validate();
  const std::vector<double> grid = log_spaced_grid(query.t_min, query.t_max, kCrossingGridSize);
  std::vector<int> signs(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) signs[i] = detail::sign_of(detail::survival_difference(params, query, grid[i]));

  CrossingRoot out;
  std::optional<std::size_t> first;
  int previous = 0;
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (signs[i] == 0) continue;
    if (previous != 0 && signs[i] != previous) {
      ++out.sign_changes;
      if (!first) first = i;
    }
    previous = signs[i];
  }
  if (!first) {
    // An exact zero with equal signs on both sides is a touch, not a crossing.
    return out;
  }
  std::size_t hi_index = *first;
  std::size_t lo_index = hi_index - 1;
  while (signs[lo_index] == 0) --lo_index;
  double lo = grid[lo_index];
  double hi = grid[hi_index];
  const int lo_sign = signs[lo_index];
  const double tolerance = query.resolved_tolerance();
  double mid = 0.5 * (lo + hi);
  for (int iter = 0; iter < 200; ++iter) {
    mid = 0.5 * (lo + hi);
    if (!(mid > lo && mid < hi)) break;  // bracket at floating-point resolution
    const double value = detail::survival_difference(params, query, mid);
    const int s = detail::sign_of(value);
    if (s == 0) {
      lo = hi = mid;
      break;
    }
    if (s == lo_sign) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= tolerance && std::fabs(value) <= kCrossingResidual) break;
  }
  out.t_star = std::clamp(mid, lo, hi);
  out.bracket_lower = lo;
  out.bracket_upper = hi;
  out.residual = detail::survival_difference(params, query, *out.t_star);
  return out;
}

enum class CrossingMethod { BootstrapPercentile, PosteriorHpd };

inline const char* to_string(CrossingMethod method) {
  return method == CrossingMethod::BootstrapPercentile ? "bootstrap-percentile" : "posterior-hpd";
}

struct CrossingEstimate {
  std::optional<double> t_star;
  std::optional<Interval> interval;
  CrossingMethod method = CrossingMethod::BootstrapPercentile;
  double level = 0.95;
  int replicates = 0;    // bootstrap replicates or posterior draws
  int no_root = 0;       // replicates or draws without a sign change
  int failed = 0;        // bootstrap refits that did not converge
  int multiple_roots = 0;
  bool unreliable = false;
  double se = std::numeric_limits<double>::quiet_NaN();  // SD of the replicate roots
  std::vector<double> roots;  // per replicate or draw, rootless ones omitted, in index order
  std::string diagnostic;
};

struct BootstrapConfig {
  int replicates = 4000;
  double level = 0.95;
  std::uint64_t seed = 1;
  int threads = 1;
};

// Order statistics floor((N-1) a/2) and ceil((N-1)(1 - a/2)) of the sorted values.
inline Interval percentile_interval(std::vector<double> values, double level) {
  if (values.empty()) throw ContractError("percentile_interval: no values");
  if (!(level > 0.0 && level < 1.0)) throw ContractError("percentile_interval: level must lie in (0, 1)");
  std::sort(values.begin(), values.end());
  const double alpha = 1.0 - level;
  const double last = static_cast<double>(values.size() - 1);
  const auto lower = static_cast<std::size_t>(std::floor(last * alpha / 2.0 + 1e-12));
  const auto upper = static_cast<std::size_t>(std::ceil(last * (1.0 - alpha / 2.0) - 1e-12));
  return {values[lower], values[std::min(upper, values.size() - 1)]};
}

inline double sample_sd(std::span<const double> values) {
  if (values.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size() - 1));
}

// Profile rows as seen by a fit: original-formulation fits of data with x_
// columns treat them as extra z columns.
inline CovariateRow fitted_row(const ParameterLayout& layout, const CovariateRow& row) {
  if (layout.p == 0 && row.x.size() > 0) {
    CovariateRow merged{Eigen::VectorXd(row.z.size() + row.x.size()), Eigen::VectorXd(0)};
    merged.z << row.z, row.x;
    return merged;
  }
  return row;
}

inline CrossingQuery fitted_query(const ParameterLayout& layout, const CrossingQuery& query) {
  CrossingQuery out = query;
  out.profile_a = fitted_row(layout, query.profile_a);
  out.profile_b = fitted_row(layout, query.profile_b);
  return out;
}

/// Nonparametric bootstrap of the crossing time.
///
/// Replicate b resamples n rows with the stream (seed, b), refits by ML from
/// the full-data estimate, and solves for t* on the query window. The point
/// estimate comes from `full_fit`; the interval is the percentile interval of
/// the replicates that have a root.
inline CrossingEstimate bootstrap_crossing(const SurvivalDataset& data, const FitResult& full_fit,
                                           const FitConfig& fit_config, const CrossingQuery& query,
                                           const BootstrapConfig& config) {
  if (config.replicates < 2) throw ContractError("bootstrap_crossing: at least 2 replicates are required");
  query.validate();
  CrossingEstimate out;
  out.method = CrossingMethod::BootstrapPercentile;
  out.level = config.level;
  out.replicates = config.replicates;
  const CrossingRoot point = crossing_time(full_fit.estimates, fitted_query(full_fit.layout, query));
  out.t_star = point.t_star;
  if (point.sign_changes > 1) out.diagnostic = "full-data fit has multiple crossings; the smallest is reported";

  enum class Outcome { Root, NoRoot, Failed };
  std::vector<Outcome> outcome(static_cast<std::size_t>(config.replicates), Outcome::Failed);
  std::vector<double> root(static_cast<std::size_t>(config.replicates), 0.0);
  std::vector<int> multiple(static_cast<std::size_t>(config.replicates), 0);
  FitConfig replicate_config = fit_config;
  replicate_config.degree = full_fit.layout.m;
  replicate_config.compute_covariance = false;
  replicate_config.initial_point = full_fit.unconstrained;

  parallel_for(outcome.size(), resolve_threads(config.threads), [&](std::size_t b) {
    RandomStream rng(config.seed, b);
    std::vector<std::size_t> rows(data.n());
    for (auto& r : rows) r = static_cast<std::size_t>(rng.index(data.n()));
    const SurvivalDataset resample = data.select(rows);
    if (resample.events() == 0) return;
    const FitResult fit = fit_ml(resample, replicate_config);
    if (!fit.converged) return;
    const CrossingRoot r = crossing_time(fit.estimates, fitted_query(fit.layout, query));
    if (!r.t_star) {
      outcome[b] = Outcome::NoRoot;
      return;
    }
    outcome[b] = Outcome::Root;
    root[b] = *r.t_star;
    multiple[b] = r.sign_changes > 1;
  });

  for (std::size_t b = 0; b < outcome.size(); ++b) {
    if (outcome[b] == Outcome::Root) {
      out.roots.push_back(root[b]);
      out.multiple_roots += multiple[b];
    } else if (outcome[b] == Outcome::NoRoot) {
      ++out.no_root;
    } else {
      ++out.failed;
    }
  }
  out.unreliable = 2 * out.no_root > config.replicates;
  if (out.unreliable) out.diagnostic = "more than half of the bootstrap replicates have no crossing";
  if (!out.roots.empty()) {
    out.interval = percentile_interval(out.roots, config.level);
    out.se = sample_sd(out.roots);
  }
  return out;
}

/// Crossing time under every posterior draw: point estimate is the mean of the
/// per-draw roots, interval their HPD interval. Rootless draws are counted and
/// left out.
inline CrossingEstimate posterior_crossing(const PosteriorSample& sample, const CrossingQuery& query, double level,
                                           int threads = 1) {
  query.validate();
  const CrossingQuery fitted = fitted_query(sample.layout, query);
  const auto draws = static_cast<std::size_t>(sample.size());
  std::vector<std::optional<double>> roots(draws);
  std::vector<int> multiple(draws, 0);
  parallel_for(draws, resolve_threads(threads), [&](std::size_t i) {
    const CrossingRoot r = crossing_time(sample.parameters(static_cast<Eigen::Index>(i)), fitted);
    roots[i] = r.t_star;
    multiple[i] = r.sign_changes > 1;
  });
  CrossingEstimate out;
  out.method = CrossingMethod::PosteriorHpd;
  out.level = level;
  out.replicates = static_cast<int>(draws);
  for (std::size_t i = 0; i < draws; ++i) {
    if (roots[i]) {
      out.roots.push_back(*roots[i]);
      out.multiple_roots += multiple[i];
    } else {
      ++out.no_root;
    }
  }
  out.unreliable = 2 * out.no_root > out.replicates;
  if (out.roots.empty()) {
    out.diagnostic = "no posterior draw has a crossing on the search window";
    return out;
  }
  double mean = 0.0;
  for (double r : out.roots) mean += r;
  out.t_star = mean / static_cast<double>(out.roots.size());
  out.se = sample_sd(out.roots);
  if (out.roots.size() >= 2) {
    out.interval = hpd_interval(out.roots, level);
  } else {
    out.interval = Interval{out.roots.front(), out.roots.front()};
  }
  if (out.unreliable) out.diagnostic = "more than half of the posterior draws have no crossing";
  return out;
}

/// Survival of each profile on a grid, with pointwise posterior bands when
/// the curves come from a sample.
struct CurveGrid {
  std::vector<double> grid;
  Eigen::MatrixXd survival;  // grid x profiles; posterior mean for samples
  Eigen::MatrixXd lower;     // empty without a sample
  Eigen::MatrixXd upper;
};

namespace detail {

inline void check_grid(std::span<const double> grid) {
  for (std::size_t i = 0; i < grid.size(); ++i) {
    if (!(grid[i] >= 0.0) || !std::isfinite(grid[i])) throw ContractError("curve grid: times must be finite and nonnegative");
    if (i > 0 && grid[i] < grid[i - 1]) throw ContractError("curve grid: times must be sorted");
  }
}

}  // namespace detail

inline CurveGrid survival_curve_grid(const YpParameters& params, std::span<const CovariateRow> profiles,
                                     std::span<const double> grid) {
  detail::check_grid(grid);
  CurveGrid out{{grid.begin(), grid.end()},
                Eigen::MatrixXd(static_cast<Eigen::Index>(grid.size()), static_cast<Eigen::Index>(profiles.size())),
                {},
                {}};
  for (std::size_t j = 0; j < profiles.size(); ++j) {
    for (std::size_t i = 0; i < grid.size(); ++i) {
      out.survival(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = survival(params, profiles[j], grid[i]);
    }
  }
  return out;
}

inline CurveGrid survival_curve_grid(const PosteriorSample& sample, std::span<const CovariateRow> profiles,
                                     std::span<const double> grid, double level, int threads = 1) {
  detail::check_grid(grid);
  const auto g = static_cast<Eigen::Index>(grid.size());
  const auto k = static_cast<Eigen::Index>(profiles.size());
  const Eigen::Index draws = sample.size();
  // values(draw, i * k + j)
  Eigen::MatrixXd values(draws, g * k);
  parallel_for(static_cast<std::size_t>(draws), resolve_threads(threads), [&](std::size_t d) {
    const YpParameters params = sample.parameters(static_cast<Eigen::Index>(d));
    for (Eigen::Index j = 0; j < k; ++j) {
      for (Eigen::Index i = 0; i < g; ++i) {
        values(static_cast<Eigen::Index>(d), i * k + j) =
            survival(params, profiles[static_cast<std::size_t>(j)], grid[static_cast<std::size_t>(i)]);
      }
    }
  });
  CurveGrid out{{grid.begin(), grid.end()}, Eigen::MatrixXd(g, k), Eigen::MatrixXd(g, k), Eigen::MatrixXd(g, k)};
  for (Eigen::Index i = 0; i < g; ++i) {
    for (Eigen::Index j = 0; j < k; ++j) {
      const Eigen::VectorXd column = values.col(i * k + j);
      out.survival(i, j) = column.mean();
      const Interval band = draws >= 2 ? hpd_interval(std::span<const double>(column.data(), static_cast<std::size_t>(draws)), level)
                                       : Interval{column[0], column[0]};
      out.lower(i, j) = band.lower;
      out.upper(i, j) = band.upper;
    }
  }
  return out;
}

}  // namespace ypbp
