#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "ypbp/crossing.hpp"
#include "ypbp/dataset.hpp"
#include "ypbp/errors.hpp"
#include "ypbp/io.hpp"
#include "ypbp/mcmc.hpp"
#include "ypbp/ml_fit.hpp"
#include "ypbp/parallel.hpp"
#include "ypbp/simulation.hpp"

namespace ypbp {

/// Resolved settings of one command. `threads`, `out` and `dump_dir` only
/// decide where and how fast work happens, so they stay out of the report.
struct RunConfig {
  std::string command;
  std::string data;
  std::string variant = "m1";
  int degree = 0;  // 0 means automatic
  std::string inference = "ml";
  std::optional<std::uint64_t> seed;
  double level = 0.95;
  int bootstrap = 500;
  int chains = 4;
  int iterations = 2000;
  int warmup = 1000;
  std::string profile_a;
  std::string profile_b;
  bool grid = false;  // crossing: attach the survival curves of both profiles
  std::string scenario;
  int replications = 200;
  int n = 500;
  double censoring = 0.30;

  int threads = 0;
  std::string out;
  std::string dump_dir;

  bool bayes() const { return inference == "bayes"; }

  void validate() const {
    static const std::vector<std::string> commands{"fit", "crossing", "simulate", "curves"};
    if (std::find(commands.begin(), commands.end(), command) == commands.end()) {
      throw ConfigError("unknown command '" + command + "'");
    }
    parse_variant(variant);
    if (inference != "ml" && inference != "bayes") throw ConfigError("inference must be ml or bayes");
    if (degree < 0) throw ConfigError("degree must be positive or auto");
    if (!(level > 0.0 && level < 1.0)) throw ConfigError("level must lie in (0, 1)");
    if (command == "simulate") {
      if (scenario.empty()) throw ConfigError("simulate needs --scenario");
      if (replications < 2) throw ConfigError("simulate needs at least 2 replications");
      if (n < 2) throw ConfigError("simulate needs n >= 2");
    } else if (data.empty()) {
      throw ConfigError(command + " needs --data");
    }
    if (command == "crossing" && (profile_a.empty() || profile_b.empty())) {
      throw ConfigError("crossing needs --profile-a and --profile-b");
    }
    if (command == "curves" && profile_a.empty()) throw ConfigError("curves needs --profile-a");
    const bool needs_seed = command == "simulate" || bayes() || (command == "crossing" && !bayes());
    if (needs_seed && !seed) throw ConfigError(command + " with inference " + inference + " needs --seed");
    if (bayes()) SamplerConfig{chains, iterations, warmup, 1}.validate();
    if (!bayes() && command == "crossing" && bootstrap < 2) throw ConfigError("bootstrap needs at least 2 replicates");
  }
};

// Canonical key-value form; every key is always written so a report can be replayed.
inline void write_config(Report::Section& s, const RunConfig& c) {
  s.set("command", c.command)
      .set("data", c.data)
      .set("variant", c.variant)
      .set("degree", c.degree == 0 ? std::string("auto") : std::to_string(c.degree))
      .set("inference", c.inference)
      .set("seed", c.seed ? std::to_string(*c.seed) : std::string("none"))
      .set("level", c.level)
      .set("bootstrap", c.bootstrap)
      .set("chains", c.chains)
      .set("iterations", c.iterations)
      .set("warmup", c.warmup)
      .set("profile_a", c.profile_a)
      .set("profile_b", c.profile_b)
      .set("grid", c.grid)
      .set("scenario", c.scenario)
      .set("replications", c.replications)
      .set("n", c.n)
      .set("censoring", c.censoring);
}

inline RunConfig read_config(const Report& report) {
  const Report::Section* s = report.find("config");
  if (!s) throw ConfigError("report has no [config] section");
  auto text = [&](const std::string& key) {
    const std::string* v = s->get(key);
    if (!v) throw ConfigError("report config is missing '" + key + "'");
    return *v;
  };
  auto integer = [&](const std::string& key) {
    const std::string v = text(key);
    long long out = 0;
    const auto r = std::from_chars(v.data(), v.data() + v.size(), out);
    if (r.ec != std::errc() || r.ptr != v.data() + v.size()) throw ConfigError("report config: '" + key + "' is not an integer");
    return out;
  };
  auto real = [&](const std::string& key) {
    const auto v = parse_double(text(key));
    if (!v) throw ConfigError("report config: '" + key + "' is not a number");
    return *v;
  };
  RunConfig c;
  c.command = text("command");
  c.data = text("data");
  c.variant = text("variant");
  c.degree = text("degree") == "auto" ? 0 : static_cast<int>(integer("degree"));
  c.inference = text("inference");
  if (text("seed") != "none") c.seed = static_cast<std::uint64_t>(integer("seed"));
  c.level = real("level");
  c.bootstrap = static_cast<int>(integer("bootstrap"));
  c.chains = static_cast<int>(integer("chains"));
  c.iterations = static_cast<int>(integer("iterations"));
  c.warmup = static_cast<int>(integer("warmup"));
  c.profile_a = text("profile_a");
  c.profile_b = text("profile_b");
  c.grid = text("grid") == "true";
  c.scenario = text("scenario");
  c.replications = static_cast<int>(integer("replications"));
  c.n = static_cast<int>(integer("n"));
  c.censoring = real("censoring");
  return c;
}

namespace detail {

inline FitConfig fit_config(const RunConfig& c) {
  FitConfig f;
  f.variant = parse_variant(c.variant);
  f.degree = c.degree;
  return f;
}

inline SamplerConfig sampler_config(const RunConfig& c) {
  SamplerConfig s;
  s.chains = c.chains;
  s.iterations = c.iterations;
  s.warmup = c.warmup;
  s.seed = c.seed.value_or(1);
  s.threads = resolve_threads(c.threads);
  return s;
}

// A profile lists the z_ columns then the x_ columns of the dataset.
inline CovariateRow parse_profile(const std::string& text, const SurvivalDataset& data, const char* flag) {
  const std::vector<double> v = parse_value_list(text, flag);
  const auto q = data.q(), p = data.p();
  if (static_cast<Eigen::Index>(v.size()) != q + p) {
    throw ConfigError(std::string(flag) + " needs " + std::to_string(q + p) + " values (z_ columns then x_ columns), got " +
                      std::to_string(v.size()));
  }
  CovariateRow row{Eigen::VectorXd(q), Eigen::VectorXd(p)};
  for (Eigen::Index j = 0; j < q; ++j) row.z[j] = v[static_cast<std::size_t>(j)];
  for (Eigen::Index j = 0; j < p; ++j) row.x[j] = v[static_cast<std::size_t>(q + j)];
  return row;
}

inline void model_section(Report& report, const SurvivalDataset& data, Variant variant, const ParameterLayout& layout,
                          const std::string& inference) {
  report.section("model")
      .set("variant", to_string(variant))
      .set("baseline", to_string(layout.kind))
      .set("degree", layout.m)
      .set("inference", inference)
      .set("n", data.n())
      .set("events", data.events())
      .set("censored_fraction", 1.0 - static_cast<double>(data.events()) / static_cast<double>(data.n()))
      .set("tau_hat", data.tau_hat());
}

// exp of the regression coefficients: per unit change, short- and long-term
// hazard ratios for z columns, the constant ratio for x columns.
inline void hazard_ratio_section(Report& report, const ParameterLayout& layout, const std::vector<std::string>& names,
                                 const Eigen::VectorXd& estimate, const std::vector<Interval>& interval) {
  auto& s = report.section("hazard_ratios");
  s.columns = {"covariate", "effect", "ratio", "lower", "upper"};
  auto add = [&](Eigen::Index j, const char* effect) {
    const std::string& name = names[static_cast<std::size_t>(j)];
    s.rows.push_back({name.substr(name.find('.') + 1), effect, format_number(std::exp(estimate[j])),
                      format_number(std::exp(interval[static_cast<std::size_t>(j)].lower)),
                      format_number(std::exp(interval[static_cast<std::size_t>(j)].upper))});
  };
  for (Eigen::Index j = 0; j < layout.q; ++j) {
    add(layout.psi_offset() + j, "short");
    add(layout.phi_offset() + j, "long");
  }
  for (Eigen::Index j = 0; j < layout.p; ++j) add(layout.beta_offset() + j, "constant");
}

inline void ml_sections(Report& report, const FitResult& fit, double level) {
  const Eigen::VectorXd se = fit.standard_errors();
  const std::vector<Interval> ci = wald_interval(fit, level);
  auto& p = report.section("parameters");
  p.set("interval", "wald").set("level", level);
  p.columns = {"name", "estimate", "se", "lower", "upper"};
  for (Eigen::Index j = 0; j < fit.natural.size(); ++j) {
    const auto k = static_cast<std::size_t>(j);
    p.rows.push_back({fit.names[k], format_number(fit.natural[j]), format_number(se[j]), format_number(ci[k].lower),
                      format_number(ci[k].upper)});
  }
  hazard_ratio_section(report, fit.layout, fit.names, fit.natural, ci);
}

inline void ml_diagnostics(Report& report, const FitResult& fit) {
  report.section("diagnostics")
      .set("converged", fit.converged)
      .set("status", to_string(fit.status))
      .set("stop_reason", to_string(fit.stop_reason))
      .set("iterations", fit.iterations)
      .set("loglik", fit.loglik)
      .set("gradient_norm", fit.gradient_norm)
      .set("boundary_coefficients", fit.boundary_coefficients)
      .set("hessian_condition", fit.hessian_condition)
      .set("message", fit.diagnostic.empty() ? std::string("none") : fit.diagnostic);
}

inline void bayes_sections(Report& report, const PosteriorSample& sample, double level) {
  const auto summary = summarize(sample, level);
  auto& p = report.section("parameters");
  p.set("interval", "hpd").set("level", level);
  p.columns = {"name", "mean", "sd", "lower", "upper", "rhat", "ess"};
  Eigen::VectorXd mean(static_cast<Eigen::Index>(summary.size()));
  std::vector<Interval> hpd;
  for (std::size_t j = 0; j < summary.size(); ++j) {
    const auto& s = summary[j];
    p.rows.push_back({s.name, format_number(s.mean), format_number(s.sd), format_number(s.hpd.lower),
                      format_number(s.hpd.upper), format_number(s.rhat), format_number(s.ess)});
    mean[static_cast<Eigen::Index>(j)] = s.mean;
    hpd.push_back(s.hpd);
  }
  // Ratios use the posterior mean of the coefficient and the exp of its HPD bounds.
  hazard_ratio_section(report, sample.layout, sample.names, mean, hpd);

  auto& d = report.section("diagnostics");
  d.set("converged", sample.converged)
      .set("rhat_threshold", kRhatThreshold)
      .set("max_rhat", sample.rhat.maxCoeff())
      .set("min_ess", sample.ess.minCoeff())
      .set("chains", static_cast<int>(sample.chain_stats.size()))
      .set("warmup", sample.warmup)
      .set("draws", static_cast<int>(sample.size()));
  d.columns = {"chain", "acceptance", "divergences", "mean_depth", "step_size"};
  for (std::size_t c = 0; c < sample.chain_stats.size(); ++c) {
    const auto& s = sample.chain_stats[c];
    d.rows.push_back({std::to_string(c), format_number(s.acceptance), std::to_string(s.divergences),
                      format_number(s.mean_depth), format_number(s.step_size)});
  }
}

inline std::string profile_text(const CovariateRow& row) {
  std::string out;
  for (Eigen::Index j = 0; j < row.z.size(); ++j) out += (out.empty() ? "" : ",") + format_number(row.z[j]);
  for (Eigen::Index j = 0; j < row.x.size(); ++j) out += (out.empty() ? "" : ",") + format_number(row.x[j]);
  return out;
}

inline void crossing_section(Report& report, const CrossingEstimate& est) {
  auto& s = report.section("crossing");
  s.set("method", to_string(est.method))
      .set("level", est.level)
      .set("t_star", est.t_star ? format_number(*est.t_star) : std::string("none"))
      .set("lower", est.interval ? format_number(est.interval->lower) : std::string("none"))
      .set("upper", est.interval ? format_number(est.interval->upper) : std::string("none"))
      .set("se", est.se)
      .set("replicates", est.replicates)
      .set("with_root", est.roots.size())
      .set("no_root", est.no_root)
      .set("failed", est.failed)
      .set("multiple_roots", est.multiple_roots)
      .set("unreliable", est.unreliable)
      .set("message", est.diagnostic.empty() ? std::string("none") : est.diagnostic);
}

// 512 equally spaced points on (0, tau_hat].
inline std::vector<double> curve_grid(double tau_hat) {
  std::vector<double> grid(kCrossingGridSize);
  for (int i = 0; i < kCrossingGridSize; ++i) grid[static_cast<std::size_t>(i)] = tau_hat * (i + 1) / kCrossingGridSize;
  return grid;
}

inline void curves_section(Report& report, const CurveGrid& curves, std::size_t profiles) {
  auto& s = report.section("curves");
  s.columns = {"t"};
  const char* labels[] = {"S_a", "S_b"};
  const bool bands = curves.lower.size() > 0;
  for (std::size_t j = 0; j < profiles; ++j) {
    s.columns.push_back(labels[j]);
    if (bands) {
      s.columns.push_back(std::string(labels[j]) + "_lower");
      s.columns.push_back(std::string(labels[j]) + "_upper");
    }
  }
  for (std::size_t i = 0; i < curves.grid.size(); ++i) {
    std::vector<std::string> row{format_number(curves.grid[i])};
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < profiles; ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      row.push_back(format_number(curves.survival(r, c)));
      if (bands) {
        row.push_back(format_number(curves.lower(r, c)));
        row.push_back(format_number(curves.upper(r, c)));
      }
    }
    s.rows.push_back(std::move(row));
  }
}

}  // namespace detail

inline void cmd_fit(const RunConfig& c, const SurvivalDataset& data, Report& report) {
  const FitConfig fc = detail::fit_config(c);
  if (c.bayes()) {
    const PosteriorSample sample = sample_posterior(PriorSpec{}, data, fc, detail::sampler_config(c));
    detail::model_section(report, data, fc.variant, sample.layout, c.inference);
    detail::bayes_sections(report, sample, c.level);
    return;
  }
  const FitResult fit = fit_ml(data, fc);
  detail::model_section(report, data, fc.variant, fit.layout, c.inference);
  detail::ml_diagnostics(report, fit);
  if (!fit.converged) throw NumericRangeError("ML fit did not converge: " + fit.diagnostic);
  detail::ml_sections(report, fit, c.level);
}

inline void cmd_crossing(const RunConfig& c, const SurvivalDataset& data, Report& report) {
  const FitConfig fc = detail::fit_config(c);
  const CovariateRow a = detail::parse_profile(c.profile_a, data, "--profile-a");
  const CovariateRow b = detail::parse_profile(c.profile_b, data, "--profile-b");
  const CrossingQuery query = CrossingQuery::for_data(data, a, b);
  query.validate();
  report.section("profiles").set("a", detail::profile_text(a)).set("b", detail::profile_text(b));

  // Profiles that differ only in the constant-effect block have proportional
  // hazards under a star variant, so their curves never cross.
  const bool proportional = has_constant_block(fc.variant) && a.z == b.z;
  auto no_crossing = [&](CrossingMethod method) {
    CrossingEstimate est;
    est.method = method;
    est.level = c.level;
    est.diagnostic = "profiles differ only in the constant-effect block; their hazards are proportional and the curves do not cross";
    detail::crossing_section(report, est);
  };

  std::vector<CovariateRow> profiles{a, b};
  const std::vector<double> grid = detail::curve_grid(data.tau_hat());
  if (c.bayes()) {
    const PosteriorSample sample = sample_posterior(PriorSpec{}, data, fc, detail::sampler_config(c));
    detail::model_section(report, data, fc.variant, sample.layout, c.inference);
    detail::bayes_sections(report, sample, c.level);
    if (proportional) {
      no_crossing(CrossingMethod::PosteriorHpd);
    } else {
      detail::crossing_section(report, posterior_crossing(sample, query, c.level, resolve_threads(c.threads)));
    }
    if (c.grid) {
      std::vector<CovariateRow> fitted{fitted_row(sample.layout, a), fitted_row(sample.layout, b)};
      detail::curves_section(report, survival_curve_grid(sample, fitted, grid, c.level, resolve_threads(c.threads)), 2);
    }
    return;
  }
  const FitResult fit = fit_ml(data, fc);
  detail::model_section(report, data, fc.variant, fit.layout, c.inference);
  detail::ml_diagnostics(report, fit);
  if (!fit.converged) throw NumericRangeError("ML fit did not converge: " + fit.diagnostic);
  detail::ml_sections(report, fit, c.level);
  if (proportional) {
    no_crossing(CrossingMethod::BootstrapPercentile);
  } else {
    const BootstrapConfig boot{c.bootstrap, c.level, *c.seed, resolve_threads(c.threads)};
    detail::crossing_section(report, bootstrap_crossing(data, fit, fc, query, boot));
  }
  if (c.grid) {
    std::vector<CovariateRow> fitted{fitted_row(fit.layout, a), fitted_row(fit.layout, b)};
    detail::curves_section(report, survival_curve_grid(fit.estimates, fitted, grid), 2);
  }
}

inline void cmd_curves(const RunConfig& c, const SurvivalDataset& data, Report& report) {
  const FitConfig fc = detail::fit_config(c);
  std::vector<CovariateRow> profiles{detail::parse_profile(c.profile_a, data, "--profile-a")};
  if (!c.profile_b.empty()) profiles.push_back(detail::parse_profile(c.profile_b, data, "--profile-b"));
  auto& p = report.section("profiles").set("a", detail::profile_text(profiles[0]));
  if (profiles.size() > 1) p.set("b", detail::profile_text(profiles[1]));
  const std::vector<double> grid = detail::curve_grid(data.tau_hat());
  if (c.bayes()) {
    const PosteriorSample sample = sample_posterior(PriorSpec{}, data, fc, detail::sampler_config(c));
    detail::model_section(report, data, fc.variant, sample.layout, c.inference);
    for (auto& row : profiles) row = fitted_row(sample.layout, row);
    detail::curves_section(report, survival_curve_grid(sample, profiles, grid, c.level, resolve_threads(c.threads)),
                           profiles.size());
    return;
  }
  const FitResult fit = fit_ml(data, fc);
  detail::model_section(report, data, fc.variant, fit.layout, c.inference);
  if (!fit.converged) throw NumericRangeError("ML fit did not converge: " + fit.diagnostic);
  for (auto& row : profiles) row = fitted_row(fit.layout, row);
  detail::curves_section(report, survival_curve_grid(fit.estimates, profiles, grid), profiles.size());
}

inline SimulationDesign resolve_design(const RunConfig& c) {
  SimulationDesign design = design_by_name(c.scenario);
  design.n = static_cast<std::size_t>(c.n);
  design.replications = c.replications;
  design.seed = *c.seed;
  design.target_censoring = c.censoring;
  return design;
}

inline EstimatorConfig resolve_estimator(const RunConfig& c) {
  EstimatorConfig e;
  e.estimator = c.bayes() ? Estimator::Bayes : Estimator::ML;
  e.fit = detail::fit_config(c);
  e.sampler = detail::sampler_config(c);
  e.level = c.level;
  e.bootstrap = c.bayes() ? 0 : c.bootstrap;
  e.threads = resolve_threads(c.threads);
  return e;
}

// One file per replicate plus a long-format table of every estimate.
inline void dump_study(const std::string& dir, const SimulationDesign& design, const McStudyResult& study) {
  std::filesystem::create_directories(dir);
  std::string table = "replicate,ok,parameter,estimate,se,lower,upper\n";
  for (std::size_t r = 0; r < study.replicates.size(); ++r) {
    char name[32];
    std::snprintf(name, sizeof name, "replicate_%04zu.csv", r);
    write_dataset((std::filesystem::path(dir) / name).string(), generate_dataset(design, study.nu, r));
    const ReplicateResult& rep = study.replicates[r];
    auto add = [&](const std::string& parameter, const ReplicateEstimate& e) {
      table += std::to_string(r) + "," + (rep.ok ? "1" : "0") + "," + parameter + "," + format_number(e.estimate) + "," +
               format_number(e.se) + "," + format_number(e.interval.lower) + "," + format_number(e.interval.upper) + "\n";
    };
    for (std::size_t j = 0; j < rep.parameters.size(); ++j) add(study.names[j], rep.parameters[j]);
    if (rep.crossing) add("t*", *rep.crossing);
  }
  write_text((std::filesystem::path(dir) / "estimates.csv").string(), table);
}

inline void cmd_simulate(const RunConfig& c, Report& report) {
  const SimulationDesign design = resolve_design(c);
  const McStudyResult study = run_mc_study(design, resolve_estimator(c));
  auto& s = report.section("study");
  s.set("design", study.design)
      .set("variant", to_string(study.variant))
      .set("estimator", to_string(study.estimator))
      .set("n", design.n)
      .set("replications", design.replications)
      .set("nu", study.nu)
      .set("mean_censoring", study.mean_censoring)
      .set("true_t_star", study.true_crossing ? format_number(*study.true_crossing) : std::string("none"))
      .set("failures", study.failures)
      .set("flagged", study.flagged);
  auto& m = report.section("metrics");
  m.columns = {"name", "truth", "est", "se", "sde", "rb", "cov", "used"};
  for (const auto& row : study.metrics) {
    m.rows.push_back({row.name, format_number(row.truth), format_number(row.est), format_number(row.se), format_number(row.sde),
                      format_number(row.rb), format_number(row.coverage), std::to_string(row.used)});
  }
  std::vector<std::string> failures;
  for (std::size_t r = 0; r < study.replicates.size(); ++r) {
    if (!study.replicates[r].ok) failures.push_back(std::to_string(r) + ": " + study.replicates[r].failure);
  }
  if (!failures.empty()) {
    auto& f = report.section("failures");
    for (std::size_t i = 0; i < failures.size(); ++i) f.set("replicate_" + std::to_string(i), failures[i]);
  }
  if (!c.dump_dir.empty()) dump_study(c.dump_dir, design, study);
}

/// Runs one command and returns its report. Failures land in an [error]
/// section instead of propagating, so the caller's exit status is just
/// whether that section exists.
inline Report run_command(const RunConfig& c) {
  Report report;
  auto& head = report.section("ypbp");
  head.set("version", kVersion).set("command", c.command);
  auto& config = report.section("config");
  write_config(config, c);
  Report only;
  write_config(only.section("config"), c);
  head.set("config_hash", hex64(fnv1a(only.render())));
  try {
    c.validate();
    if (c.command == "simulate") {
      cmd_simulate(c, report);
    } else {
      const SurvivalDataset data = parse_dataset(c.data);
      if (c.command == "fit") {
        cmd_fit(c, data, report);
      } else if (c.command == "crossing") {
        cmd_crossing(c, data, report);
      } else {
        cmd_curves(c, data, report);
      }
    }
  } catch (const std::exception& e) {
    const char* kind = dynamic_cast<const ParseError*>(&e)           ? "parse"
                       : dynamic_cast<const ConfigError*>(&e)        ? "config"
                       : dynamic_cast<const ContractError*>(&e)      ? "contract"
                       : dynamic_cast<const NumericRangeError*>(&e)  ? "numeric"
                       : dynamic_cast<const DomainError*>(&e)        ? "domain"
                                                                     : "internal";
    std::string message = e.what();
    std::replace(message.begin(), message.end(), '\n', ' ');
    report.section("error").set("kind", kind).set("message", message);
  }
  return report;
}

/// Re-runs the configuration embedded in a report.
inline Report replay(const std::string& report_text, int threads = 0) {
  RunConfig c = read_config(Report::parse(report_text));
  c.threads = threads;
  return run_command(c);
}

}  // namespace ypbp
