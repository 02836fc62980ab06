// Command-line driver: parses flags into a RunConfig and writes the report.

#include <cstdlib>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "ypbp/cli.hpp"

namespace {

void add_common(CLI::App& cmd, ypbp::RunConfig& c) {
  cmd.add_option("--data", c.data, "dataset CSV (time, status, z_*, x_*)");
  cmd.add_option("--variant", c.variant, "m1, m2, m1-star or m2-star")->capture_default_str();
  cmd.add_option_function<std::string>(
         "--degree",
         [&c](const std::string& v) {
           if (v == "auto") {
             c.degree = 0;
             return;
           }
           int degree = 0;
           const auto r = std::from_chars(v.data(), v.data() + v.size(), degree);
           if (r.ec != std::errc() || r.ptr != v.data() + v.size() || degree < 1) {
             throw CLI::ValidationError("--degree", "expected a positive integer or auto");
           }
           c.degree = degree;
         },
         "Bernstein polynomial degree or auto")
      ->default_str("auto");
  cmd.add_option("--inference", c.inference, "ml or bayes")->capture_default_str();
  cmd.add_option_function<std::uint64_t>("--seed", [&c](std::uint64_t s) { c.seed = s; }, "random seed");
  cmd.add_option("--level", c.level, "interval level")->capture_default_str();
  cmd.add_option("--out", c.out, "report path (default: standard output)");
  cmd.add_option("--threads", c.threads, "worker threads (default: $YPBP_THREADS or all cores)");
  cmd.add_option("--chains", c.chains, "MCMC chains")->capture_default_str();
  cmd.add_option("--iterations", c.iterations, "MCMC iterations per chain, warmup included")->capture_default_str();
  cmd.add_option("--warmup", c.warmup, "MCMC warmup iterations")->capture_default_str();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Yang-Prentice survival models with Bernstein polynomial baselines"};
  app.require_subcommand(1);
  ypbp::RunConfig c;

  auto* fit = app.add_subcommand("fit", "fit a model and report coefficients and hazard ratios");
  add_common(*fit, c);

  auto* crossing = app.add_subcommand("crossing", "estimate the crossing time of two survival curves");
  add_common(*crossing, c);
  crossing->add_option("--profile-a", c.profile_a, "first profile: z_ values then x_ values, comma separated")->required();
  crossing->add_option("--profile-b", c.profile_b, "second profile")->required();
  crossing->add_option("--bootstrap", c.bootstrap, "bootstrap replicates (ml)")->capture_default_str();
  crossing->add_flag("--grid", c.grid, "attach both survival curves on a 512-point grid");

  auto* curves = app.add_subcommand("curves", "fitted survival curves on a 512-point grid");
  add_common(*curves, c);
  curves->add_option("--profile-a", c.profile_a, "first profile")->required();
  curves->add_option("--profile-b", c.profile_b, "optional second profile");

  auto* simulate = app.add_subcommand("simulate", "Monte Carlo study of a named scenario");
  add_common(*simulate, c);
  simulate->add_option("--scenario", c.scenario, "scenario-i or scenario-ii")->required();
  simulate->add_option("--replications", c.replications, "number of replicate datasets")->capture_default_str();
  simulate->add_option("--n", c.n, "sample size per replicate")->capture_default_str();
  simulate->add_option("--censoring", c.censoring, "target censoring rate")->capture_default_str();
  simulate->add_option("--bootstrap", c.bootstrap, "bootstrap replicates for t* (ml, two-sample designs; 0 skips)")
      ->capture_default_str();
  simulate->add_option("--dump-dir", c.dump_dir, "write replicate datasets and estimates here");

  std::string report_path;
  auto* replay = app.add_subcommand("replay", "re-run the configuration embedded in a report");
  replay->add_option("--report", report_path, "report to replay")->required();
  replay->add_option("--out", c.out, "report path (default: standard output)");
  replay->add_option("--threads", c.threads, "worker threads");

  CLI11_PARSE(app, argc, argv);

  ypbp::Report report;
  if (replay->parsed()) {
    try {
      report = ypbp::replay(ypbp::read_file(report_path), c.threads);
    } catch (const std::exception& e) {
      report.section("error").set("kind", "replay").set("message", e.what());
    }
  } else {
    c.command = app.get_subcommands().front()->get_name();
    report = ypbp::run_command(c);
  }

  const std::string text = report.render();
  if (c.out.empty()) {
    std::cout << text;
  } else {
    try {
      ypbp::write_text(c.out, text);
    } catch (const std::exception& e) {
      std::cerr << e.what() << '\n';
      return 1;
    }
  }
  if (report.has_error()) {
    std::cerr << "error: " << *report.find("error")->get("message") << '\n';
    return 1;
  }
  return 0;
}
