// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

// Command-line front end: train, bench, verify and plot.
// Exit codes: 0 success, 1 failure, 2 usage or configuration error.

#include <cstdint>
#include <cstdio>
#include <exception>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "ssmtune/harness/config.hpp"
#include "ssmtune/harness/experiment.hpp"
#include "ssmtune/harness/metrics.hpp"
#include "ssmtune/harness/plot.hpp"
#include "ssmtune/theory/oracles.hpp"

namespace {

constexpr int kOk = 0;
constexpr int kFailure = 1;
constexpr int kUsage = 2;

struct SweepArgs {
  std::string config;
  std::string output;
  std::size_t workers = 0;
  bool quiet = false;
};

void add_sweep_options(CLI::App* cmd, SweepArgs& args) {
  cmd->add_option("config", args.config, "Experiment configuration (JSON)")->required()->check(CLI::ExistingFile);
  cmd->add_option("-o,--output", args.output, "Override the configuration's output_dir");
  cmd->add_option("-j,--workers", args.workers, "Override the configuration's worker count")
      ->check(CLI::PositiveNumber);
  cmd->add_flag("-q,--quiet", args.quiet, "Suppress per-run progress lines");
}

int run_sweep(const SweepArgs& args, bool bench) {
  ssmtune::ExperimentConfig cfg = ssmtune::load_config(args.config);
  if (!args.output.empty()) cfg.output_dir = args.output;
  if (args.workers > 0) cfg.workers = args.workers;

  ssmtune::RunOptions options;
  options.write_plot = bench && cfg.task != ssmtune::TaskKind::oracle_suite;
  if (!args.quiet) {
    options.progress = [](const ssmtune::RunDetail& d) {
      std::fprintf(stderr, "run %-16s seed=%-4llu lr=%-8g pct=%7.3f best=%-12.6g %s\n", d.adapter.c_str(),
                   static_cast<unsigned long long>(d.seed), d.learning_rate, d.trainable_pct, d.best_metric,
                   d.failure.empty() ? "" : d.failure.c_str());
    };
  }
  const ssmtune::ExperimentResult result = ssmtune::run_experiment(cfg, options);

  std::printf("%-16s %-6s %12s %14s\n", "adapter", "seed", "trainable%", "best_metric");
  for (const auto& row : result.table.rows) {
    std::printf("%-16s %-6llu %12s %14s\n", row.adapter.c_str(), static_cast<unsigned long long>(row.seed),
                ssmtune::format_float(row.trainable_pct).c_str(), ssmtune::format_float(row.best_metric).c_str());
  }
  for (const auto& path : result.artifacts) std::printf("wrote %s\n", path.string().c_str());
  if (cfg.task == ssmtune::TaskKind::oracle_suite && result.oracle_failures() > 0) {
    std::fprintf(stderr, "%zu oracle checks failed\n", result.oracle_failures());
    return kFailure;
  }
  return kOk;
}

struct VerifyArgs {
  std::vector<std::string> oracles;
  std::uint64_t seed = 0;
  std::size_t trials = 10;
  bool failures_only = false;
};

int run_verify(const VerifyArgs& args) {
  const std::vector<std::string> names = args.oracles.empty() ? ssmtune::oracle_names() : args.oracles;
  std::size_t total = 0, failed = 0;
  for (const std::string& name : names) {
    const auto reports = ssmtune::run_oracle(name, args.seed, args.trials);
    std::size_t name_failed = 0;
    for (const auto& r : reports) {
      ++total;
      if (!r.pass()) ++name_failed;
      if (!args.failures_only || !r.pass()) std::printf("%s\n", ssmtune::format_report(r).c_str());
    }
    failed += name_failed;
    std::printf("summary %s: %zu/%zu passed\n", name.c_str(), reports.size() - name_failed, reports.size());
  }
  std::printf("verify: %zu/%zu checks passed\n", total - failed, total);
  return failed == 0 ? kOk : kFailure;
}

struct PlotArgs {
  std::string metrics;
  std::string svg;
  bool linear = false;
  std::string title;
  std::string y_label;
};

int run_plot(const PlotArgs& args) {
  const ssmtune::MetricsTable table = ssmtune::read_metrics(args.metrics);
  ssmtune::PlotOptions options;
  options.log_y = !args.linear;
  if (!args.title.empty()) options.title = args.title;
  if (!args.y_label.empty()) options.y_label = args.y_label;
  ssmtune::plot_svg(table, args.svg, options);
  std::printf("wrote %s (%zu rows)\n", args.svg.c_str(), table.rows.size());
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Parameter-efficient fine-tuning experiments for deep S4 and S6 models", "ssmtune"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "ssmtune 0.1.0");

  SweepArgs train_args, bench_args;
  auto* train = app.add_subcommand("train", "Train every adapter in a configuration and write metrics and checkpoints");
  add_sweep_options(train, train_args);
  auto* bench = app.add_subcommand("bench", "Run a multi-adapter sweep and also render plot.svg");
  add_sweep_options(bench, bench_args);

  VerifyArgs verify_args;
  auto* verify = app.add_subcommand("verify", "Run the theory oracles and report discrepancies");
  verify->add_option("--oracle", verify_args.oracles, "Oracle to run (repeatable; default all)")
      ->check(CLI::IsMember(ssmtune::oracle_names()));
  verify->add_option("--seed", verify_args.seed, "Base seed; trial t uses stream t + 1");
  verify->add_option("--trials", verify_args.trials, "Random instances per oracle")->check(CLI::PositiveNumber);
  verify->add_flag("--failures-only", verify_args.failures_only, "Print only failing instances");

  PlotArgs plot_args;
  auto* plot = app.add_subcommand("plot", "Render a metrics CSV as an SVG chart");
  plot->add_option("metrics", plot_args.metrics, "Metrics CSV")->required()->check(CLI::ExistingFile);
  plot->add_option("svg", plot_args.svg, "Output SVG path")->required();
  plot->add_flag("--linear-y", plot_args.linear, "Linear instead of logarithmic y axis");
  plot->add_option("--title", plot_args.title, "Chart title");
  plot->add_option("--y-label", plot_args.y_label, "Y axis label");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*train) return run_sweep(train_args, false);
    if (*bench) return run_sweep(bench_args, true);
    if (*verify) return run_verify(verify_args);
    if (*plot) return run_plot(plot_args);
  } catch (const ssmtune::ConfigError& e) {
    std::fprintf(stderr, "configuration error: %s\n", e.what());
    return kUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kFailure;
  }
  return kUsage;
}
