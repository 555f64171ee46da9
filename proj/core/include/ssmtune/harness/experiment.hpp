// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "ssmtune/harness/config.hpp"
#include "ssmtune/harness/data.hpp"
#include "ssmtune/harness/metrics.hpp"
#include "ssmtune/theory/oracles.hpp"

namespace ssmtune {

/// One (seed, adapter, learning rate) training run.
struct RunDetail {
  std::string adapter;
  std::uint64_t seed = 0;
  double learning_rate = 0.0;
  double best_metric = 0.0;
  std::size_t best_iteration = 0;
  std::size_t trainable_count = 0;
  double trainable_pct = 0.0;
  double seconds = 0.0;
  /// Empty on success; otherwise why the run was discarded (a non-finite loss).
  std::string failure;
};

struct ExperimentResult {
  /// One row per (adapter, seed) at the adapter's best learning rate, in config order.
  MetricsTable table;
  /// Every run, ordered by seed, adapter, then learning rate.
  std::vector<RunDetail> runs;
  std::vector<OracleReport> oracle_reports;
  std::vector<std::filesystem::path> artifacts;

  std::size_t oracle_failures() const;
};

struct RunOptions {
  bool write_artifacts = true;
  /// Also render plot.svg next to metrics.csv.
  bool write_plot = false;
  /// Called from the collector thread in run order as results are gathered.
  std::function<void(const RunDetail&)> progress;
};

/// Builds adapter `index` of the sweep for `frozen`. LoRA factors draw from
/// stream (seed, 1000 + index); SDLoRA selects on `train` first. A frozen
/// entry yields the model with nothing trainable.
AdaptedModel build_named_adapter(const StackedModel& frozen, const NamedAdapter& adapter,
                                 std::size_t index, const Dataset& train, LossKind loss,
                                 std::uint64_t seed);

/// Runs every seed x adapter x learning rate, keeps each (seed, adapter)'s best
/// learning rate by validation metric, and writes metrics.csv, lr_sweep.csv,
/// config.json and one merged-model checkpoint per row under cfg.output_dir.
/// Runs execute on cfg.workers threads; results are independent of the worker
/// count. The oracle suite writes one row per (oracle, seed) holding the worst
/// discrepancy. I/O failures throw naming the path.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& options = {});

/// Parameters a checkpoint stores for an adapted model: the merged model
/// parameters plus any non-model trainables (prompt, prefix) under "adapter.".
ParamMap checkpoint_params(const AdaptedModel& model);

}  // namespace ssmtune
