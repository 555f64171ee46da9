// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmtune/peft/adapter.hpp"
#include "ssmtune/train/train.hpp"

namespace ssmtune {

enum class TaskKind { target_matching, toy_classification, oracle_suite };

const char* to_string(TaskKind t);
TaskKind parse_task(const std::string& s);

/// The model the frozen model is tuned to imitate.
struct TargetSpec {
  std::size_t layers = 1;  // L*
  std::size_t states = 8;  // H*
  bool residual = true;
  Activation activation = Activation::relu;

  bool operator==(const TargetSpec&) const = default;
};

struct DataSpec {
  std::size_t train_sequences = 1;
  /// 0 validates on the training sequences.
  std::size_t val_sequences = 0;
  std::size_t length = 200;  // N
  /// Inputs are integers drawn uniformly from [input_low, input_high].
  std::int64_t input_low = 0;
  std::int64_t input_high = 9;

  bool operator==(const DataSpec&) const = default;
};

/// One sweep entry. An empty spec denotes the untouched frozen model.
struct NamedAdapter {
  std::string name;
  std::optional<AdapterSpec> spec;
  /// Overrides the experiment's learning-rate grid when nonempty.
  std::vector<double> learning_rates;

  bool operator==(const NamedAdapter&) const = default;
};

struct OracleSuiteSpec {
  std::vector<std::string> names;  // empty runs every oracle
  std::size_t trials = 10;

  bool operator==(const OracleSuiteSpec&) const = default;
};

struct ExperimentConfig {
  TaskKind task = TaskKind::target_matching;
  ModelArch model;
  TargetSpec target;
  DataSpec data;
  std::vector<NamedAdapter> adapters;
  /// learning_rate and seed are overwritten per run from the grid and the seed list.
  TrainConfig train;
  /// Empty means the single rate train.learning_rate.
  std::vector<double> learning_rates;
  std::vector<std::uint64_t> seeds{0};
  std::string output_dir = "out";
  std::size_t workers = 1;
  /// Wall-clock seconds in the metrics file; off keeps the file byte-reproducible.
  bool record_timing = false;
  bool write_checkpoints = true;
  bool plot_log_y = true;
  OracleSuiteSpec oracle;

  /// Learning rates tried for `adapter`.
  std::vector<double> grid_for(const NamedAdapter& adapter) const;

  bool operator==(const ExperimentConfig&) const = default;
};

/// Malformed configuration. key() is the offending key path, such as "adapters[1].rank".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key, const std::string& message)
      : std::runtime_error(key.empty() ? message : key + ": " + message), key_(key) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

/// Parses JSON text. Unknown keys, wrong types and invalid values raise ConfigError.
ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Canonical JSON; parse_config(serialize_config(c)) == c.
std::string serialize_config(const ExperimentConfig& cfg);

}  // namespace ssmtune
