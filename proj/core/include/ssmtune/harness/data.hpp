// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>

#include "ssmtune/harness/config.hpp"
#include "ssmtune/train/train.hpp"

namespace ssmtune {

/// A generated task: training and validation sets, the generating target
/// model and the frozen model handed to the adapters.
struct TaskData {
  Dataset train;
  Dataset val;
  StackedModel target;
  StackedModel frozen;
};

/// Architecture of the target model described by `cfg` (no head, uniform activation).
ModelArch target_arch(const ExperimentConfig& cfg);

/// Regression task: inputs are uniform integers, outputs are the target model's
/// tokens. Streams: inputs (seed, 1), target (seed, 2), frozen (seed, 3).
/// A target without residual has u = 0 in every layer.
TaskData gen_target_matching(const ExperimentConfig& cfg, std::uint64_t seed);

/// Convenience form with the default target-matching shape (D = 64, N = 200,
/// one-layer target, four-layer frozen model).
TaskData gen_target_matching(std::uint64_t seed);

/// Classification task: the label of a sequence is whether a fixed random linear
/// functional of the target's time-averaged features exceeds its median over the
/// generated sequences, so both classes are balanced. Functional stream (seed, 4).
TaskData gen_toy_classification(const ExperimentConfig& cfg, std::uint64_t seed);

/// Dispatches on cfg.task; oracle_suite has no data and throws.
TaskData generate_task(const ExperimentConfig& cfg, std::uint64_t seed);

}  // namespace ssmtune
