// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ssmtune/peft/adapter.hpp"
#include "ssmtune/train/train.hpp"

namespace ssmtune {

/// Scores used by the selection; exposed for inspection and tests.
struct SelectionScores {
  std::vector<std::vector<double>> channel;             // [layer][d]: mean |a_bar|
  std::vector<std::vector<std::vector<double>>> state;  // [layer][d][h]: |a_bar|
  std::vector<std::vector<double>> channel_change;      // [layer][d]: L2 of warmup change
  std::vector<std::vector<std::vector<double>>> state_change;
};

/// Discretized-state magnitudes of `model`; S6 layers average over the first
/// sequences of `calibration` (up to 8).
void score_state_magnitudes(const StackedModel& model, const Dataset& calibration,
                            SelectionScores& scores);

/// Per-channel and per-state L2 norms of (after - before) over SSM parameters.
void score_changes(const StackedModel& before, const StackedModel& after, SelectionScores& scores);

/// Ranks dimensions from precomputed scores. Rankings sort descending with
/// ties broken toward the lower index; counts round half up with a minimum of 1.
DimensionMask select_dimensions(const ModelArch& arch, const SelectionScores& scores,
                                const SDLoRASpec& spec);

/// Warmup-train the SSM parameters on `data`, score, select, and discard the
/// warmup (the input model is untouched; only the mask survives).
DimensionMask sdlora_select(const StackedModel& model, const Dataset& data, const SDLoRASpec& spec,
                            LossKind loss, std::uint64_t seed, SelectionScores* scores_out = nullptr);

}  // namespace ssmtune
