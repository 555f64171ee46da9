// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <map>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "ssmtune/ssm/model.hpp"

namespace ssmtune {

struct FullSpec {
  bool operator==(const FullSpec&) const = default;
};

/// Low-rank update W + (alpha / rank) up down on each target matrix.
/// Targets are parameter names ("layers.0.W") or field names ("W"), which
/// select that field in every layer.
struct LoRASpec {
  std::vector<std::string> targets{"W"};
  std::size_t rank = 8;
  double alpha = 8.0;
  double dropout = 0.0;

  bool operator==(const LoRASpec&) const = default;
};

struct BitFitSpec {
  bool operator==(const BitFitSpec&) const = default;
};

struct PromptTuningSpec {
  std::size_t length = 1;

  bool operator==(const PromptTuningSpec&) const = default;
};

enum class PrefixReparam { direct, mlp };

struct PrefixTuningSpec {
  std::size_t length = 1;
  PrefixReparam reparam = PrefixReparam::direct;
  std::size_t mlp_width = 0;  // 0 means 4 D

  bool operator==(const PrefixTuningSpec&) const = default;
};

struct InitialStateSpec {
  bool operator==(const InitialStateSpec&) const = default;
};

struct SDLoRASpec {
  double keep_channel_fraction = 1.0;
  double keep_state_fraction = 1.0;
  double update_channel_fraction = 1.0;
  double update_state_fraction = 1.0;
  std::size_t proj_lora_rank = 8;
  double proj_lora_alpha = 8.0;
  std::size_t warmup_batches = 20;
  double warmup_learning_rate = 1e-2;
  bool tune_residual_bias = true;
  /// Sparse column tuning of the projections instead of LoRA.
  bool sparse_projection = false;

  bool operator==(const SDLoRASpec&) const = default;
};

using AdapterSpec = std::variant<FullSpec, LoRASpec, BitFitSpec, PromptTuningSpec,
                                 PrefixTuningSpec, InitialStateSpec, SDLoRASpec>;

/// "full", "lora", "bitfit", "prompt", "prefix", "initial_state", "sdlora" or "sdt".
std::string adapter_kind(const AdapterSpec& spec);
/// Throws std::invalid_argument naming the offending field.
void validate_spec(const AdapterSpec& spec);

struct LoRAFactors {
  Tensor down;  // r x n
  Tensor up;    // m x r
  double alpha = 1.0;

  std::size_t rank() const { return down.rows(); }
  double scale() const { return alpha / static_cast<double>(rank()); }
};

/// W + (alpha / r) up down.
Tensor lora_merge(const Tensor& W, const LoRAFactors& factors);

/// Channel and state selection for one layer. Index sets are sorted ascending.
struct LayerMask {
  std::vector<std::size_t> zeroed_channels;
  std::map<std::size_t, std::vector<std::size_t>> zeroed_states;  // per kept channel
  std::vector<std::size_t> trainable_channels;
  std::map<std::size_t, std::vector<std::size_t>> trainable_states;  // per trainable channel

  bool operator==(const LayerMask&) const = default;
};

struct DimensionMask {
  std::vector<LayerMask> layers;

  bool operator==(const DimensionMask&) const = default;
};

struct ForwardContext {
  bool training = false;
  RngStream* rng = nullptr;  // required for dropout while training
};

/// A frozen model plus a set of trainable leaves and the rules that combine them.
class AdaptedModel {
 public:
  explicit AdaptedModel(StackedModel base);

  const StackedModel& base() const { return base_; }
  StackedModel& mutable_base() { return base_; }
  const ModelArch& arch() const { return base_.arch; }

  const ParamMap& trainable() const { return trainable_; }
  ParamMap& trainable() { return trainable_; }
  /// 0/1 masks of partially trainable leaves; only entries equal to 1 train.
  const ParamMap& masks() const { return masks_; }
  std::vector<std::string> trainable_names() const;
  /// Number of scalar degrees of freedom that training can change.
  std::size_t trainable_count() const;

  void make_trainable(const std::string& name);
  void make_masked_trainable(const std::string& name, Tensor mask);
  void add_lora(const std::string& param, std::size_t rank, double alpha, RngStream& rng);
  void set_lora_dropout(double p);
  void add_prompt(std::size_t length);
  void add_prefix(std::size_t length, PrefixReparam reparam, std::size_t mlp_width, RngStream& rng);

  bool has_lora(const std::string& param) const { return lora_.contains(param); }
  LoRAFactors lora_factors(const std::string& param) const;

  /// Registers every trainable leaf in `graph` and runs the adapted model.
  ModelOutputs forward(Graph& graph, const Tensor& x, const ForwardContext& ctx = {}) const;
  ModelOutputs forward(Graph& graph, Expr x, const ForwardContext& ctx = {}) const;

  /// Model parameters with trainables folded in (LoRA merged, masks applied).
  /// Prompt and prefix leaves have no model-parameter form and are ignored.
  StackedModel merged() const;

 private:
  struct LoraEntry {
    std::string down;
    std::string up;
    double alpha;
    std::size_t rank;
  };

  void require_model_param(const std::string& name) const;
  void require_fresh(const std::string& name) const;

  StackedModel base_;
  ParamMap trainable_;
  ParamMap masks_;
  std::map<std::string, LoraEntry> lora_;
  double lora_dropout_ = 0.0;
  std::size_t prompt_length_ = 0;
  std::size_t prefix_length_ = 0;
  PrefixReparam prefix_reparam_ = PrefixReparam::direct;
};

/// Expands LoRA targets to parameter names; unknown targets throw with the valid names listed.
std::vector<std::string> resolve_targets(const StackedModel& model,
                                         const std::vector<std::string>& targets);

/// Builds any adapter except SDLoRA, which needs a DimensionMask (see sdlora_apply).
AdaptedModel build_adapter(const StackedModel& model, const AdapterSpec& spec, RngStream& rng);

/// Zeroes the masked-out dimensions and exposes the selected ones.
/// S4: zeroed dims get c = 0; trainable dims expose a, b, c and the channel's log_dt.
/// S6: zeroed dims get a = -1e4; trainable channels expose their a entries and the
/// matching columns of w_b, w_c; trainable states expose the matching rows.
/// Projections (W or w_in) get LoRA, or sparse column tuning when sparse_projection is set.
AdaptedModel sdlora_apply(const StackedModel& model, const DimensionMask& mask,
                          const SDLoRASpec& spec, RngStream& rng);

/// Masked S6 state-matrix value.
inline constexpr double kMaskedStateValue = -1e4;

/// Trainable share of the frozen model's parameter count, in percent.
double param_fraction(const StackedModel& model, const AdaptedModel& adapted);

/// Rounds fraction * count half up, with a minimum of 1 for positive fractions.
std::size_t fraction_count(double fraction, std::size_t count);

}  // namespace ssmtune
