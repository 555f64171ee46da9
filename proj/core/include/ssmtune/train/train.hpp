// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "ssmtune/peft/adapter.hpp"

namespace ssmtune {

enum class OptimizerKind { sgd, adam, adamw };
enum class Schedule { constant, linear_decay };
enum class LossKind { mse, cross_entropy };
enum class Metric { mse, accuracy, cross_entropy };

const char* to_string(OptimizerKind k);
const char* to_string(Schedule s);
const char* to_string(LossKind l);
const char* to_string(Metric m);
OptimizerKind parse_optimizer(const std::string& s);
Schedule parse_schedule(const std::string& s);
LossKind parse_loss(const std::string& s);

struct TrainConfig {
  OptimizerKind optimizer = OptimizerKind::adamw;
  double learning_rate = 1e-2;
  double weight_decay = 0.0;
  Schedule schedule = Schedule::linear_decay;
  std::size_t iterations = 500;
  std::size_t batch_size = 1;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::mse;
  /// Validation runs every eval_every iterations and after the last one.
  std::size_t eval_every = 1;
  /// Stop after this many evaluations without improvement; 0 disables.
  std::size_t patience = 0;
  /// Global gradient-norm clip; 0 disables.
  double grad_clip = 0.0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;

  bool operator==(const TrainConfig&) const = default;
};

/// Learning rate at step t (0-based) of T.
double scheduled_lr(const TrainConfig& cfg, std::size_t t);

/// One sequence per entry. Regression entries carry targets [D, N];
/// classification entries carry labels.
struct Dataset {
  std::vector<Tensor> inputs;
  std::vector<Tensor> targets;
  std::vector<int> labels;

  std::size_t size() const { return inputs.size(); }
  bool empty() const { return inputs.empty(); }
  bool is_classification() const { return !labels.empty(); }
};

/// Stateful first-order optimizer over named tensors. Entries whose mask is 0
/// are never touched, including by weight decay.
class Optimizer {
 public:
  Optimizer(OptimizerKind kind, double weight_decay = 0.0, double beta1 = 0.9,
            double beta2 = 0.999, double eps = 1e-8);

  void step(ParamMap& params, const GradientMap& grads, const ParamMap& masks, double lr);
  std::size_t steps() const { return t_; }

 private:
  OptimizerKind kind_;
  double weight_decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  ParamMap m_, v_;
};

struct RunResult {
  std::vector<double> train_loss;            // one per iteration
  std::vector<double> val_metric;            // one per evaluation
  std::vector<std::size_t> val_iterations;   // iteration count at each evaluation
  double best_metric = 0.0;
  std::size_t best_iteration = 0;
  std::size_t trainable_count = 0;
  double seconds = 0.0;
  std::uint64_t seed = 0;
  Metric metric = Metric::mse;
};

/// Raised when a training loss stops being finite.
class TrainingError : public std::runtime_error {
 public:
  TrainingError(const std::string& what, std::size_t iteration)
      : std::runtime_error(what), iteration_(iteration) {}
  std::size_t iteration() const { return iteration_; }

 private:
  std::size_t iteration_;
};

/// Validation metric matched to the loss: mse for regression, accuracy for classification.
Metric default_metric(LossKind loss);
bool metric_improves(Metric m, double candidate, double incumbent);

/// Mean metric over the dataset; regression MSE averages across all tokens.
double evaluate(const AdaptedModel& model, const Dataset& data, Metric metric);

/// Trains only the adapter's trainable set, keeping the best-validation snapshot.
/// The metric series includes an evaluation before the first step (iteration 0).
RunResult train(AdaptedModel& model, const Dataset& train_data, const Dataset& val_data,
                const TrainConfig& cfg);

/// Mean training loss of one batch as a graph expression.
Expr batch_loss(Graph& graph, const AdaptedModel& model, const Dataset& data,
                const std::vector<std::size_t>& batch, LossKind loss, const ForwardContext& ctx);

}  // namespace ssmtune
