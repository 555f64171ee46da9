// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/harness/data.hpp"

#include <algorithm>
#include <stdexcept>

namespace ssmtune {

ModelArch target_arch(const ExperimentConfig& cfg) {
  ModelArch a = cfg.model;
  a.layers = cfg.target.layers;
  a.states = cfg.target.states;
  a.classes = 0;
  a.activations.assign(a.layers, cfg.target.activation);
  return a;
}

namespace {

StackedModel make_target(const ExperimentConfig& cfg, std::uint64_t seed) {
  RngStream rng(seed, 2);
  StackedModel target = init_model(target_arch(cfg), rng);
  if (!cfg.target.residual) {
    for (std::size_t i = 0; i < target.arch.layers; ++i) {
      Tensor& u = target.param(layer_param(i, "u"));
      u = Tensor::zeros_like(u);
    }
  }
  return target;
}

std::vector<Tensor> draw_inputs(const ExperimentConfig& cfg, RngStream& rng, std::size_t count) {
  std::vector<Tensor> xs;
  for (std::size_t q = 0; q < count; ++q) {
    xs.push_back(rng_draw(rng, IntegerRange{cfg.data.input_low, cfg.data.input_high + 1},
                          {cfg.model.channels, cfg.data.length}));
  }
  return xs;
}

}  // namespace

TaskData gen_target_matching(const ExperimentConfig& cfg, std::uint64_t seed) {
  TaskData out;
  RngStream xr(seed, 1);
  out.target = make_target(cfg, seed);
  RngStream fr(seed, 3);
  out.frozen = init_model(cfg.model, fr);
  out.train.inputs = draw_inputs(cfg, xr, cfg.data.train_sequences);
  for (const Tensor& x : out.train.inputs) out.train.targets.push_back(model_tokens(out.target, x));
  if (cfg.data.val_sequences == 0) {
    out.val = out.train;
  } else {
    out.val.inputs = draw_inputs(cfg, xr, cfg.data.val_sequences);
    for (const Tensor& x : out.val.inputs) out.val.targets.push_back(model_tokens(out.target, x));
  }
  return out;
}

TaskData gen_target_matching(std::uint64_t seed) {
  ExperimentConfig cfg;
  cfg.model.layers = 4;
  cfg.model.channels = 64;
  cfg.model.states = 8;
  return gen_target_matching(cfg, seed);
}

TaskData gen_toy_classification(const ExperimentConfig& cfg, std::uint64_t seed) {
  TaskData out;
  RngStream xr(seed, 1);
  out.target = make_target(cfg, seed);
  RngStream fr(seed, 3);
  out.frozen = init_model(cfg.model, fr);
  const std::size_t n_train = cfg.data.train_sequences;
  const std::size_t n_val = cfg.data.val_sequences;
  std::vector<Tensor> xs = draw_inputs(cfg, xr, n_train + n_val);

  // Score each sequence by <w, mean_t target(x)[:, t]>.
  RngStream wr(seed, 4);
  const std::size_t D = cfg.model.channels;
  const Tensor w = rng_draw(wr, Normal{0.0, 1.0}, {D, 1});
  std::vector<double> score;
  for (const Tensor& x : xs) {
    const Tensor y = model_tokens(out.target, x);
    double s = 0.0;
    for (std::size_t d = 0; d < D; ++d) {
      double m = 0.0;
      for (std::size_t t = 0; t < y.cols(); ++t) m += y.at(d, t);
      s += w[d] * m / static_cast<double>(y.cols());
    }
    score.push_back(s);
  }
  std::vector<double> sorted = score;
  std::sort(sorted.begin(), sorted.end());
  const std::size_t n = sorted.size();
  const double median = n % 2 == 1 ? sorted[n / 2] : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
  for (std::size_t q = 0; q < xs.size(); ++q) {
    // Labels use classes 0 and 1; a wider head simply never sees the rest.
    const int label = score[q] > median ? 1 : 0;
    Dataset& dst = q < n_train || n_val == 0 ? out.train : out.val;
    dst.inputs.push_back(xs[q]);
    dst.labels.push_back(label);
  }
  if (n_val == 0) out.val = out.train;
  return out;
}

TaskData generate_task(const ExperimentConfig& cfg, std::uint64_t seed) {
  switch (cfg.task) {
    case TaskKind::target_matching: return gen_target_matching(cfg, seed);
    case TaskKind::toy_classification: return gen_toy_classification(cfg, seed);
    case TaskKind::oracle_suite: break;
  }
  throw std::invalid_argument("oracle_suite has no generated data");
}

}  // namespace ssmtune
