// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/train/train.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

namespace ssmtune {

const char* to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::sgd: return "sgd";
    case OptimizerKind::adam: return "adam";
    case OptimizerKind::adamw: return "adamw";
  }
  return "?";
}

const char* to_string(Schedule s) { return s == Schedule::constant ? "constant" : "linear_decay"; }
const char* to_string(LossKind l) { return l == LossKind::mse ? "mse" : "cross_entropy"; }

const char* to_string(Metric m) {
  switch (m) {
    case Metric::mse: return "mse";
    case Metric::accuracy: return "accuracy";
    case Metric::cross_entropy: return "cross_entropy";
  }
  return "?";
}

OptimizerKind parse_optimizer(const std::string& s) {
  if (s == "sgd") return OptimizerKind::sgd;
  if (s == "adam") return OptimizerKind::adam;
  if (s == "adamw") return OptimizerKind::adamw;
  throw std::invalid_argument("unknown optimizer '" + s + "' (expected sgd, adam or adamw)");
}

Schedule parse_schedule(const std::string& s) {
  if (s == "constant") return Schedule::constant;
  if (s == "linear_decay") return Schedule::linear_decay;
  throw std::invalid_argument("unknown schedule '" + s + "' (expected constant or linear_decay)");
}

LossKind parse_loss(const std::string& s) {
  if (s == "mse") return LossKind::mse;
  if (s == "cross_entropy") return LossKind::cross_entropy;
  throw std::invalid_argument("unknown loss '" + s + "' (expected mse or cross_entropy)");
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("train.learning_rate must be finite and >= 0");
  }
  if (!(weight_decay >= 0.0)) throw std::invalid_argument("train.weight_decay must be >= 0");
  if (iterations < 1) throw std::invalid_argument("train.iterations must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train.batch_size must be >= 1");
  if (eval_every < 1) throw std::invalid_argument("train.eval_every must be >= 1");
  if (!(grad_clip >= 0.0)) throw std::invalid_argument("train.grad_clip must be >= 0");
}

double scheduled_lr(const TrainConfig& cfg, std::size_t t) {
  if (cfg.schedule == Schedule::constant) return cfg.learning_rate;
  return cfg.learning_rate * (1.0 - static_cast<double>(t) / static_cast<double>(cfg.iterations));
}

Optimizer::Optimizer(OptimizerKind kind, double weight_decay, double beta1, double beta2, double eps)
    : kind_(kind), weight_decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

void Optimizer::step(ParamMap& params, const GradientMap& grads, const ParamMap& masks, double lr) {
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (auto& [name, p] : params) {
    auto git = grads.find(name);
    if (git == grads.end()) continue;
    const Tensor& g = git->second;
    const auto mit = masks.find(name);
    const Tensor* mask = mit == masks.end() ? nullptr : &mit->second;
    if (kind_ == OptimizerKind::sgd) {
      for (std::size_t k = 0; k < p.size(); ++k) {
        if (mask && (*mask)[k] == 0.0) continue;
        p[k] -= lr * (g[k] + weight_decay_ * p[k]);
      }
      continue;
    }
    auto [mi, fresh_m] = m_.try_emplace(name, Tensor::zeros_like(p));
    auto [vi, fresh_v] = v_.try_emplace(name, Tensor::zeros_like(p));
    Tensor& m = mi->second;
    Tensor& v = vi->second;
    for (std::size_t k = 0; k < p.size(); ++k) {
      if (mask && (*mask)[k] == 0.0) continue;
      if (kind_ == OptimizerKind::adamw) p[k] -= lr * weight_decay_ * p[k];
      const double gk = kind_ == OptimizerKind::adam ? g[k] + weight_decay_ * p[k] : g[k];
      m[k] = beta1_ * m[k] + (1.0 - beta1_) * gk;
      v[k] = beta2_ * v[k] + (1.0 - beta2_) * gk * gk;
      const double mhat = m[k] / bc1;
      const double vhat = v[k] / bc2;
      p[k] -= lr * mhat / (std::sqrt(vhat) + eps_);
    }
  }
}

Metric default_metric(LossKind loss) { return loss == LossKind::mse ? Metric::mse : Metric::accuracy; }

bool metric_improves(Metric m, double candidate, double incumbent) {
  return m == Metric::accuracy ? candidate > incumbent : candidate < incumbent;
}

Expr batch_loss(Graph& g, const AdaptedModel& model, const Dataset& data,
                const std::vector<std::size_t>& batch, LossKind loss, const ForwardContext& ctx) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  if (loss == LossKind::mse) {
    Expr total;
    for (std::size_t i : batch) {
      if (i >= data.targets.size()) throw std::invalid_argument("batch_loss: dataset has no regression targets");
      Expr l = mse(model.forward(g, data.inputs[i], ctx).tokens, g.constant(data.targets[i]));
      total = total.valid() ? total + l : l;
    }
    return batch.size() == 1 ? total : scale(total, 1.0 / static_cast<double>(batch.size()));
  }
  if (model.arch().classes == 0) throw std::invalid_argument("cross-entropy loss needs a classification head");
  Expr logits;
  std::vector<int> labels;
  for (std::size_t i : batch) {
    Expr l = model.forward(g, data.inputs[i], ctx).logits;
    logits = logits.valid() ? concat(logits, l, 1) : l;
    labels.push_back(data.labels.at(i));
  }
  return softmax_cross_entropy(logits, labels);
}

double evaluate(const AdaptedModel& model, const Dataset& data, Metric metric) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    Graph g;
    const ModelOutputs out = model.forward(g, data.inputs[i]);
    if (metric == Metric::mse) {
      const Tensor& y = out.tokens.value();
      const Tensor& t = data.targets.at(i);
      if (y.shape() != t.shape()) {
        throw ShapeError("evaluate: output " + shape_str(y.shape()) + " vs target " + shape_str(t.shape()));
      }
      for (std::size_t k = 0; k < y.size(); ++k) total += (y[k] - t[k]) * (y[k] - t[k]);
      count += y.size();
      continue;
    }
    if (!out.logits.valid()) throw std::invalid_argument("evaluate: model has no classification head");
    const Tensor& z = out.logits.value();
    const auto label = static_cast<std::size_t>(data.labels.at(i));
    if (metric == Metric::accuracy) {
      std::size_t best = 0;
      for (std::size_t k = 1; k < z.size(); ++k)
        if (z[k] > z[best]) best = k;
      total += best == label ? 1.0 : 0.0;
    } else {
      double m = z[0];
      for (double v : z.data()) m = std::max(m, v);
      double s = 0.0;
      for (double v : z.data()) s += std::exp(v - m);
      total += std::log(s) + m - z[label];
    }
    ++count;
  }
  return total / static_cast<double>(count);
}

RunResult train(AdaptedModel& model, const Dataset& train_data, const Dataset& val_data,
                const TrainConfig& cfg) {
  cfg.validate();
  if (train_data.empty()) throw std::invalid_argument("train: empty training set");
  if (val_data.empty()) throw std::invalid_argument("train: empty validation set");
  const auto start = std::chrono::steady_clock::now();

  RunResult result;
  result.seed = cfg.seed;
  result.metric = default_metric(cfg.loss);
  result.trainable_count = model.trainable_count();
  const std::vector<std::string> names = model.trainable_names();

  RngStream batch_rng(cfg.seed, 1);
  RngStream dropout_rng(cfg.seed, 2);
  Optimizer opt(cfg.optimizer, cfg.weight_decay);

  ParamMap best = model.trainable();
  result.best_metric = evaluate(model, val_data, result.metric);
  result.best_iteration = 0;
  result.val_metric.push_back(result.best_metric);
  result.val_iterations.push_back(0);
  std::size_t stale = 0;

  std::vector<std::size_t> order(train_data.size());
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    std::vector<std::size_t> batch;
    if (cfg.batch_size >= train_data.size()) {
      batch = order;
    } else {
      for (std::size_t k = 0; k < cfg.batch_size; ++k) {
        batch.push_back(static_cast<std::size_t>(batch_rng.integer(0, static_cast<std::int64_t>(train_data.size()))));
      }
    }
    Graph g;
    const ForwardContext ctx{true, &dropout_rng};
    Expr loss = batch_loss(g, model, train_data, batch, cfg.loss, ctx);
    const double lval = loss.value().item();
    if (!std::isfinite(lval)) {
      throw TrainingError("non-finite training loss at iteration " + std::to_string(it + 1), it + 1);
    }
    result.train_loss.push_back(lval);
    if (names.empty()) continue;
    GradientMap grads = g.backward(loss, names);
    if (cfg.grad_clip > 0.0) {
      double sq = 0.0;
      for (const auto& [n, gr] : grads)
        for (double v : gr.data()) sq += v * v;
      const double norm = std::sqrt(sq);
      if (norm > cfg.grad_clip) {
        for (auto& [n, gr] : grads)
          for (auto& v : gr.data()) v *= cfg.grad_clip / norm;
      }
    }
    opt.step(model.trainable(), grads, model.masks(), scheduled_lr(cfg, it));

    const bool last = it + 1 == cfg.iterations;
    if ((it + 1) % cfg.eval_every == 0 || last) {
      const double m = evaluate(model, val_data, result.metric);
      result.val_metric.push_back(m);
      result.val_iterations.push_back(it + 1);
      if (std::isfinite(m) && metric_improves(result.metric, m, result.best_metric)) {
        result.best_metric = m;
        result.best_iteration = it + 1;
        best = model.trainable();
        stale = 0;
      } else if (cfg.patience > 0 && ++stale >= cfg.patience) {
        break;
      }
    }
  }
  model.trainable() = best;
  result.seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace ssmtune
