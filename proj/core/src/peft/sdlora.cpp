// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/peft/sdlora.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace ssmtune {

namespace {

std::vector<std::size_t> rank_desc(const std::vector<double>& score, const std::vector<std::size_t>& pool) {
  std::vector<std::size_t> order = pool;
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return score[a] > score[b]; });
  return order;
}

std::vector<std::size_t> sorted(std::vector<std::size_t> v) {
  std::sort(v.begin(), v.end());
  return v;
}

Tensor layer_output_plain(const StackedModel& m, std::size_t i, const Tensor& x) {
  if (m.arch.kind == LayerKind::s4) {
    return deep_s4_layer_forward(m.s4_layer(i), x, m.arch.activation(i), m.arch.method);
  }
  const S6Params p = m.s6_layer(i);
  Tensor y = s6_forward(p, x);
  const Tensor z = matmul(p.w_in, x);
  for (std::size_t d = 0; d < y.rows(); ++d) {
    for (std::size_t t = 0; t < y.cols(); ++t) {
      double v = y.at(d, t) + p.u[d] * z.at(d, t);
      if (m.arch.activation(i) == Activation::relu && v < 0.0) v = 0.0;
      y.at(d, t) = v;
    }
  }
  return y;
}

}  // namespace

void score_state_magnitudes(const StackedModel& model, const Dataset& calibration,
                            SelectionScores& scores) {
  const ModelArch& arch = model.arch;
  const std::size_t L = arch.layers, D = arch.channels, H = arch.states;
  scores.channel.assign(L, std::vector<double>(D, 0.0));
  scores.state.assign(L, std::vector<std::vector<double>>(D, std::vector<double>(H, 0.0)));
  if (arch.kind == LayerKind::s4) {
    for (std::size_t i = 0; i < L; ++i) {
      const DeepS4LayerParams l = model.s4_layer(i);
      for (std::size_t d = 0; d < D; ++d) {
        const DiscreteChannel ch = discretize_channel(l.channel(d), arch.method);
        for (std::size_t h = 0; h < H; ++h) {
          scores.state[i][d][h] = std::abs(ch.a_bar[h]);
          scores.channel[i][d] += std::abs(ch.a_bar[h]) / static_cast<double>(H);
        }
      }
    }
    return;
  }
  if (calibration.empty()) throw std::invalid_argument("S6 selection needs calibration data");
  const std::size_t n_cal = std::min<std::size_t>(calibration.size(), 8);
  std::vector<std::vector<std::vector<double>>> acc = scores.state;
  std::size_t tokens = 0;
  for (std::size_t s = 0; s < n_cal; ++s) {
    Tensor x = calibration.inputs[s];
    tokens += x.cols();
    for (std::size_t i = 0; i < L; ++i) {
      const S6Params p = model.s6_layer(i);
      const S6Induced in = s6_induced(p, x);
      for (std::size_t d = 0; d < D; ++d)
        for (std::size_t h = 0; h < H; ++h)
          for (std::size_t t = 0; t < x.cols(); ++t)
            acc[i][d][h] += std::exp(in.delta.at(d, t) * p.a.at(d, h));
      x = layer_output_plain(model, i, x);
    }
  }
  for (std::size_t i = 0; i < L; ++i) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t h = 0; h < H; ++h) {
        scores.state[i][d][h] = acc[i][d][h] / static_cast<double>(tokens);
        scores.channel[i][d] += scores.state[i][d][h] / static_cast<double>(H);
      }
    }
  }
}

void score_changes(const StackedModel& before, const StackedModel& after, SelectionScores& scores) {
  const ModelArch& arch = before.arch;
  const std::size_t L = arch.layers, D = arch.channels, H = arch.states;
  scores.channel_change.assign(L, std::vector<double>(D, 0.0));
  scores.state_change.assign(L, std::vector<std::vector<double>>(D, std::vector<double>(H, 0.0)));
  for (std::size_t i = 0; i < L; ++i) {
    auto delta = [&](const char* f) {
      return after.param(layer_param(i, f)) - before.param(layer_param(i, f));
    };
    auto& ch = scores.channel_change[i];
    auto& st = scores.state_change[i];
    const Tensor da = delta("a");
    if (arch.kind == LayerKind::s4) {
      const Tensor db = delta("b"), dc = delta("c"), ddt = delta("log_dt");
      for (std::size_t d = 0; d < D; ++d) {
        ch[d] = ddt[d] * ddt[d];
        for (std::size_t h = 0; h < H; ++h) {
          const double s = da.at(d, h) * da.at(d, h) + db.at(d, h) * db.at(d, h) + dc.at(d, h) * dc.at(d, h);
          st[d][h] = std::sqrt(s);
          ch[d] += s;
        }
        ch[d] = std::sqrt(ch[d]);
      }
    } else {
      const Tensor dwb = delta("w_b"), dwc = delta("w_c"), ddn = delta("w_dt_down"), dup = delta("w_dt_up");
      for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        for (std::size_t k = 0; k < ddn.rows(); ++k) s += ddn.at(k, d) * ddn.at(k, d);
        for (std::size_t k = 0; k < dup.cols(); ++k) s += dup.at(d, k) * dup.at(d, k);
        for (std::size_t h = 0; h < H; ++h) {
          const double e = da.at(d, h) * da.at(d, h) + dwb.at(h, d) * dwb.at(h, d) + dwc.at(h, d) * dwc.at(h, d);
          st[d][h] = std::sqrt(e);
          s += e;
        }
        ch[d] = std::sqrt(s);
      }
    }
  }
}

DimensionMask select_dimensions(const ModelArch& arch, const SelectionScores& scores,
                                const SDLoRASpec& spec) {
  validate_spec(spec);
  const std::size_t D = arch.channels, H = arch.states;
  std::vector<std::size_t> all_channels(D), all_states(H);
  std::iota(all_channels.begin(), all_channels.end(), 0);
  std::iota(all_states.begin(), all_states.end(), 0);

  DimensionMask mask;
  for (std::size_t i = 0; i < arch.layers; ++i) {
    LayerMask lm;
    const auto by_magnitude = rank_desc(scores.channel.at(i), all_channels);
    const std::size_t keep_c = fraction_count(spec.keep_channel_fraction, D);
    std::vector<std::size_t> kept(by_magnitude.begin(), by_magnitude.begin() + static_cast<std::ptrdiff_t>(keep_c));
    lm.zeroed_channels = sorted({by_magnitude.begin() + static_cast<std::ptrdiff_t>(keep_c), by_magnitude.end()});

    std::map<std::size_t, std::vector<std::size_t>> kept_states;
    const std::size_t keep_s = fraction_count(spec.keep_state_fraction, H);
    for (auto d : sorted(kept)) {
      const auto order = rank_desc(scores.state.at(i).at(d), all_states);
      kept_states[d] = {order.begin(), order.begin() + static_cast<std::ptrdiff_t>(keep_s)};
      auto zeroed = sorted({order.begin() + static_cast<std::ptrdiff_t>(keep_s), order.end()});
      if (!zeroed.empty()) lm.zeroed_states[d] = std::move(zeroed);
    }

    const auto by_change = rank_desc(scores.channel_change.at(i), sorted(kept));
    const std::size_t upd_c = fraction_count(spec.update_channel_fraction, kept.size());
    lm.trainable_channels = sorted({by_change.begin(), by_change.begin() + static_cast<std::ptrdiff_t>(upd_c)});
    for (auto d : lm.trainable_channels) {
      const auto pool = sorted(kept_states.at(d));
      const auto order = rank_desc(scores.state_change.at(i).at(d), pool);
      const std::size_t upd_s = fraction_count(spec.update_state_fraction, pool.size());
      lm.trainable_states[d] = sorted({order.begin(), order.begin() + static_cast<std::ptrdiff_t>(upd_s)});
    }
    if (lm.trainable_channels.empty()) {
      throw std::invalid_argument("SDLoRA selection produced no trainable channels in layer " + std::to_string(i));
    }
    mask.layers.push_back(std::move(lm));
  }
  return mask;
}

DimensionMask sdlora_select(const StackedModel& model, const Dataset& data, const SDLoRASpec& spec,
                            LossKind loss, std::uint64_t seed, SelectionScores* scores_out) {
  validate_spec(spec);
  if (data.empty()) throw std::invalid_argument("sdlora_select: empty dataset");
  // Warmup owns a private copy; the caller's model is never modified.
  AdaptedModel warm(model);
  for (std::size_t i = 0; i < model.arch.layers; ++i)
    for (const auto& f : ssm_fields(model.arch.kind)) warm.make_trainable(layer_param(i, f));

  Optimizer opt(OptimizerKind::adamw);
  const std::vector<std::string> names = warm.trainable_names();
  RngStream dropout_rng(seed, 3);
  for (std::size_t k = 0; k < spec.warmup_batches; ++k) {
    Graph g;
    const std::vector<std::size_t> batch{k % data.size()};
    Expr l = batch_loss(g, warm, data, batch, loss, ForwardContext{true, &dropout_rng});
    if (!std::isfinite(l.value().item())) {
      throw TrainingError("non-finite loss during selection warmup at batch " + std::to_string(k + 1), k + 1);
    }
    opt.step(warm.trainable(), g.backward(l, names), warm.masks(), spec.warmup_learning_rate);
  }
  const StackedModel warmed = warm.merged();

  SelectionScores scores;
  score_state_magnitudes(warmed, data, scores);
  score_changes(model, warmed, scores);
  DimensionMask mask = select_dimensions(model.arch, scores, spec);
  if (scores_out) *scores_out = std::move(scores);
  return mask;
}

}  // namespace ssmtune
