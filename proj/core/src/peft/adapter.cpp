// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/peft/adapter.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <stdexcept>

namespace ssmtune {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

void check_fraction(double f, const char* name) {
  if (!(f > 0.0 && f <= 1.0)) {
    throw std::invalid_argument(std::string(name) + " must lie in (0, 1], got " + std::to_string(f));
  }
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

std::string adapter_kind(const AdapterSpec& spec) {
  return std::visit(Overloaded{
                        [](const FullSpec&) { return std::string("full"); },
                        [](const LoRASpec&) { return std::string("lora"); },
                        [](const BitFitSpec&) { return std::string("bitfit"); },
                        [](const PromptTuningSpec&) { return std::string("prompt"); },
                        [](const PrefixTuningSpec&) { return std::string("prefix"); },
                        [](const InitialStateSpec&) { return std::string("initial_state"); },
                        [](const SDLoRASpec& s) {
                          return std::string(s.sparse_projection ? "sdt" : "sdlora");
                        },
                    },
                    spec);
}

void validate_spec(const AdapterSpec& spec) {
  std::visit(Overloaded{
                 [](const FullSpec&) {},
                 [](const BitFitSpec&) {},
                 [](const InitialStateSpec&) {},
                 [](const LoRASpec& s) {
                   if (s.rank < 1) throw std::invalid_argument("lora.rank must be >= 1");
                   if (!(s.alpha > 0.0)) throw std::invalid_argument("lora.alpha must be positive");
                   if (!(s.dropout >= 0.0 && s.dropout < 1.0)) {
                     throw std::invalid_argument("lora.dropout must lie in [0, 1)");
                   }
                   if (s.targets.empty()) throw std::invalid_argument("lora.targets must not be empty");
                 },
                 [](const PromptTuningSpec& s) {
                   if (s.length < 1) throw std::invalid_argument("prompt.length must be >= 1");
                 },
                 [](const PrefixTuningSpec& s) {
                   if (s.length < 1) throw std::invalid_argument("prefix.length must be >= 1");
                 },
                 [](const SDLoRASpec& s) {
                   check_fraction(s.keep_channel_fraction, "sdlora.keep_channel_fraction");
                   check_fraction(s.keep_state_fraction, "sdlora.keep_state_fraction");
                   check_fraction(s.update_channel_fraction, "sdlora.update_channel_fraction");
                   check_fraction(s.update_state_fraction, "sdlora.update_state_fraction");
                   if (!s.sparse_projection && s.proj_lora_rank < 1) {
                     throw std::invalid_argument("sdlora.proj_lora_rank must be >= 1");
                   }
                   if (!(s.proj_lora_alpha > 0.0)) {
                     throw std::invalid_argument("sdlora.proj_lora_alpha must be positive");
                   }
                   if (s.warmup_batches < 1) throw std::invalid_argument("sdlora.warmup_batches must be >= 1");
                   if (!(s.warmup_learning_rate > 0.0)) {
                     throw std::invalid_argument("sdlora.warmup_learning_rate must be positive");
                   }
                 },
             },
             spec);
}

Tensor lora_merge(const Tensor& W, const LoRAFactors& f) {
  if (f.down.rank() != 2 || f.up.rank() != 2 || f.up.cols() != f.down.rows() ||
      f.up.rows() != W.rows() || f.down.cols() != W.cols()) {
    throw ShapeError("lora_merge: factors " + shape_str(f.up.shape()) + " x " +
                     shape_str(f.down.shape()) + " do not fit " + shape_str(W.shape()));
  }
  return W + f.scale() * matmul(f.up, f.down);
}

std::size_t fraction_count(double fraction, std::size_t count) {
  if (!(fraction > 0.0)) return 0;
  const auto n = static_cast<std::size_t>(std::floor(fraction * static_cast<double>(count) + 0.5 + 1e-9));
  return std::clamp<std::size_t>(n, 1, std::max<std::size_t>(count, 1));
}

AdaptedModel::AdaptedModel(StackedModel base) : base_(std::move(base)) {}

void AdaptedModel::require_model_param(const std::string& name) const {
  if (!base_.params.contains(name)) throw std::invalid_argument("model has no parameter '" + name + "'");
}

void AdaptedModel::require_fresh(const std::string& name) const {
  if (trainable_.contains(name) || lora_.contains(name)) {
    throw std::invalid_argument("parameter '" + name + "' is already adapted");
  }
}

std::vector<std::string> AdaptedModel::trainable_names() const {
  std::vector<std::string> names;
  names.reserve(trainable_.size());
  for (const auto& [name, t] : trainable_) names.push_back(name);
  return names;
}

std::size_t AdaptedModel::trainable_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : trainable_) {
    auto it = masks_.find(name);
    n += it == masks_.end() ? t.size() : static_cast<std::size_t>(it->second.sum());
  }
  return n;
}

void AdaptedModel::make_trainable(const std::string& name) {
  require_model_param(name);
  require_fresh(name);
  trainable_[name] = base_.param(name);
}

void AdaptedModel::make_masked_trainable(const std::string& name, Tensor mask) {
  require_model_param(name);
  require_fresh(name);
  if (mask.shape() != base_.param(name).shape()) {
    throw ShapeError("mask for '" + name + "' has shape " + shape_str(mask.shape()) +
                     ", parameter has " + shape_str(base_.param(name).shape()));
  }
  for (double v : mask.data()) {
    if (v != 0.0 && v != 1.0) throw std::invalid_argument("mask for '" + name + "' is not 0/1");
  }
  if (mask.sum() == 0.0) return;
  trainable_[name] = base_.param(name);
  masks_[name] = std::move(mask);
}

void AdaptedModel::add_lora(const std::string& name, std::size_t rank, double alpha, RngStream& rng) {
  require_model_param(name);
  require_fresh(name);
  const Tensor& W = base_.param(name);
  if (W.rank() != 2) throw std::invalid_argument("LoRA target '" + name + "' is not a matrix");
  if (rank < 1) throw std::invalid_argument("LoRA rank must be >= 1");
  const std::size_t m = W.rows(), n = W.cols();
  LoraEntry e{"lora." + name + ".down", "lora." + name + ".up", alpha, rank};
  trainable_[e.down] = rng_draw(rng, Normal{0.0, 1.0 / std::sqrt(static_cast<double>(n))}, {rank, n});
  trainable_[e.up] = Tensor(Shape{m, rank});
  lora_[name] = std::move(e);
}

void AdaptedModel::set_lora_dropout(double p) {
  if (!(p >= 0.0 && p < 1.0)) throw std::invalid_argument("LoRA dropout must lie in [0, 1)");
  lora_dropout_ = p;
}

LoRAFactors AdaptedModel::lora_factors(const std::string& name) const {
  const LoraEntry& e = lora_.at(name);
  return LoRAFactors{trainable_.at(e.down), trainable_.at(e.up), e.alpha};
}

void AdaptedModel::add_prompt(std::size_t length) {
  if (length < 1) throw std::invalid_argument("prompt length must be >= 1");
  if (prompt_length_ > 0) throw std::invalid_argument("prompt already added");
  prompt_length_ = length;
  trainable_["prompt"] = Tensor(Shape{arch().channels, length});
}

void AdaptedModel::add_prefix(std::size_t length, PrefixReparam reparam, std::size_t width,
                              RngStream& rng) {
  if (length < 1) throw std::invalid_argument("prefix length must be >= 1");
  if (prefix_length_ > 0) throw std::invalid_argument("prefix already added");
  prefix_length_ = length;
  prefix_reparam_ = reparam;
  const std::size_t D = arch().channels;
  for (std::size_t i = 0; i < arch().layers; ++i) {
    const std::string base = "prefix." + std::to_string(i);
    if (reparam == PrefixReparam::direct) {
      trainable_[base] = Tensor(Shape{D, length});
    } else {
      trainable_[base + ".embed"] = rng_draw(rng, Normal{0.0, 1.0}, {D, length});
    }
  }
  if (reparam == PrefixReparam::mlp) {
    if (width == 0) width = 4 * D;
    // Zero output layer: the injected prefix starts at zero.
    trainable_["prefix_mlp.w1"] = rng_draw(rng, Normal{0.0, 1.0 / std::sqrt(static_cast<double>(D))}, {width, D});
    trainable_["prefix_mlp.b1"] = Tensor(Shape{width, 1});
    trainable_["prefix_mlp.w2"] = Tensor(Shape{D, width});
    trainable_["prefix_mlp.b2"] = Tensor(Shape{D, 1});
  }
}

ModelOutputs AdaptedModel::forward(Graph& graph, const Tensor& x, const ForwardContext& ctx) const {
  return forward(graph, graph.constant(x), ctx);
}

ModelOutputs AdaptedModel::forward(Graph& g, Expr x, const ForwardContext& ctx) const {
  std::map<std::string, Expr> leaves;
  // Batches share one graph, so later forwards reuse the registered leaves.
  for (const auto& [name, t] : trainable_) {
    leaves.emplace(name, g.has_parameter(name) ? g.parameter_expr(name) : g.parameter(name, t));
  }

  const bool drop = ctx.training && lora_dropout_ > 0.0;
  if (drop && ctx.rng == nullptr) throw std::invalid_argument("LoRA dropout needs an RNG while training");

  ParamFn fn = [&](const std::string& name) -> Expr {
    if (auto it = lora_.find(name); it != lora_.end()) {
      const LoraEntry& e = it->second;
      Expr down = leaves.at(e.down);
      if (drop) {
        // Input-feature dropout shared across positions: drop columns of down.
        Tensor keep(Shape{1, down.value().cols()});
        for (auto& v : keep.data()) v = ctx.rng->next_double() < lora_dropout_ ? 0.0 : 1.0 / (1.0 - lora_dropout_);
        down = down * g.constant(std::move(keep));
      }
      Expr delta = scale(matmul(leaves.at(e.up), down), e.alpha / static_cast<double>(e.rank));
      return g.constant(base_.param(name)) + delta;
    }
    if (auto it = masks_.find(name); it != masks_.end()) {
      const Tensor& mask = it->second;
      Tensor frozen_part = base_.param(name);
      for (std::size_t k = 0; k < frozen_part.size(); ++k) frozen_part[k] *= 1.0 - mask[k];
      return leaves.at(name) * g.constant(mask) + g.constant(std::move(frozen_part));
    }
    if (auto it = leaves.find(name); it != leaves.end()) return it->second;
    return g.constant(base_.param(name));
  };

  ForwardOptions opts;
  if (prompt_length_ > 0) opts.prompt = leaves.at("prompt");
  if (prefix_length_ > 0) {
    for (std::size_t i = 0; i < arch().layers; ++i) {
      const std::string base = "prefix." + std::to_string(i);
      if (prefix_reparam_ == PrefixReparam::direct) {
        opts.layer_prefix.push_back(leaves.at(base));
      } else {
        Expr hidden = relu(matmul(leaves.at("prefix_mlp.w1"), leaves.at(base + ".embed")) +
                           leaves.at("prefix_mlp.b1"));
        opts.layer_prefix.push_back(matmul(leaves.at("prefix_mlp.w2"), hidden) +
                                    leaves.at("prefix_mlp.b2"));
      }
    }
  }
  return model_forward(g, arch(), fn, x, opts);
}

StackedModel AdaptedModel::merged() const {
  StackedModel out = base_;
  for (auto& [name, value] : out.params) {
    if (lora_.contains(name)) {
      value = lora_merge(value, lora_factors(name));
    } else if (auto it = masks_.find(name); it != masks_.end()) {
      const Tensor& theta = trainable_.at(name);
      for (std::size_t k = 0; k < value.size(); ++k) {
        if (it->second[k] == 1.0) value[k] = theta[k];
      }
    } else if (auto t = trainable_.find(name); t != trainable_.end()) {
      value = t->second;
    }
  }
  return out;
}

std::vector<std::string> resolve_targets(const StackedModel& model,
                                         const std::vector<std::string>& targets) {
  std::vector<std::string> matrices;
  for (const auto& [name, t] : model.params) {
    if (t.rank() == 2 && t.rows() > 1 && t.cols() > 1) matrices.push_back(name);
  }
  std::vector<std::string> out;
  for (const auto& target : targets) {
    bool found = false;
    for (const auto& name : matrices) {
      if (name == target || ends_with(name, "." + target)) {
        if (std::find(out.begin(), out.end(), name) == out.end()) out.push_back(name);
        found = true;
      }
    }
    if (!found) {
      std::ostringstream os;
      os << "unknown LoRA target '" << target << "'; valid names:";
      for (const auto& name : matrices) os << ' ' << name;
      throw std::invalid_argument(os.str());
    }
  }
  return out;
}

AdaptedModel build_adapter(const StackedModel& model, const AdapterSpec& spec, RngStream& rng) {
  validate_spec(spec);
  AdaptedModel out(model);
  std::visit(Overloaded{
                 [&](const FullSpec&) {
                   for (const auto& [name, t] : model.params) {
                     if (!is_initial_state(name)) out.make_trainable(name);
                   }
                 },
                 [&](const LoRASpec& s) {
                   for (const auto& name : resolve_targets(model, s.targets)) {
                     out.add_lora(name, s.rank, s.alpha, rng);
                   }
                   out.set_lora_dropout(s.dropout);
                 },
                 [&](const BitFitSpec&) {
                   for (const auto& [name, t] : model.params) {
                     if (ends_with(name, ".beta") || ends_with(name, ".beta_dt") || name == "head.b") {
                       out.make_trainable(name);
                     }
                   }
                 },
                 [&](const PromptTuningSpec& s) { out.add_prompt(s.length); },
                 [&](const PrefixTuningSpec& s) {
                   out.add_prefix(s.length, s.reparam, s.mlp_width, rng);
                 },
                 [&](const InitialStateSpec&) {
                   for (const auto& [name, t] : model.params) {
                     if (is_initial_state(name)) out.make_trainable(name);
                   }
                 },
                 [&](const SDLoRASpec&) {
                   throw std::invalid_argument(
                       "SDLoRA adapters need a dimension mask; use sdlora_select then sdlora_apply");
                 },
             },
             spec);
  return out;
}

namespace {

void check_mask(const ModelArch& arch, const DimensionMask& mask) {
  if (mask.layers.size() != arch.layers) {
    throw std::invalid_argument("dimension mask has " + std::to_string(mask.layers.size()) +
                                " layers, model has " + std::to_string(arch.layers));
  }
  const auto in_range = [](std::size_t v, std::size_t n, const char* what) {
    if (v >= n) throw std::invalid_argument(std::string("dimension mask: ") + what + " index out of range");
  };
  for (const LayerMask& lm : mask.layers) {
    const std::set<std::size_t> zeroed(lm.zeroed_channels.begin(), lm.zeroed_channels.end());
    for (auto d : lm.zeroed_channels) in_range(d, arch.channels, "channel");
    for (const auto& [d, hs] : lm.zeroed_states) {
      in_range(d, arch.channels, "channel");
      for (auto h : hs) in_range(h, arch.states, "state");
    }
    for (auto d : lm.trainable_channels) {
      in_range(d, arch.channels, "channel");
      if (zeroed.contains(d)) throw std::invalid_argument("dimension mask: trainable channel is zeroed");
    }
    for (const auto& [d, hs] : lm.trainable_states) {
      const auto z = lm.zeroed_states.find(d);
      for (auto h : hs) {
        in_range(h, arch.states, "state");
        if (z != lm.zeroed_states.end() && std::find(z->second.begin(), z->second.end(), h) != z->second.end()) {
          throw std::invalid_argument("dimension mask: trainable state is zeroed");
        }
      }
    }
  }
}

}  // namespace

AdaptedModel sdlora_apply(const StackedModel& model, const DimensionMask& mask,
                          const SDLoRASpec& spec, RngStream& rng) {
  validate_spec(spec);
  check_mask(model.arch, mask);
  const ModelArch& arch = model.arch;
  const std::size_t D = arch.channels, H = arch.states;
  StackedModel base = model;

  // Structural zeroing first, so the adapter's frozen values already carry it.
  for (std::size_t i = 0; i < arch.layers; ++i) {
    const LayerMask& lm = mask.layers[i];
    if (arch.kind == LayerKind::s4) {
      Tensor& c = base.param(layer_param(i, "c"));
      for (auto d : lm.zeroed_channels)
        for (std::size_t h = 0; h < H; ++h) c.at(d, h) = 0.0;
      for (const auto& [d, hs] : lm.zeroed_states)
        for (auto h : hs) c.at(d, h) = 0.0;
    } else {
      Tensor& a = base.param(layer_param(i, "a"));
      for (auto d : lm.zeroed_channels)
        for (std::size_t h = 0; h < H; ++h) a.at(d, h) = kMaskedStateValue;
      for (const auto& [d, hs] : lm.zeroed_states)
        for (auto h : hs) a.at(d, h) = kMaskedStateValue;
    }
  }

  AdaptedModel out(std::move(base));
  for (std::size_t i = 0; i < arch.layers; ++i) {
    const LayerMask& lm = mask.layers[i];
    Tensor state_mask(Shape{D, H});
    Tensor channel_mask(Shape{D, 1});
    std::set<std::size_t> state_rows;
    for (auto d : lm.trainable_channels) {
      channel_mask[d] = 1.0;
      if (auto it = lm.trainable_states.find(d); it != lm.trainable_states.end()) {
        for (auto h : it->second) {
          state_mask.at(d, h) = 1.0;
          state_rows.insert(h);
        }
      }
    }
    std::string projection;
    if (arch.kind == LayerKind::s4) {
      out.make_masked_trainable(layer_param(i, "a"), state_mask);
      out.make_masked_trainable(layer_param(i, "b"), state_mask);
      out.make_masked_trainable(layer_param(i, "c"), state_mask);
      out.make_masked_trainable(layer_param(i, "log_dt"), channel_mask);
      projection = layer_param(i, "W");
      if (spec.sparse_projection) {
        // Column d of W mixes channel d's output.
        Tensor cols(Shape{D, D});
        for (auto d : lm.trainable_channels)
          for (std::size_t r = 0; r < D; ++r) cols.at(r, d) = 1.0;
        out.make_masked_trainable(projection, cols);
      }
      if (spec.tune_residual_bias) {
        out.make_trainable(layer_param(i, "u"));
        out.make_trainable(layer_param(i, "beta"));
      }
    } else {
      out.make_masked_trainable(layer_param(i, "a"), state_mask);
      Tensor wmask(Shape{H, D});
      for (auto d : lm.trainable_channels)
        for (std::size_t h = 0; h < H; ++h) wmask.at(h, d) = 1.0;
      for (auto h : state_rows)
        for (std::size_t d = 0; d < D; ++d) wmask.at(h, d) = 1.0;
      out.make_masked_trainable(layer_param(i, "w_b"), wmask);
      out.make_masked_trainable(layer_param(i, "w_c"), wmask);
      projection = layer_param(i, "w_in");
      if (spec.sparse_projection) {
        // Row d of w_in produces channel d's input.
        Tensor rows(Shape{D, D});
        for (auto d : lm.trainable_channels)
          for (std::size_t c = 0; c < D; ++c) rows.at(d, c) = 1.0;
        out.make_masked_trainable(projection, rows);
      }
      if (spec.tune_residual_bias) {
        out.make_trainable(layer_param(i, "u"));
        out.make_trainable(layer_param(i, "beta_dt"));
      }
    }
    if (!spec.sparse_projection) out.add_lora(projection, spec.proj_lora_rank, spec.proj_lora_alpha, rng);
  }
  if (spec.tune_residual_bias && arch.classes > 0) out.make_trainable("head.b");
  return out;
}

double param_fraction(const StackedModel& model, const AdaptedModel& adapted) {
  return 100.0 * static_cast<double>(adapted.trainable_count()) / static_cast<double>(model.total_params());
}

}  // namespace ssmtune
