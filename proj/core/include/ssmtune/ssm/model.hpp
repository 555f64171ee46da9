// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ssmtune/num/autodiff.hpp"
#include "ssmtune/num/rng.hpp"
#include "ssmtune/ssm/s4.hpp"
#include "ssmtune/ssm/s6.hpp"

namespace ssmtune {

enum class LayerKind { s4, s6 };

const char* to_string(LayerKind k);
LayerKind parse_layer_kind(const std::string& s);

struct ModelArch {
  std::size_t layers = 1;    // L
  std::size_t channels = 8;  // D
  std::size_t states = 4;    // H
  std::size_t dt_rank = 1;   // r, S6 layers only
  std::size_t classes = 0;   // K; 0 means per-token regression without a head
  LayerKind kind = LayerKind::s4;
  std::vector<Activation> activations;  // one per layer; empty means all relu
  Discretization method = Discretization::zoh;

  Activation activation(std::size_t layer) const;
  /// Throws std::invalid_argument on zero extents or a wrong activation count.
  void validate() const;

  bool operator==(const ModelArch&) const = default;
};

/// "layers.{i}.{field}".
std::string layer_param(std::size_t layer, const std::string& field);
/// Parameter fields of one layer, in canonical order.
const std::vector<std::string>& layer_fields(LayerKind kind);
/// Fields holding per-channel SSM dynamics (trained during selection warmup).
const std::vector<std::string>& ssm_fields(LayerKind kind);
bool is_initial_state(const std::string& name);

struct StackedModel {
  ModelArch arch;
  ParamMap params;

  DeepS4LayerParams s4_layer(std::size_t i) const;
  S6Params s6_layer(std::size_t i) const;
  void set_s4_layer(std::size_t i, const DeepS4LayerParams& layer);
  void set_s6_layer(std::size_t i, const S6Params& layer);

  const Tensor& param(const std::string& name) const;
  Tensor& param(const std::string& name);

  /// Parameter count of the model; initial states are not model parameters.
  std::size_t total_params() const;
};

/// Random initialization. S4: a_h = -(h+1), b, c ~ N(0, 1/H),
/// log_dt ~ U[ln 1e-3, ln 1e-1], W ~ N(0, 1/D), beta = 0, u = 1, h0 = 0.
StackedModel init_model(const ModelArch& arch, RngStream& rng);

/// Supplies the expression to use for a named parameter.
using ParamFn = std::function<Expr(const std::string& name)>;

/// Every parameter as a graph constant.
ParamFn constant_params(Graph& graph, const ParamMap& params);

struct ForwardOptions {
  /// Per-layer sequences [D, M] prepended to that layer's input; the layer's
  /// output keeps only the positions after the prefix. Invalid entries are skipped.
  std::vector<Expr> layer_prefix;
  /// Sequence [D, M] prepended once at the input; stripped from the final output.
  Expr prompt;
};

struct ModelOutputs {
  Expr tokens;  // [D, N]
  Expr logits;  // [K, 1] when the architecture has a head
};

ModelOutputs model_forward(Graph& graph, const ModelArch& arch, const ParamFn& params, Expr x,
                           const ForwardOptions& options = {});

/// Graph form of one layer; x is [D, N].
Expr s4_layer_graph(Graph& graph, const ModelArch& arch, std::size_t layer, const ParamFn& params,
                    Expr x);
Expr s6_layer_graph(Graph& graph, const ModelArch& arch, std::size_t layer, const ParamFn& params,
                    Expr x);

/// Plain evaluation of the per-token outputs.
Tensor model_tokens(const StackedModel& model, const Tensor& x);
/// Plain evaluation of the head logits [K, 1].
Tensor model_logits(const StackedModel& model, const Tensor& x);

}  // namespace ssmtune
