// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/ssm/model.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmtune {

const char* to_string(LayerKind k) { return k == LayerKind::s4 ? "s4" : "s6"; }

LayerKind parse_layer_kind(const std::string& s) {
  if (s == "s4") return LayerKind::s4;
  if (s == "s6") return LayerKind::s6;
  throw std::invalid_argument("unknown layer kind '" + s + "' (expected s4 or s6)");
}

Activation ModelArch::activation(std::size_t layer) const {
  return activations.empty() ? Activation::relu : activations.at(layer);
}

void ModelArch::validate() const {
  if (layers == 0 || channels == 0 || states == 0) {
    throw std::invalid_argument("model: layers, channels and states must be positive");
  }
  if (kind == LayerKind::s6 && dt_rank == 0) {
    throw std::invalid_argument("model: S6 layers need dt_rank >= 1");
  }
  if (!activations.empty() && activations.size() != layers) {
    throw std::invalid_argument("model: " + std::to_string(activations.size()) +
                                " activations for " + std::to_string(layers) + " layers");
  }
}

std::string layer_param(std::size_t layer, const std::string& field) {
  return "layers." + std::to_string(layer) + "." + field;
}

const std::vector<std::string>& layer_fields(LayerKind kind) {
  static const std::vector<std::string> s4{"a", "b", "c", "log_dt", "h0", "W", "beta", "u"};
  static const std::vector<std::string> s6{"a",       "w_b",  "w_c", "w_dt_down", "w_dt_up",
                                           "beta_dt", "w_in", "u",   "h0"};
  return kind == LayerKind::s4 ? s4 : s6;
}

const std::vector<std::string>& ssm_fields(LayerKind kind) {
  static const std::vector<std::string> s4{"a", "b", "c", "log_dt"};
  static const std::vector<std::string> s6{"a", "w_b", "w_c", "w_dt_down", "w_dt_up"};
  return kind == LayerKind::s4 ? s4 : s6;
}

bool is_initial_state(const std::string& name) {
  return name.size() >= 3 && name.compare(name.size() - 3, 3, ".h0") == 0;
}

const Tensor& StackedModel::param(const std::string& name) const {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("model has no parameter '" + name + "'");
  return it->second;
}

Tensor& StackedModel::param(const std::string& name) {
  auto it = params.find(name);
  if (it == params.end()) throw std::invalid_argument("model has no parameter '" + name + "'");
  return it->second;
}

DeepS4LayerParams StackedModel::s4_layer(std::size_t i) const {
  auto p = [&](const char* f) { return param(layer_param(i, f)); };
  return DeepS4LayerParams{p("a"),  p("b"), p("c"),    p("log_dt"),
                           p("h0"), p("W"), p("beta"), p("u")};
}

S6Params StackedModel::s6_layer(std::size_t i) const {
  auto p = [&](const char* f) { return param(layer_param(i, f)); };
  return S6Params{p("a"),       p("w_b"),  p("w_c"), p("w_dt_down"), p("w_dt_up"),
                  p("beta_dt"), p("w_in"), p("u"),   p("h0")};
}

void StackedModel::set_s4_layer(std::size_t i, const DeepS4LayerParams& l) {
  l.validate();
  params[layer_param(i, "a")] = l.a;
  params[layer_param(i, "b")] = l.b;
  params[layer_param(i, "c")] = l.c;
  params[layer_param(i, "log_dt")] = l.log_dt;
  params[layer_param(i, "h0")] = l.h0;
  params[layer_param(i, "W")] = l.W;
  params[layer_param(i, "beta")] = l.beta;
  params[layer_param(i, "u")] = l.u;
}

void StackedModel::set_s6_layer(std::size_t i, const S6Params& l) {
  l.validate();
  params[layer_param(i, "a")] = l.a;
  params[layer_param(i, "w_b")] = l.w_b;
  params[layer_param(i, "w_c")] = l.w_c;
  params[layer_param(i, "w_dt_down")] = l.w_dt_down;
  params[layer_param(i, "w_dt_up")] = l.w_dt_up;
  params[layer_param(i, "beta_dt")] = l.beta_dt;
  params[layer_param(i, "w_in")] = l.w_in;
  params[layer_param(i, "u")] = l.u;
  params[layer_param(i, "h0")] = l.h0;
}

std::size_t StackedModel::total_params() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) {
    if (!is_initial_state(name)) n += t.size();
  }
  return n;
}

namespace {

Tensor state_init(std::size_t D, std::size_t H) {
  Tensor a(Shape{D, H});
  for (std::size_t d = 0; d < D; ++d)
    for (std::size_t h = 0; h < H; ++h) a.at(d, h) = -static_cast<double>(h + 1);
  return a;
}

}  // namespace

StackedModel init_model(const ModelArch& arch, RngStream& rng) {
  arch.validate();
  const std::size_t D = arch.channels, H = arch.states;
  const double sd_h = 1.0 / std::sqrt(static_cast<double>(H));
  const double sd_d = 1.0 / std::sqrt(static_cast<double>(D));
  StackedModel m;
  m.arch = arch;
  for (std::size_t i = 0; i < arch.layers; ++i) {
    if (arch.kind == LayerKind::s4) {
      DeepS4LayerParams l;
      l.a = state_init(D, H);
      l.b = rng_draw(rng, Normal{0.0, sd_h}, {D, H});
      l.c = rng_draw(rng, Normal{0.0, sd_h}, {D, H});
      l.log_dt = rng_draw(rng, Uniform{std::log(1e-3), std::log(1e-1)}, {D, 1});
      l.h0 = Tensor(Shape{D, H});
      l.W = rng_draw(rng, Normal{0.0, sd_d}, {D, D});
      l.beta = Tensor(Shape{D, 1});
      l.u = Tensor(Shape{D, 1}, 1.0);
      m.set_s4_layer(i, l);
    } else {
      const std::size_t r = arch.dt_rank;
      S6Params l;
      l.a = state_init(D, H);
      l.w_b = rng_draw(rng, Normal{0.0, sd_d}, {H, D});
      l.w_c = rng_draw(rng, Normal{0.0, sd_d}, {H, D});
      l.w_dt_down = rng_draw(rng, Normal{0.0, sd_d}, {r, D});
      l.w_dt_up = rng_draw(rng, Normal{0.0, 1.0 / std::sqrt(static_cast<double>(r))}, {D, r});
      // Inverse softplus of dt ~ U[1e-3, 1e-1].
      l.beta_dt = rng_draw(rng, Uniform{1e-3, 1e-1}, {D, 1});
      for (auto& v : l.beta_dt.data()) v = std::log(std::expm1(v));
      l.w_in = rng_draw(rng, Normal{0.0, sd_d}, {D, D});
      l.u = Tensor(Shape{D, 1}, 1.0);
      l.h0 = Tensor(Shape{D, H});
      m.set_s6_layer(i, l);
    }
  }
  if (arch.classes > 0) {
    m.params["head.W"] = rng_draw(rng, Normal{0.0, sd_d}, {arch.classes, D});
    m.params["head.b"] = Tensor(Shape{arch.classes, 1});
  }
  return m;
}

ParamFn constant_params(Graph& graph, const ParamMap& params) {
  return [&graph, &params](const std::string& name) {
    auto it = params.find(name);
    if (it == params.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
    return graph.constant(it->second);
  };
}

namespace {

Expr activate(Expr x, Activation act) { return act == Activation::relu ? relu(x) : x; }

}  // namespace

Expr s4_layer_graph(Graph& graph, const ModelArch& arch, std::size_t i, const ParamFn& params,
                    Expr x) {
  (void)graph;
  auto p = [&](const char* f) { return params(layer_param(i, f)); };
  Expr a = p("a"), b = p("b"), c = p("c"), dt = exp(p("log_dt"));
  Expr dta = dt * a;
  Expr a_bar, b_bar;
  if (arch.method == Discretization::zoh) {
    a_bar = exp(dta);
    b_bar = dt * exprel(dta) * b;
  } else {
    Expr denom = add_scalar(scale(dta, -0.5), 1.0);
    a_bar = add_scalar(scale(dta, 0.5), 1.0) / denom;
    b_bar = dt * b / denom;
  }
  Expr s = linear_scan(a_bar, b_bar, c, p("h0"), x);
  Expr y = matmul(p("W"), s) + p("beta") + p("u") * x;
  return activate(y, arch.activation(i));
}

Expr s6_layer_graph(Graph& graph, const ModelArch& arch, std::size_t i, const ParamFn& params,
                    Expr x) {
  (void)graph;
  auto p = [&](const char* f) { return params(layer_param(i, f)); };
  Expr z = matmul(p("w_in"), x);
  Expr delta = softplus(matmul(p("w_dt_up"), matmul(p("w_dt_down"), z)) + p("beta_dt"));
  Expr B = matmul(p("w_b"), z);
  Expr C = matmul(p("w_c"), z);
  Expr y = selective_scan(p("a"), delta, B, C, z, p("h0"));
  return activate(y + p("u") * z, arch.activation(i));
}

ModelOutputs model_forward(Graph& graph, const ModelArch& arch, const ParamFn& params, Expr x,
                           const ForwardOptions& options) {
  if (x.value().rank() != 2 || x.value().rows() != arch.channels) {
    throw ShapeError("model: input " + shape_str(x.shape()) + " does not have " +
                     std::to_string(arch.channels) + " rows");
  }
  const std::size_t n = x.value().cols();
  Expr h = x;
  std::size_t prompt_len = 0;
  if (options.prompt.valid()) {
    prompt_len = options.prompt.value().cols();
    h = concat(options.prompt, h, 1);
  }
  for (std::size_t i = 0; i < arch.layers; ++i) {
    const bool has_prefix = i < options.layer_prefix.size() && options.layer_prefix[i].valid();
    std::size_t m = 0;
    if (has_prefix) {
      m = options.layer_prefix[i].value().cols();
      h = concat(options.layer_prefix[i], h, 1);
    }
    h = arch.kind == LayerKind::s4 ? s4_layer_graph(graph, arch, i, params, h)
                                   : s6_layer_graph(graph, arch, i, params, h);
    if (has_prefix) h = slice(h, 1, m, h.value().cols());
  }
  if (prompt_len > 0) h = slice(h, 1, prompt_len, prompt_len + n);
  ModelOutputs out{h, Expr()};
  if (arch.classes > 0) {
    Expr last = slice(h, 1, n - 1, n);
    out.logits = matmul(params("head.W"), last) + params("head.b");
  }
  return out;
}

Tensor model_tokens(const StackedModel& model, const Tensor& x) {
  Graph g;
  return model_forward(g, model.arch, constant_params(g, model.params), g.constant(x)).tokens.value();
}

Tensor model_logits(const StackedModel& model, const Tensor& x) {
  if (model.arch.classes == 0) throw std::invalid_argument("model has no classification head");
  Graph g;
  return model_forward(g, model.arch, constant_params(g, model.params), g.constant(x)).logits.value();
}

}  // namespace ssmtune
