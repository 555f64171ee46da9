// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/ssm/s4.hpp"

#include <cmath>
#include <stdexcept>

namespace ssmtune {

const char* to_string(Discretization m) { return m == Discretization::zoh ? "zoh" : "bilinear"; }

const char* to_string(Activation a) { return a == Activation::relu ? "relu" : "linear"; }

Discretization parse_discretization(const std::string& s) {
  if (s == "zoh") return Discretization::zoh;
  if (s == "bilinear") return Discretization::bilinear;
  throw std::invalid_argument("unknown discretization '" + s + "' (expected zoh or bilinear)");
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "linear") return Activation::linear;
  throw std::invalid_argument("unknown activation '" + s + "' (expected relu or linear)");
}

DiscretePair discretize(double a, double b, double dt, Discretization method) {
  if (!(dt > 0.0)) throw std::invalid_argument("discretize: dt must be positive");
  const double x = dt * a;
  if (method == Discretization::zoh) {
    // (e^{x} - 1) / a = dt * expm1(x) / x, exact limit dt at a = 0.
    const double rel = x == 0.0 ? 1.0 : std::expm1(x) / x;
    return {std::exp(x), dt * rel * b};
  }
  const double denom = 1.0 - 0.5 * x;
  if (denom == 0.0) throw std::invalid_argument("discretize: bilinear singular at dt*a = 2");
  return {(1.0 + 0.5 * x) / denom, dt * b / denom};
}

DiscreteChannel discretize_channel(const S4ChannelParams& ch, Discretization method) {
  const std::size_t H = ch.state_dim();
  if (ch.b.size() != H || ch.c.size() != H) {
    throw ShapeError("discretize_channel: a, b, c lengths differ");
  }
  const double dt = std::exp(ch.log_dt);
  DiscreteChannel out{std::vector<double>(H), std::vector<double>(H), ch.c};
  for (std::size_t h = 0; h < H; ++h) {
    const DiscretePair p = discretize(ch.a_diag[h], ch.b[h], dt, method);
    out.a_bar[h] = p.a_bar;
    out.b_bar[h] = p.b_bar;
  }
  return out;
}

ScanResult s4_scan(const DiscreteChannel& ch, std::span<const double> x,
                   std::span<const double> h0) {
  const std::size_t H = ch.state_dim();
  if (h0.size() != H) throw ShapeError("s4_scan: h0 length does not match state size");
  ScanResult r{std::vector<double>(x.size()), std::vector<double>(h0.begin(), h0.end())};
  for (std::size_t t = 0; t < x.size(); ++t) {
    double y = 0.0;
    for (std::size_t h = 0; h < H; ++h) {
      r.h_final[h] = ch.a_bar[h] * r.h_final[h] + ch.b_bar[h] * x[t];
      y += ch.c[h] * r.h_final[h];
    }
    r.y[t] = y;
  }
  return r;
}

ScanResult s4_scan(const S4ChannelParams& ch, std::span<const double> x, Discretization method) {
  const std::vector<double> zeros(ch.state_dim(), 0.0);
  return s4_scan(discretize_channel(ch, method), x,
                 ch.h0.empty() ? std::span<const double>(zeros) : std::span<const double>(ch.h0));
}

std::vector<double> s4_kernel(const DiscreteChannel& ch, std::size_t n) {
  std::vector<double> k(n);
  std::vector<double> p = ch.b_bar;
  for (std::size_t t = 0; t < n; ++t) {
    double s = 0.0;
    for (std::size_t h = 0; h < p.size(); ++h) {
      s += ch.c[h] * p[h];
      p[h] *= ch.a_bar[h];
    }
    k[t] = s;
  }
  return k;
}

std::vector<double> s4_kernel(const S4ChannelParams& ch, std::size_t n, Discretization method) {
  return s4_kernel(discretize_channel(ch, method), n);
}

std::vector<double> s4_conv_forward(std::span<const double> kernel, std::span<const double> x) {
  if (kernel.size() != x.size()) {
    throw ShapeError("s4_conv_forward: kernel length " + std::to_string(kernel.size()) +
                     " differs from input length " + std::to_string(x.size()));
  }
  std::vector<double> y(x.size(), 0.0);
  for (std::size_t t = 0; t < x.size(); ++t) {
    double s = 0.0;
    for (std::size_t m = 0; m <= t; ++m) s += kernel[t - m] * x[m];
    y[t] = s;
  }
  return y;
}

S4ChannelParams DeepS4LayerParams::channel(std::size_t d) const {
  const Tensor ar = a.row(d), br = b.row(d), cr = c.row(d), hr = h0.row(d);
  return S4ChannelParams{ar.storage(), br.storage(), cr.storage(), log_dt[d], hr.storage()};
}

void DeepS4LayerParams::validate() const {
  const std::size_t D = a.rows(), H = a.cols();
  const auto expect = [](const Tensor& t, Shape s, const char* name) {
    if (t.shape() != s) {
      throw ShapeError(std::string("deep S4 layer: ") + name + " has shape " + shape_str(t.shape()) +
                       ", expected " + shape_str(s));
    }
  };
  expect(a, {D, H}, "a");
  expect(b, {D, H}, "b");
  expect(c, {D, H}, "c");
  expect(h0, {D, H}, "h0");
  expect(log_dt, {D, 1}, "log_dt");
  expect(W, {D, D}, "W");
  expect(beta, {D, 1}, "beta");
  expect(u, {D, 1}, "u");
}

Tensor s4_layer_premix(const DeepS4LayerParams& layer, const Tensor& x, Discretization method) {
  layer.validate();
  const std::size_t D = layer.channels(), N = x.cols();
  if (x.rank() != 2 || x.rows() != D) {
    throw ShapeError("deep S4 layer: input " + shape_str(x.shape()) + " does not have " +
                     std::to_string(D) + " rows");
  }
  Tensor s(Shape{D, N});
  for (std::size_t d = 0; d < D; ++d) {
    const S4ChannelParams ch = layer.channel(d);
    const Tensor xr = x.row(d);
    const ScanResult r = s4_scan(discretize_channel(ch, method), xr.data(), ch.h0);
    for (std::size_t t = 0; t < N; ++t) s.at(d, t) = r.y[t];
  }
  return s;
}

Tensor deep_s4_layer_forward(const DeepS4LayerParams& layer, const Tensor& x,
                             Activation activation, Discretization method) {
  const Tensor s = s4_layer_premix(layer, x, method);
  Tensor y = matmul(layer.W, s);
  for (std::size_t d = 0; d < y.rows(); ++d) {
    for (std::size_t t = 0; t < y.cols(); ++t) {
      double v = y.at(d, t) + layer.beta[d] + layer.u[d] * x.at(d, t);
      if (activation == Activation::relu && v < 0.0) v = 0.0;
      y.at(d, t) = v;
    }
  }
  return y;
}

}  // namespace ssmtune
