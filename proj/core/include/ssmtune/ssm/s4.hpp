// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <span>
#include <string>
#include <vector>

#include "ssmtune/num/tensor.hpp"

namespace ssmtune {

enum class Discretization { zoh, bilinear };

enum class Activation { relu, linear };

const char* to_string(Discretization m);
const char* to_string(Activation a);
Discretization parse_discretization(const std::string& s);
Activation parse_activation(const std::string& s);

/// Discrete (a_bar, b_bar) for one diagonal entry.
struct DiscretePair {
  double a_bar;
  double b_bar;
};

/// zoh:      a_bar = e^{dt a},  b_bar = (e^{dt a} - 1) / a * b  (dt * b at a = 0)
/// bilinear: a_bar = (1 + dt a/2) / (1 - dt a/2),  b_bar = dt b / (1 - dt a/2)
/// Throws std::invalid_argument for dt <= 0 and for bilinear with dt a = 2.
DiscretePair discretize(double a, double b, double dt, Discretization method);

/// Continuous parameters of one channel.
struct S4ChannelParams {
  std::vector<double> a_diag;
  std::vector<double> b;
  std::vector<double> c;
  double log_dt = 0.0;
  std::vector<double> h0;

  std::size_t state_dim() const { return a_diag.size(); }
};

/// Discretized channel: everything the recurrence needs.
struct DiscreteChannel {
  std::vector<double> a_bar;
  std::vector<double> b_bar;
  std::vector<double> c;

  std::size_t state_dim() const { return a_bar.size(); }
};

DiscreteChannel discretize_channel(const S4ChannelParams& ch, Discretization method);

struct ScanResult {
  std::vector<double> y;
  std::vector<double> h_final;
};

/// h_t = a_bar ⊙ h_{t-1} + b_bar x_t,  y_t = <c, h_t>.
ScanResult s4_scan(const DiscreteChannel& ch, std::span<const double> x,
                   std::span<const double> h0);
/// Discretizes first; uses ch.h0 when it is non-empty, zeros otherwise.
ScanResult s4_scan(const S4ChannelParams& ch, std::span<const double> x, Discretization method);

/// K_k = <c, a_bar^k ⊙ b_bar> for k = 0..n-1.
std::vector<double> s4_kernel(const DiscreteChannel& ch, std::size_t n);
std::vector<double> s4_kernel(const S4ChannelParams& ch, std::size_t n, Discretization method);

/// Causal direct convolution y_t = sum_{m<=t} K_{t-m} x_m.
std::vector<double> s4_conv_forward(std::span<const double> kernel, std::span<const double> x);

/// One deep S4 layer with D channels sharing the state size H.
/// Per-channel tensors a, b, c, h0 are [D, H]; log_dt, beta, u are [D, 1]; W is [D, D].
struct DeepS4LayerParams {
  Tensor a;
  Tensor b;
  Tensor c;
  Tensor log_dt;
  Tensor h0;
  Tensor W;
  Tensor beta;
  Tensor u;

  std::size_t channels() const { return a.rows(); }
  std::size_t state_dim() const { return a.cols(); }
  S4ChannelParams channel(std::size_t d) const;
  /// Throws ShapeError naming the first inconsistent field.
  void validate() const;
};

/// Per-channel S4 outputs before mixing, [D, N].
Tensor s4_layer_premix(const DeepS4LayerParams& layer, const Tensor& x, Discretization method);

/// act(W S4(x) + beta + u ⊙ x), x and result [D, N].
Tensor deep_s4_layer_forward(const DeepS4LayerParams& layer, const Tensor& x,
                             Activation activation, Discretization method);

}  // namespace ssmtune
