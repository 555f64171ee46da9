// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ssmtune/num/tensor.hpp"

namespace ssmtune {

/// Selective SSM block with an input projection.
///   z_t = W_in x_t
///   delta_t = softplus(w_dt_up (w_dt_down z_t) + beta_dt)
///   B_t = w_b z_t,  C_t = w_c z_t
///   a_bar = exp(delta_t[d] a[d,:]),  b_bar = delta_t[d] B_t
///   h_t[d] = a_bar ⊙ h_{t-1}[d] + b_bar z_t[d],  y_t[d] = <C_t, h_t[d]>
struct S6Params {
  Tensor a;          // [D, H]
  Tensor w_b;        // [H, D]
  Tensor w_c;        // [H, D]
  Tensor w_dt_down;  // [r, D]
  Tensor w_dt_up;    // [D, r]
  Tensor beta_dt;    // [D, 1]
  Tensor w_in;       // [D, D]
  Tensor u;          // [D, 1], residual on z
  Tensor h0;         // [D, H]

  std::size_t channels() const { return a.rows(); }
  std::size_t state_dim() const { return a.cols(); }
  std::size_t dt_rank() const { return w_dt_down.rows(); }
  /// Throws ShapeError naming the first inconsistent field; r >= 1 is required.
  void validate() const;
};

/// Input-dependent quantities of the block for one sequence.
struct S6Induced {
  Tensor z;      // [D, N]
  Tensor delta;  // [D, N]
  Tensor B;      // [H, N]
  Tensor C;      // [H, N]
};

S6Induced s6_induced(const S6Params& p, const Tensor& x);

/// Selective-scan outputs y, [D, N]; no residual and no activation.
Tensor s6_forward(const S6Params& p, const Tensor& x);

/// Scan driven by externally supplied induced quantities and a.
Tensor s6_scan(const Tensor& a, const S6Induced& induced, const Tensor& h0);

/// Stacked [w_b; w_c; w_dt_down], (2H + r) x D.
Tensor stacked_w_s6(const S6Params& p);

}  // namespace ssmtune
