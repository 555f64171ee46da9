// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <functional>
#include <map>
#include <string>

#include "ssmtune/num/autodiff.hpp"

namespace ssmtune {

/// Builds a scalar loss in `graph`. Every entry of the checked ParamMap is
/// registered as a parameter before the call; fetch them with
/// graph.parameter_expr(name).
using LossBuilder = std::function<Expr(Graph& graph)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central-difference comparison of every coordinate of every parameter.
/// Relative error denominator: max(|analytic|, |numeric|, 1e-8).
GradCheckResult grad_check_detailed(const LossBuilder& build, const ParamMap& params, double eps);

inline double grad_check(const LossBuilder& build, const ParamMap& params, double eps) {
  return grad_check_detailed(build, params, eps).max_rel_error;
}

}  // namespace ssmtune
