// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/num/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace ssmtune {

namespace {

double loss_at(const LossBuilder& build, const ParamMap& params) {
  Graph g;
  for (const auto& [name, value] : params) g.parameter(name, value);
  return build(g).value().item();
}

}  // namespace

GradCheckResult grad_check_detailed(const LossBuilder& build, const ParamMap& params, double eps) {
  if (!(eps > 0.0)) throw std::invalid_argument("grad_check: eps must be positive");

  GradientMap analytic;
  {
    Graph g;
    std::vector<std::string> names;
    for (const auto& [name, value] : params) {
      g.parameter(name, value);
      names.push_back(name);
    }
    Expr loss = build(g);
    analytic = g.backward(loss, names);
  }

  GradCheckResult result;
  ParamMap probe = params;
  for (auto& [name, value] : probe) {
    const Tensor& ga = analytic.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double fp = loss_at(build, probe);
      value[i] = saved - eps;
      const double fm = loss_at(build, probe);
      value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double denom = std::max({std::abs(ga[i]), std::abs(numeric), 1e-8});
      const double rel = std::abs(ga[i] - numeric) / denom;
      if (rel > result.max_rel_error || result.worst_param.empty()) {
        if (rel >= result.max_rel_error) {
          result.max_rel_error = rel;
          result.worst_param = name;
          result.worst_index = i;
          result.analytic = ga[i];
          result.numeric = numeric;
        }
      }
    }
  }
  return result;
}

}  // namespace ssmtune
