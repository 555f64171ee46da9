// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "ssmtune/num/tensor.hpp"

namespace ssmtune {

/// Full singular value decomposition A = U diag(S) V^T of an m x n matrix.
/// U is m x m, V is n x n, S holds min(m, n) values in descending order.
struct Svd {
  Tensor U;
  Tensor S;
  Tensor V;
};

Svd svd(const Tensor& a);

/// Count of singular values above rel_tol times the largest one.
std::size_t numerical_rank(const Tensor& a, double rel_tol = 1e-10);

/// Minimum-norm least-squares solution of A x = b; b may be a vector or a matrix.
Tensor min_norm_solve(const Tensor& a, const Tensor& b);

/// Euclidean norm of all entries.
double frobenius_norm(const Tensor& a);

}  // namespace ssmtune
