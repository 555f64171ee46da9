// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/num/linalg.hpp"

#include <Eigen/Dense>

#include <cmath>

namespace ssmtune {

namespace {

using Mat = Eigen::MatrixXd;

Mat to_eigen(const Tensor& t) {
  if (t.rank() > 2) throw ShapeError("linalg: expected rank <= 2, got " + shape_str(t.shape()));
  const auto rows = static_cast<Eigen::Index>(t.rows());
  const auto cols = static_cast<Eigen::Index>(t.rank() == 2 ? t.cols() : 1);
  Mat m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = t[static_cast<std::size_t>(r * cols + c)];
  return m;
}

Tensor from_eigen(const Mat& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c)
      t.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
  return t;
}

}  // namespace

Svd svd(const Tensor& a) {
  const Mat m = to_eigen(a);
  Eigen::JacobiSVD<Mat> solver(m, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Eigen::VectorXd s = solver.singularValues();
  std::vector<double> sv(s.data(), s.data() + s.size());
  return Svd{from_eigen(solver.matrixU()), Tensor::vector(std::move(sv)),
             from_eigen(solver.matrixV())};
}

std::size_t numerical_rank(const Tensor& a, double rel_tol) {
  const Mat m = to_eigen(a);
  Eigen::JacobiSVD<Mat> solver(m);
  const Eigen::VectorXd s = solver.singularValues();
  if (s.size() == 0 || s(0) == 0.0) return 0;
  std::size_t rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > rel_tol * s(0)) ++rank;
  }
  return rank;
}

Tensor min_norm_solve(const Tensor& a, const Tensor& b) {
  const Mat ma = to_eigen(a);
  const Mat mb = to_eigen(b);
  if (ma.rows() != mb.rows()) {
    throw ShapeError("min_norm_solve: incompatible shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()));
  }
  Eigen::CompleteOrthogonalDecomposition<Mat> cod(ma);
  const Mat x = cod.solve(mb);
  Tensor out = from_eigen(x);
  if (b.rank() == 1) return out.reshaped(Shape{out.rows()});
  return out;
}

double frobenius_norm(const Tensor& a) {
  double s = 0.0;
  for (double x : a.data()) s += x * x;
  return std::sqrt(s);
}

}  // namespace ssmtune
