// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/ssm/s6.hpp"

#include <cmath>

namespace ssmtune {

namespace {

double softplus(double x) { return x > 30.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

}  // namespace

void S6Params::validate() const {
  const std::size_t D = a.rows(), H = a.cols();
  if (w_dt_down.rank() != 2 || w_dt_down.empty()) {
    throw ShapeError("S6 block: w_dt_down must be r x D with r >= 1");
  }
  const std::size_t r = w_dt_down.rows();
  const auto expect = [](const Tensor& t, Shape s, const char* name) {
    if (t.shape() != s) {
      throw ShapeError(std::string("S6 block: ") + name + " has shape " + shape_str(t.shape()) +
                       ", expected " + shape_str(s));
    }
  };
  expect(a, {D, H}, "a");
  expect(w_b, {H, D}, "w_b");
  expect(w_c, {H, D}, "w_c");
  expect(w_dt_down, {r, D}, "w_dt_down");
  expect(w_dt_up, {D, r}, "w_dt_up");
  expect(beta_dt, {D, 1}, "beta_dt");
  expect(w_in, {D, D}, "w_in");
  expect(u, {D, 1}, "u");
  expect(h0, {D, H}, "h0");
}

S6Induced s6_induced(const S6Params& p, const Tensor& x) {
  p.validate();
  if (x.rank() != 2 || x.rows() != p.channels()) {
    throw ShapeError("S6 block: input " + shape_str(x.shape()) + " does not have " +
                     std::to_string(p.channels()) + " rows");
  }
  S6Induced out;
  out.z = matmul(p.w_in, x);
  out.delta = matmul(p.w_dt_up, matmul(p.w_dt_down, out.z));
  for (std::size_t d = 0; d < out.delta.rows(); ++d)
    for (std::size_t t = 0; t < out.delta.cols(); ++t)
      out.delta.at(d, t) = softplus(out.delta.at(d, t) + p.beta_dt[d]);
  out.B = matmul(p.w_b, out.z);
  out.C = matmul(p.w_c, out.z);
  return out;
}

Tensor s6_scan(const Tensor& a, const S6Induced& in, const Tensor& h0) {
  const std::size_t D = a.rows(), H = a.cols(), N = in.z.cols();
  Tensor y(Shape{D, N});
  std::vector<double> h(H);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t k = 0; k < H; ++k) h[k] = h0.at(d, k);
    for (std::size_t t = 0; t < N; ++t) {
      const double dt = in.delta.at(d, t);
      double acc = 0.0;
      for (std::size_t k = 0; k < H; ++k) {
        h[k] = std::exp(dt * a.at(d, k)) * h[k] + dt * in.B.at(k, t) * in.z.at(d, t);
        acc += in.C.at(k, t) * h[k];
      }
      y.at(d, t) = acc;
    }
  }
  return y;
}

Tensor s6_forward(const S6Params& p, const Tensor& x) { return s6_scan(p.a, s6_induced(p, x), p.h0); }

Tensor stacked_w_s6(const S6Params& p) {
  const std::size_t H = p.state_dim(), D = p.channels(), r = p.dt_rank();
  Tensor out(Shape{2 * H + r, D});
  for (std::size_t j = 0; j < D; ++j) {
    for (std::size_t k = 0; k < H; ++k) {
      out.at(k, j) = p.w_b.at(k, j);
      out.at(H + k, j) = p.w_c.at(k, j);
    }
    for (std::size_t k = 0; k < r; ++k) out.at(2 * H + k, j) = p.w_dt_down.at(k, j);
  }
  return out;
}

}  // namespace ssmtune
