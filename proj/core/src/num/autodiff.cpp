// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#include "ssmtune/num/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <memory>

namespace ssmtune {

const char* op_name(OpTag tag) {
  switch (tag) {
    case OpTag::parameter: return "parameter";
    case OpTag::constant: return "constant";
    case OpTag::add: return "add";
    case OpTag::sub: return "sub";
    case OpTag::mul: return "mul";
    case OpTag::div: return "div";
    case OpTag::scale: return "scale";
    case OpTag::add_scalar: return "add_scalar";
    case OpTag::exp: return "exp";
    case OpTag::exprel: return "exprel";
    case OpTag::relu: return "relu";
    case OpTag::softplus: return "softplus";
    case OpTag::matmul: return "matmul";
    case OpTag::transpose: return "transpose";
    case OpTag::reshape: return "reshape";
    case OpTag::concat: return "concat";
    case OpTag::slice: return "slice";
    case OpTag::sum: return "sum";
    case OpTag::mean: return "mean";
    case OpTag::linear_scan: return "linear_scan";
    case OpTag::selective_scan: return "selective_scan";
    case OpTag::softmax_xent: return "softmax_xent";
  }
  return "unknown";
}

void GradSink::add(std::size_t id, const Tensor& g) {
  Tensor& slot = grads_[id];
  if (slot.empty()) {
    slot = g;
    return;
  }
  if (slot.shape() != g.shape()) {
    slot = slot.reshaped(g.shape());
  }
  for (std::size_t i = 0; i < g.size(); ++i) slot[i] += g[i];
}

const Tensor& Expr::value() const { return graph_->value(id_); }

Expr Graph::record(OpTag tag, std::vector<std::size_t> operands, Tensor value,
                   BackwardFn backward) {
  nodes_.push_back(Node{tag, std::move(operands), std::move(value), std::move(backward)});
  return Expr(this, nodes_.size() - 1);
}

Expr Graph::parameter(const std::string& name, Tensor value) {
  if (params_.contains(name)) {
    throw std::invalid_argument("parameter '" + name + "' already exists in this graph");
  }
  Expr e = record(OpTag::parameter, {}, std::move(value), nullptr);
  params_.emplace(name, e.id());
  return e;
}

Expr Graph::constant(Tensor value) { return record(OpTag::constant, {}, std::move(value), nullptr); }

Expr Graph::parameter_expr(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw std::invalid_argument("unknown parameter '" + name + "'");
  return Expr(this, it->second);
}

GradientMap Graph::backward(Expr loss, std::span<const std::string> params) const {
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
  }
  const std::size_t top = loss.id();
  std::vector<char> needed(top + 1, 0);
  for (const auto& name : params) {
    auto it = params_.find(name);
    if (it == params_.end()) throw std::invalid_argument("backward: unknown parameter '" + name + "'");
    if (it->second <= top) needed[it->second] = 1;
  }
  for (std::size_t id = 0; id <= top; ++id) {
    for (auto op : nodes_[id].operands) {
      if (needed[op]) {
        needed[id] = 1;
        break;
      }
    }
  }

  std::vector<Tensor> grads(top + 1);
  GradSink sink(grads, needed);
  if (needed[top]) grads[top] = Tensor(loss.shape(), 1.0);
  for (std::size_t id = top + 1; id-- > 0;) {
    const Node& node = nodes_[id];
    if (grads[id].empty() || !node.backward) continue;
    node.backward(grads[id], sink);
  }

  GradientMap out;
  for (const auto& name : params) {
    const std::size_t id = params_.at(name);
    const Tensor& value = nodes_[id].value;
    if (id <= top && !grads[id].empty()) {
      out[name] = grads[id].reshaped(value.shape());
    } else {
      out[name] = Tensor::zeros_like(value);
    }
  }
  return out;
}

GradientMap backward(Expr loss, std::span<const std::string> params) {
  return loss.graph().backward(loss, params);
}

namespace {

void same_graph(Expr a, Expr b, OpTag tag) {
  if (&a.graph() != &b.graph()) {
    throw std::invalid_argument(std::string(op_name(tag)) + ": operands belong to different graphs");
  }
}

// Index plan for elementwise broadcasting over a rows x cols output.
struct Broadcast {
  Shape out;
  std::size_t rows = 1, cols = 1;
  std::size_t a_rs = 0, a_cs = 1, b_rs = 0, b_cs = 1;
};

Broadcast plan_broadcast(const Shape& a, const Shape& b, OpTag tag) {
  Broadcast p;
  const std::size_t na = shape_numel(a), nb = shape_numel(b);
  if (a == b) {
    p.out = a;
    p.cols = na;
    return p;
  }
  if (nb == 1) {
    p.out = a;
    p.cols = na;
    p.b_cs = 0;
    return p;
  }
  if (na == 1) {
    p.out = b;
    p.cols = nb;
    p.a_cs = 0;
    return p;
  }
  if (a.size() == 2 && b.size() == 2) {
    bool ok = true;
    for (int i = 0; i < 2; ++i) ok = ok && (a[i] == b[i] || a[i] == 1 || b[i] == 1);
    if (ok) {
      p.rows = std::max(a[0], b[0]);
      p.cols = std::max(a[1], b[1]);
      p.out = {p.rows, p.cols};
      p.a_rs = a[0] == 1 ? 0 : a[1];
      p.a_cs = a[1] == 1 ? 0 : 1;
      p.b_rs = b[0] == 1 ? 0 : b[1];
      p.b_cs = b[1] == 1 ? 0 : 1;
      return p;
    }
  }
  throw ShapeError(std::string(op_name(tag)) + ": shape mismatch " + shape_str(a) + " vs " +
                   shape_str(b));
}

template <class F, class DA, class DB>
Expr binary(OpTag tag, Expr a, Expr b, F f, DA da, DB db) {
  same_graph(a, b, tag);
  const Broadcast p = plan_broadcast(a.shape(), b.shape(), tag);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  Tensor out(p.out);
  for (std::size_t r = 0; r < p.rows; ++r)
    for (std::size_t c = 0; c < p.cols; ++c)
      out[r * p.cols + c] = f(av[r * p.a_rs + c * p.a_cs], bv[r * p.b_rs + c * p.b_cs]);
  Graph* g = &a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g->record(tag, {ia, ib}, std::move(out),
                   [g, ia, ib, p, da, db](const Tensor& gout, GradSink& sink) {
                     const Tensor& x = g->value(ia);
                     const Tensor& y = g->value(ib);
                     const bool wa = sink.wants(ia), wb = sink.wants(ib);
                     Tensor ga = wa ? Tensor::zeros_like(x) : Tensor();
                     Tensor gb = wb ? Tensor::zeros_like(y) : Tensor();
                     for (std::size_t r = 0; r < p.rows; ++r) {
                       for (std::size_t c = 0; c < p.cols; ++c) {
                         const std::size_t ka = r * p.a_rs + c * p.a_cs;
                         const std::size_t kb = r * p.b_rs + c * p.b_cs;
                         const double go = gout[r * p.cols + c];
                         if (wa) ga[ka] += go * da(x[ka], y[kb]);
                         if (wb) gb[kb] += go * db(x[ka], y[kb]);
                       }
                     }
                     if (wa) sink.add(ia, ga);
                     if (wb) sink.add(ib, gb);
                   });
}

template <class F, class DF>
Expr unary(OpTag tag, Expr a, F f, DF df) {
  const Tensor& av = a.value();
  Tensor out(av.shape());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = f(av[i]);
  Graph* g = &a.graph();
  const std::size_t ia = a.id();
  return g->record(tag, {ia}, std::move(out), [g, ia, df](const Tensor& gout, GradSink& sink) {
    const Tensor& x = g->value(ia);
    Tensor gx(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) gx[i] = gout[i] * df(x[i]);
    sink.add(ia, gx);
  });
}

double exprel_value(double x) {
  if (x == 0.0) return 1.0;
  return std::expm1(x) / x;
}

double exprel_deriv(double x) {
  if (std::abs(x) < 1e-3) return 0.5 + x / 3.0 + x * x / 8.0 + x * x * x / 30.0;
  return (x * std::exp(x) - std::expm1(x)) / (x * x);
}

double softplus_value(double x) {
  if (x > 30.0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

void require_rank2(const Tensor& t, OpTag tag) {
  if (t.rank() != 2) {
    throw ShapeError(std::string(op_name(tag)) + ": expected rank 2, got " + shape_str(t.shape()));
  }
}

}  // namespace

Expr add(Expr a, Expr b) {
  return binary(
      OpTag::add, a, b, [](double x, double y) { return x + y; },
      [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Expr sub(Expr a, Expr b) {
  return binary(
      OpTag::sub, a, b, [](double x, double y) { return x - y; },
      [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Expr mul(Expr a, Expr b) {
  return binary(
      OpTag::mul, a, b, [](double x, double y) { return x * y; },
      [](double, double y) { return y; }, [](double x, double) { return x; });
}

Expr div(Expr a, Expr b) {
  return binary(
      OpTag::div, a, b, [](double x, double y) { return x / y; },
      [](double, double y) { return 1.0 / y; }, [](double x, double y) { return -x / (y * y); });
}

Expr scale(Expr a, double s) {
  return unary(OpTag::scale, a, [s](double x) { return s * x; }, [s](double) { return s; });
}

Expr add_scalar(Expr a, double s) {
  return unary(OpTag::add_scalar, a, [s](double x) { return x + s; }, [](double) { return 1.0; });
}

Expr exp(Expr a) {
  return unary(
      OpTag::exp, a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Expr exprel(Expr a) { return unary(OpTag::exprel, a, exprel_value, exprel_deriv); }

Expr relu(Expr a) {
  return unary(
      OpTag::relu, a, [](double x) { return x > 0.0 ? x : 0.0; },
      [](double x) { return x > 0.0 ? 1.0 : 0.0; });
}

Expr softplus(Expr a) { return unary(OpTag::softplus, a, softplus_value, sigmoid); }

Expr matmul(Expr a, Expr b) {
  same_graph(a, b, OpTag::matmul);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  if (av.rank() != 2 || bv.rank() != 2 || av.cols() != bv.rows()) {
    throw ShapeError("matmul: incompatible shapes " + shape_str(av.shape()) + " and " +
                     shape_str(bv.shape()));
  }
  Graph* g = &a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g->record(OpTag::matmul, {ia, ib}, ssmtune::matmul(av, bv),
                   [g, ia, ib](const Tensor& gout, GradSink& sink) {
                     if (sink.wants(ia)) sink.add(ia, ssmtune::matmul(gout, g->value(ib).transposed()));
                     if (sink.wants(ib)) sink.add(ib, ssmtune::matmul(g->value(ia).transposed(), gout));
                   });
}

Expr transpose(Expr a) {
  require_rank2(a.value(), OpTag::transpose);
  Graph* g = &a.graph();
  const std::size_t ia = a.id();
  return g->record(OpTag::transpose, {ia}, a.value().transposed(),
                   [ia](const Tensor& gout, GradSink& sink) { sink.add(ia, gout.transposed()); });
}

Expr reshape(Expr a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  Graph* g = &a.graph();
  const std::size_t ia = a.id();
  return g->record(OpTag::reshape, {ia}, std::move(out), [g, ia](const Tensor& gout, GradSink& sink) {
    sink.add(ia, gout.reshaped(g->value(ia).shape()));
  });
}

Expr concat(Expr a, Expr b, std::size_t axis) {
  same_graph(a, b, OpTag::concat);
  const Tensor& av = a.value();
  const Tensor& bv = b.value();
  require_rank2(av, OpTag::concat);
  require_rank2(bv, OpTag::concat);
  if (axis > 1 || av.dim(1 - axis) != bv.dim(1 - axis)) {
    throw ShapeError("concat: shape mismatch " + shape_str(av.shape()) + " vs " +
                     shape_str(bv.shape()) + " along axis " + std::to_string(axis));
  }
  Shape out_shape = av.shape();
  out_shape[axis] += bv.dim(axis);
  Tensor out(out_shape);
  const std::size_t oc = out.cols();
  for (std::size_t r = 0; r < av.rows(); ++r)
    for (std::size_t c = 0; c < av.cols(); ++c) out[r * oc + c] = av.at(r, c);
  const std::size_t r0 = axis == 0 ? av.rows() : 0;
  const std::size_t c0 = axis == 1 ? av.cols() : 0;
  for (std::size_t r = 0; r < bv.rows(); ++r)
    for (std::size_t c = 0; c < bv.cols(); ++c) out[(r + r0) * oc + c + c0] = bv.at(r, c);
  Graph* g = &a.graph();
  const std::size_t ia = a.id(), ib = b.id();
  return g->record(OpTag::concat, {ia, ib}, std::move(out),
                   [g, ia, ib, r0, c0](const Tensor& gout, GradSink& sink) {
                     const Tensor& x = g->value(ia);
                     const Tensor& y = g->value(ib);
                     const std::size_t oc = gout.cols();
                     if (sink.wants(ia)) {
                       Tensor gx(x.shape());
                       for (std::size_t r = 0; r < x.rows(); ++r)
                         for (std::size_t c = 0; c < x.cols(); ++c) gx.at(r, c) = gout[r * oc + c];
                       sink.add(ia, gx);
                     }
                     if (sink.wants(ib)) {
                       Tensor gy(y.shape());
                       for (std::size_t r = 0; r < y.rows(); ++r)
                         for (std::size_t c = 0; c < y.cols(); ++c)
                           gy.at(r, c) = gout[(r + r0) * oc + c + c0];
                       sink.add(ib, gy);
                     }
                   });
}

Expr slice(Expr a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& av = a.value();
  require_rank2(av, OpTag::slice);
  if (axis > 1 || begin >= end || end > av.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for shape " + shape_str(av.shape()) + " along axis " +
                     std::to_string(axis));
  }
  Shape out_shape = av.shape();
  out_shape[axis] = end - begin;
  Tensor out(out_shape);
  const std::size_t r0 = axis == 0 ? begin : 0;
  const std::size_t c0 = axis == 1 ? begin : 0;
  for (std::size_t r = 0; r < out.rows(); ++r)
    for (std::size_t c = 0; c < out.cols(); ++c) out.at(r, c) = av.at(r + r0, c + c0);
  Graph* g = &a.graph();
  const std::size_t ia = a.id();
  return g->record(OpTag::slice, {ia}, std::move(out),
                   [g, ia, r0, c0](const Tensor& gout, GradSink& sink) {
                     Tensor gx(g->value(ia).shape());
                     for (std::size_t r = 0; r < gout.rows(); ++r)
                       for (std::size_t c = 0; c < gout.cols(); ++c)
                         gx.at(r + r0, c + c0) = gout.at(r, c);
                     sink.add(ia, gx);
                   });
}

Expr sum(Expr a) {
  Graph* g = &a.graph();
  const std::size_t ia = a.id();
  return g->record(OpTag::sum, {ia}, Tensor::scalar(a.value().sum()),
                   [g, ia](const Tensor& gout, GradSink& sink) {
                     sink.add(ia, Tensor(g->value(ia).shape(), gout.item()));
                   });
}

Expr mean(Expr a) {
  Graph* g = &a.graph();
  const std::size_t ia = a.id();
  const double n = static_cast<double>(a.value().size());
  return g->record(OpTag::mean, {ia}, Tensor::scalar(a.value().sum() / n),
                   [g, ia, n](const Tensor& gout, GradSink& sink) {
                     sink.add(ia, Tensor(g->value(ia).shape(), gout.item() / n));
                   });
}

Expr mse(Expr prediction, Expr target) {
  Expr diff = prediction - target;
  return mean(diff * diff);
}

Expr linear_scan(Expr a_bar, Expr b_bar, Expr c, Expr h0, Expr x) {
  const Tensor& A = a_bar.value();
  const Tensor& B = b_bar.value();
  const Tensor& C = c.value();
  const Tensor& H0 = h0.value();
  const Tensor& X = x.value();
  require_rank2(A, OpTag::linear_scan);
  require_rank2(X, OpTag::linear_scan);
  for (const Tensor* t : {&B, &C, &H0}) {
    if (t->shape() != A.shape()) {
      throw ShapeError("linear_scan: shape mismatch " + shape_str(A.shape()) + " vs " +
                       shape_str(t->shape()));
    }
  }
  if (X.rows() != A.rows()) {
    throw ShapeError("linear_scan: shape mismatch " + shape_str(A.shape()) + " vs " +
                     shape_str(X.shape()));
  }
  const std::size_t D = A.rows(), H = A.cols(), N = X.cols();
  // states[(d * (N + 1) + t) * H + h]; t = 0 is h0.
  auto states = std::make_shared<std::vector<double>>(D * (N + 1) * H);
  Tensor Y(Shape{D, N});
  // Row pointers keep the inner loops free of aliasing with the outputs.
  for (std::size_t d = 0; d < D; ++d) {
    double* s = states->data() + d * (N + 1) * H;
    const double* a_d = A.data().data() + d * H;
    const double* b_d = B.data().data() + d * H;
    const double* c_d = C.data().data() + d * H;
    const double* x_d = X.data().data() + d * N;
    double* y_d = Y.data().data() + d * N;
    for (std::size_t h = 0; h < H; ++h) s[h] = H0.at(d, h);
    for (std::size_t t = 0; t < N; ++t) {
      const double xt = x_d[t];
      const double* prev = s + t * H;
      double* cur = s + (t + 1) * H;
      double y = 0.0;
      for (std::size_t h = 0; h < H; ++h) {
        cur[h] = a_d[h] * prev[h] + b_d[h] * xt;
        y += c_d[h] * cur[h];
      }
      y_d[t] = y;
    }
  }
  Graph* g = &a_bar.graph();
  const std::size_t ia = a_bar.id(), ib = b_bar.id(), ic = c.id(), ih = h0.id(), ix = x.id();
  return g->record(
      OpTag::linear_scan, {ia, ib, ic, ih, ix}, std::move(Y),
      [g, ia, ib, ic, ih, ix, states, D, H, N](const Tensor& gy, GradSink& sink) {
        const Tensor& A = g->value(ia);
        const Tensor& B = g->value(ib);
        const Tensor& C = g->value(ic);
        const Tensor& X = g->value(ix);
        Tensor ga(A.shape()), gb(A.shape()), gc(A.shape()), gh(A.shape()), gx(X.shape());
        std::vector<double> lam(H);
        for (std::size_t d = 0; d < D; ++d) {
          const double* s = states->data() + d * (N + 1) * H;
          const double* a_d = A.data().data() + d * H;
          const double* b_d = B.data().data() + d * H;
          const double* c_d = C.data().data() + d * H;
          const double* x_d = X.data().data() + d * N;
          const double* gy_d = gy.data().data() + d * N;
          double* ga_d = ga.data().data() + d * H;
          double* gb_d = gb.data().data() + d * H;
          double* gc_d = gc.data().data() + d * H;
          double* gx_d = gx.data().data() + d * N;
          std::fill(lam.begin(), lam.end(), 0.0);
          double* l = lam.data();
          for (std::size_t t = N; t-- > 0;) {
            const double g_t = gy_d[t];
            const double xt = x_d[t];
            const double* prev = s + t * H;
            const double* cur = s + (t + 1) * H;
            double gxt = 0.0;
            for (std::size_t h = 0; h < H; ++h) {
              l[h] = g_t * c_d[h] + a_d[h] * l[h];
              gc_d[h] += g_t * cur[h];
              ga_d[h] += l[h] * prev[h];
              gb_d[h] += l[h] * xt;
              gxt += l[h] * b_d[h];
            }
            gx_d[t] = gxt;
          }
          for (std::size_t h = 0; h < H; ++h) gh.at(d, h) = a_d[h] * l[h];
        }
        if (sink.wants(ia)) sink.add(ia, ga);
        if (sink.wants(ib)) sink.add(ib, gb);
        if (sink.wants(ic)) sink.add(ic, gc);
        if (sink.wants(ih)) sink.add(ih, gh);
        if (sink.wants(ix)) sink.add(ix, gx);
      });
}

Expr selective_scan(Expr a, Expr delta, Expr b, Expr c, Expr z, Expr h0) {
  const Tensor& A = a.value();
  const Tensor& Dl = delta.value();
  const Tensor& B = b.value();
  const Tensor& C = c.value();
  const Tensor& Z = z.value();
  const Tensor& H0 = h0.value();
  require_rank2(A, OpTag::selective_scan);
  const std::size_t D = A.rows(), H = A.cols(), N = Z.cols();
  const auto mismatch = [](const Tensor& p, const Tensor& q) {
    return ShapeError("selective_scan: shape mismatch " + shape_str(p.shape()) + " vs " +
                      shape_str(q.shape()));
  };
  if (Z.rank() != 2 || Z.rows() != D) throw mismatch(A, Z);
  if (Dl.shape() != Z.shape()) throw mismatch(Dl, Z);
  if (B.rank() != 2 || B.rows() != H || B.cols() != N) throw mismatch(A, B);
  if (C.shape() != B.shape()) throw mismatch(B, C);
  if (H0.shape() != A.shape()) throw mismatch(A, H0);

  auto states = std::make_shared<std::vector<double>>(D * (N + 1) * H);
  auto decay = std::make_shared<std::vector<double>>(D * N * H);
  Tensor Y(Shape{D, N});
  for (std::size_t d = 0; d < D; ++d) {
    double* s = states->data() + d * (N + 1) * H;
    double* ab = decay->data() + d * N * H;
    for (std::size_t h = 0; h < H; ++h) s[h] = H0.at(d, h);
    for (std::size_t t = 0; t < N; ++t) {
      const double dt = Dl.at(d, t);
      const double zt = Z.at(d, t);
      double y = 0.0;
      for (std::size_t h = 0; h < H; ++h) {
        const double abar = std::exp(dt * A.at(d, h));
        ab[t * H + h] = abar;
        s[(t + 1) * H + h] = abar * s[t * H + h] + dt * B.at(h, t) * zt;
        y += C.at(h, t) * s[(t + 1) * H + h];
      }
      Y.at(d, t) = y;
    }
  }
  Graph* g = &a.graph();
  const std::size_t ia = a.id(), idl = delta.id(), ib = b.id(), ic = c.id(), iz = z.id(),
                    ih = h0.id();
  return g->record(
      OpTag::selective_scan, {ia, idl, ib, ic, iz, ih}, std::move(Y),
      [g, ia, idl, ib, ic, iz, ih, states, decay, D, H, N](const Tensor& gy, GradSink& sink) {
        const Tensor& A = g->value(ia);
        const Tensor& Dl = g->value(idl);
        const Tensor& B = g->value(ib);
        const Tensor& C = g->value(ic);
        const Tensor& Z = g->value(iz);
        Tensor ga(A.shape()), gdl(Dl.shape()), gb(B.shape()), gc(C.shape()), gz(Z.shape()),
            gh(A.shape());
        std::vector<double> lam(H);
        for (std::size_t d = 0; d < D; ++d) {
          const double* s = states->data() + d * (N + 1) * H;
          const double* ab = decay->data() + d * N * H;
          std::fill(lam.begin(), lam.end(), 0.0);
          for (std::size_t t = N; t-- > 0;) {
            const double g_t = gy.at(d, t);
            const double dt = Dl.at(d, t);
            const double zt = Z.at(d, t);
            double gdt = 0.0, gzt = 0.0;
            for (std::size_t h = 0; h < H; ++h) {
              const double carry = t + 1 < N ? ab[(t + 1) * H + h] : 0.0;
              lam[h] = g_t * C.at(h, t) + carry * lam[h];
              gc.at(h, t) += g_t * s[(t + 1) * H + h];
              const double g_abar = lam[h] * s[t * H + h];
              const double abar = ab[t * H + h];
              gdt += g_abar * abar * A.at(d, h);
              ga.at(d, h) += g_abar * abar * dt;
              const double bh = B.at(h, t);
              gdt += lam[h] * bh * zt;
              gb.at(h, t) += lam[h] * dt * zt;
              gzt += lam[h] * dt * bh;
            }
            gdl.at(d, t) = gdt;
            gz.at(d, t) = gzt;
          }
          for (std::size_t h = 0; h < H; ++h) gh.at(d, h) = ab[h] * lam[h];
        }
        if (sink.wants(ia)) sink.add(ia, ga);
        if (sink.wants(idl)) sink.add(idl, gdl);
        if (sink.wants(ib)) sink.add(ib, gb);
        if (sink.wants(ic)) sink.add(ic, gc);
        if (sink.wants(iz)) sink.add(iz, gz);
        if (sink.wants(ih)) sink.add(ih, gh);
      });
}

Expr softmax_cross_entropy(Expr logits, std::span<const int> labels) {
  const Tensor& L = logits.value();
  require_rank2(L, OpTag::softmax_xent);
  const std::size_t K = L.rows(), Bn = L.cols();
  if (labels.size() != Bn) {
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(L.shape()));
  }
  auto probs = std::make_shared<Tensor>(L.shape());
  double loss = 0.0;
  for (std::size_t j = 0; j < Bn; ++j) {
    const int y = labels[j];
    if (y < 0 || static_cast<std::size_t>(y) >= K) {
      throw std::invalid_argument("softmax_xent: label " + std::to_string(y) + " out of range");
    }
    double m = L.at(0, j);
    for (std::size_t k = 1; k < K; ++k) m = std::max(m, L.at(k, j));
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(L.at(k, j) - m);
    for (std::size_t k = 0; k < K; ++k) probs->at(k, j) = std::exp(L.at(k, j) - m) / z;
    loss += std::log(z) + m - L.at(static_cast<std::size_t>(y), j);
  }
  std::vector<int> ys(labels.begin(), labels.end());
  Graph* g = &logits.graph();
  const std::size_t il = logits.id();
  return g->record(OpTag::softmax_xent, {il}, Tensor::scalar(loss / static_cast<double>(Bn)),
                   [il, probs, ys](const Tensor& gout, GradSink& sink) {
                     Tensor gl = *probs;
                     const double n = static_cast<double>(ys.size());
                     for (std::size_t j = 0; j < ys.size(); ++j)
                       gl.at(static_cast<std::size_t>(ys[j]), j) -= 1.0;
                     for (auto& v : gl.data()) v *= gout.item() / n;
                     sink.add(il, gl);
                   });
}

}  // namespace ssmtune
