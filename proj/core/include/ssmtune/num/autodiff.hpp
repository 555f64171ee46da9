// Copyright 2026 The ssmtune Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "ssmtune/num/tensor.hpp"

namespace ssmtune {

enum class OpTag : std::uint8_t {
  parameter,
  constant,
  add,
  sub,
  mul,
  div,
  scale,
  add_scalar,
  exp,
  exprel,
  relu,
  softplus,
  matmul,
  transpose,
  reshape,
  concat,
  slice,
  sum,
  mean,
  linear_scan,
  selective_scan,
  softmax_xent,
};

const char* op_name(OpTag tag);

class Graph;

/// Gradient accumulator handed to node backward functions during a sweep.
class GradSink {
 public:
  GradSink(std::vector<Tensor>& grads, const std::vector<char>& needed)
      : grads_(grads), needed_(needed) {}
  /// Whether operand `id` lies on a path to a requested parameter.
  bool wants(std::size_t id) const { return needed_[id] != 0; }
  /// Adds `g` into the gradient of node `id`.
  void add(std::size_t id, const Tensor& g);

 private:
  std::vector<Tensor>& grads_;
  const std::vector<char>& needed_;
};

/// Handle to a node of a Graph. Cheap to copy; only valid while its graph lives.
class Expr {
 public:
  Expr() = default;

  const Tensor& value() const;
  const Shape& shape() const { return value().shape(); }
  Graph& graph() const { return *graph_; }
  std::size_t id() const { return id_; }
  bool valid() const { return graph_ != nullptr; }

 private:
  friend class Graph;
  Expr(Graph* graph, std::size_t id) : graph_(graph), id_(id) {}

  Graph* graph_ = nullptr;
  std::size_t id_ = 0;
};

/// Parameter name -> gradient with the parameter's shape.
using GradientMap = std::map<std::string, Tensor>;

/// An append-only expression DAG. Values are computed eagerly when a node is
/// recorded, so every node carries its forward value; operands always precede
/// their users, which makes the graph acyclic by construction.
class Graph {
 public:
  using BackwardFn = std::function<void(const Tensor& grad_out, GradSink& sink)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// A named leaf. Names are unique within a graph.
  Expr parameter(const std::string& name, Tensor value);
  Expr constant(Tensor value);
  Expr scalar(double v) { return constant(Tensor::scalar(v)); }

  bool has_parameter(const std::string& name) const { return params_.contains(name); }
  Expr parameter_expr(const std::string& name);

  std::size_t size() const { return nodes_.size(); }
  OpTag tag(std::size_t id) const { return nodes_.at(id).tag; }
  const std::vector<std::size_t>& operands(std::size_t id) const { return nodes_.at(id).operands; }
  const Tensor& value(std::size_t id) const { return nodes_.at(id).value; }

  /// Reverse sweep from a scalar `loss`. Requested parameters that do not
  /// influence the loss get zero gradients.
  GradientMap backward(Expr loss, std::span<const std::string> params) const;

  /// Used by operation implementations.
  Expr record(OpTag tag, std::vector<std::size_t> operands, Tensor value, BackwardFn backward);

 private:
  struct Node {
    OpTag tag;
    std::vector<std::size_t> operands;
    Tensor value;
    BackwardFn backward;
  };

  std::vector<Node> nodes_;
  std::unordered_map<std::string, std::size_t> params_;
};

/// Forward value of an expression.
inline const Tensor& eval(Expr e) { return e.value(); }
GradientMap backward(Expr loss, std::span<const std::string> params);

// Elementwise binary operations. Operands must have equal shapes, or one
// operand holds a single element, or both are rank 2 with each extent equal or 1.
Expr add(Expr a, Expr b);
Expr sub(Expr a, Expr b);
Expr mul(Expr a, Expr b);
Expr div(Expr a, Expr b);
inline Expr operator+(Expr a, Expr b) { return add(a, b); }
inline Expr operator-(Expr a, Expr b) { return sub(a, b); }
inline Expr operator*(Expr a, Expr b) { return mul(a, b); }
inline Expr operator/(Expr a, Expr b) { return div(a, b); }

Expr scale(Expr a, double s);
Expr add_scalar(Expr a, double s);
Expr exp(Expr a);
/// (e^x - 1) / x, continuous at 0.
Expr exprel(Expr a);
Expr relu(Expr a);
Expr softplus(Expr a);

Expr matmul(Expr a, Expr b);
Expr transpose(Expr a);
Expr reshape(Expr a, Shape shape);
/// Rank-2 concatenation along `axis` (0 = rows, 1 = columns).
Expr concat(Expr a, Expr b, std::size_t axis);
/// Rank-2 slice [begin, end) along `axis`.
Expr slice(Expr a, std::size_t axis, std::size_t begin, std::size_t end);
Expr sum(Expr a);
Expr mean(Expr a);

/// Mean of squared differences over all entries.
Expr mse(Expr prediction, Expr target);

/// Diagonal linear recurrence, independently per row d:
///   h_t = a_bar ⊙ h_{t-1} + b_bar * x_t,  y_t = <c, h_t>.
/// a_bar, b_bar, c, h0: [D, H]; x: [D, N]; result [D, N].
Expr linear_scan(Expr a_bar, Expr b_bar, Expr c, Expr h0, Expr x);

/// Input-dependent diagonal recurrence:
///   a_bar_t[d,h] = exp(delta[d,t] * a[d,h]),  b_bar_t[d,h] = delta[d,t] * b[h,t],
///   h_t[d,:] = a_bar_t[d,:] ⊙ h_{t-1}[d,:] + b_bar_t[d,:] * z[d,t],
///   y[d,t] = <c[:,t], h_t[d,:]>.
/// a, h0: [D, H]; delta, z: [D, N]; b, c: [H, N].
Expr selective_scan(Expr a, Expr delta, Expr b, Expr c, Expr z, Expr h0);

/// Mean softmax cross-entropy; logits [K, B], one label per column.
Expr softmax_cross_entropy(Expr logits, std::span<const int> labels);

}  // namespace ssmtune
