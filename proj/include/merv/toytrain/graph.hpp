#pragma once

#include <functional>
#include <vector>

#include "merv/numerics.hpp"
#include "merv/tensor.hpp"

namespace merv {

/// Handle to a value recorded on a Graph.
struct Var {
  std::size_t id = 0;
};

/// Reverse-mode tape over 64-bit tensors for the toy model.
///
/// Values are computed eagerly as ops are recorded. backward() walks the
/// tape in reverse and, for every param node, adds the gradient into the
/// tensor supplied at param() time. A param recorded without a gradient
/// target is treated as a constant.
class Graph {
 public:
  Var constant(Tensor64 value);
  Var param(const Tensor64& value, Tensor64* grad);

  const Tensor64& value(Var v) const { return nodes_[v.id].value; }
  /// Gradient after backward(); empty when nothing flowed into v.
  const Tensor64& grad(Var v) const { return nodes_[v.id].grad; }

  Var reshape(Var x, Shape shape);
  Var matmul(Var a, Var b);
  Var matmul_nt(Var a, Var b);
  Var add(Var a, Var b);
  /// x[..., n] + bias[n]
  Var add_bias(Var x, Var bias);
  Var scale(Var x, double s);
  Var layer_norm(Var x, Var gain, Var bias);
  Var gelu(Var x);
  Var attention(Var q, Var k, Var v, std::size_t heads, bool causal);
  /// Softmax along the last axis.
  Var softmax(Var x);
  /// (rows, d) -> (1, d)
  Var mean_rows(Var x);
  Var concat_rows(const std::vector<Var>& parts);
  Var concat_cols(const std::vector<Var>& parts);
  /// Rows of a 2-D value in the given order (repeats allowed).
  Var gather_rows(Var x, const std::vector<std::size_t>& rows);
  Var pool3d(Var x, std::size_t frames, std::size_t h, std::size_t w);
  Var conv3d(Var x, Var kernel, const Conv3dGeometry& geom);
  /// sum_e w[e] * x_e for w of N entries (any shape) and equal-shape x_e.
  Var weighted_sum(const std::vector<Var>& xs, Var weights);
  /// Mean token cross-entropy of logits[rows, vocab] over rows whose target
  /// is not `ignore`; returns a (1) value.
  Var cross_entropy(Var logits, const std::vector<int>& targets, int ignore = -1);

  /// Seeds d(root)/d(root) = 1 and propagates to every param target.
  void backward(Var root);

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor64 value;
    Tensor64 grad;
    Tensor64* param_grad = nullptr;
    bool needs_grad = false;
    std::function<void(Graph&, const Tensor64&)> back;
  };

  Var push(Tensor64 value, bool needs_grad, std::function<void(Graph&, const Tensor64&)> back);
  bool needs(Var v) const { return nodes_[v.id].needs_grad; }
  void accumulate(Var v, const Tensor64& g);

  std::vector<Node> nodes_;
};

}  // namespace merv
