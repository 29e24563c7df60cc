#include "merv/toytrain/graph.hpp"

#include <cmath>

#include "merv/errors.hpp"

namespace merv {

namespace {

Tensor64 scaled(const Tensor64& t, double s) {
  Tensor64 out = t;
  for (auto& v : out.data()) v *= s;
  return out;
}

}  // namespace

Var Graph::push(Tensor64 value, bool needs_grad, std::function<void(Graph&, const Tensor64&)> back) {
  nodes_.push_back(Node{std::move(value), {}, nullptr, needs_grad, std::move(back)});
  return Var{nodes_.size() - 1};
}

void Graph::accumulate(Var v, const Tensor64& g) {
  Node& n = nodes_[v.id];
  if (!n.needs_grad) return;
  if (g.shape() != n.value.shape()) {
    throw DimensionError("gradient shape " + shape_str(g.shape()) + " does not match value " +
                         shape_str(n.value.shape()));
  }
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.numel(); ++i) n.grad[i] += g[i];
}

Var Graph::constant(Tensor64 value) { return push(std::move(value), false, nullptr); }

Var Graph::param(const Tensor64& value, Tensor64* grad) {
  if (grad && grad->shape() != value.shape()) throw DimensionError("param gradient slot has the wrong shape");
  Var v = push(value, grad != nullptr, nullptr);
  nodes_[v.id].param_grad = grad;
  return v;
}

Var Graph::reshape(Var x, Shape shape) {
  return push(value(x).reshaped(std::move(shape)), needs(x), [x](Graph& g, const Tensor64& dy) {
    g.accumulate(x, dy.reshaped(g.value(x).shape()));
  });
}

Var Graph::matmul(Var a, Var b) {
  return push(merv::matmul(value(a), value(b)), needs(a) || needs(b), [a, b](Graph& g, const Tensor64& dy) {
    if (g.needs(a)) g.accumulate(a, merv::matmul_nt(dy, g.value(b)));
    if (g.needs(b)) g.accumulate(b, merv::matmul_tn(g.value(a), dy));
  });
}

Var Graph::matmul_nt(Var a, Var b) {
  return push(merv::matmul_nt(value(a), value(b)), needs(a) || needs(b), [a, b](Graph& g, const Tensor64& dy) {
    if (g.needs(a)) g.accumulate(a, merv::matmul(dy, g.value(b)));
    if (g.needs(b)) g.accumulate(b, merv::matmul_tn(dy, g.value(a)));
  });
}

Var Graph::add(Var a, Var b) {
  if (value(a).shape() != value(b).shape()) {
    throw DimensionError("add: " + shape_str(value(a).shape()) + " vs " + shape_str(value(b).shape()));
  }
  Tensor64 y = value(a);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += value(b)[i];
  return push(std::move(y), needs(a) || needs(b), [a, b](Graph& g, const Tensor64& dy) {
    g.accumulate(a, dy);
    g.accumulate(b, dy);
  });
}

Var Graph::add_bias(Var x, Var bias) {
  const std::size_t n = value(bias).numel();
  if (value(x).shape().back() != n) throw DimensionError("add_bias: width mismatch");
  Tensor64 y = value(x);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += value(bias)[i % n];
  return push(std::move(y), needs(x) || needs(bias), [x, bias, n](Graph& g, const Tensor64& dy) {
    g.accumulate(x, dy);
    if (g.needs(bias)) {
      Tensor64 db(g.value(bias).shape());
      for (std::size_t i = 0; i < dy.numel(); ++i) db[i % n] += dy[i];
      g.accumulate(bias, db);
    }
  });
}

Var Graph::scale(Var x, double s) {
  return push(scaled(value(x), s), needs(x), [x, s](Graph& g, const Tensor64& dy) { g.accumulate(x, scaled(dy, s)); });
}

Var Graph::layer_norm(Var x, Var gain, Var bias) {
  return push(merv::layer_norm(value(x), value(gain), value(bias)), needs(x) || needs(gain) || needs(bias),
              [x, gain, bias](Graph& g, const Tensor64& dy) {
                auto r = layer_norm_backward(g.value(x), g.value(gain), dy);
                g.accumulate(x, r.dx);
                g.accumulate(gain, r.dgain);
                g.accumulate(bias, r.dbias);
              });
}

Var Graph::gelu(Var x) {
  return push(merv::gelu(value(x)), needs(x),
              [x](Graph& g, const Tensor64& dy) { g.accumulate(x, gelu_backward(g.value(x), dy)); });
}

Var Graph::attention(Var q, Var k, Var v, std::size_t heads, bool causal) {
  auto r = merv::attention(value(q), value(k), value(v), heads, causal);
  return push(std::move(r.out), needs(q) || needs(k) || needs(v),
              [q, k, v, heads, probs = std::move(r.probs)](Graph& g, const Tensor64& dy) {
                auto d = attention_backward(g.value(q), g.value(k), g.value(v), probs, dy, heads);
                g.accumulate(q, d.dq);
                g.accumulate(k, d.dk);
                g.accumulate(v, d.dv);
              });
}

Var Graph::softmax(Var x) {
  const std::size_t axis = value(x).rank() - 1;
  Var y = push(merv::softmax(value(x), axis), needs(x), nullptr);
  nodes_[y.id].back = [x, y, axis](Graph& g, const Tensor64& dy) {
    g.accumulate(x, softmax_backward(g.value(y), dy, axis));
  };
  return y;
}

Var Graph::mean_rows(Var x) {
  const Tensor64& xv = value(x);
  if (xv.rank() != 2) throw DimensionError("mean_rows expects a matrix");
  const std::size_t rows = xv.dim(0), d = xv.dim(1);
  return push(mean_over_axis(xv, 0).reshaped({1, d}), needs(x), [x, rows, d](Graph& g, const Tensor64& dy) {
    Tensor64 dx({rows, d});
    const double inv = 1.0 / static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < d; ++c) dx[r * d + c] = dy[c] * inv;
    g.accumulate(x, dx);
  });
}

Var Graph::concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_rows of nothing");
  const std::size_t d = value(parts[0]).dim(1);
  std::size_t rows = 0;
  bool any = false;
  std::vector<double> data;
  for (Var p : parts) {
    const Tensor64& v = value(p);
    if (v.rank() != 2 || v.dim(1) != d) throw DimensionError("concat_rows: width mismatch");
    rows += v.dim(0);
    data.insert(data.end(), v.data().begin(), v.data().end());
    any = any || needs(p);
  }
  return push(Tensor64({rows, d}, std::move(data)), any, [parts, d](Graph& g, const Tensor64& dy) {
    std::size_t offset = 0;
    for (Var p : parts) {
      const std::size_t n = g.value(p).numel();
      if (g.needs(p)) {
        std::vector<double> part(dy.data().begin() + static_cast<std::ptrdiff_t>(offset),
                                 dy.data().begin() + static_cast<std::ptrdiff_t>(offset + n));
        g.accumulate(p, Tensor64({n / d, d}, std::move(part)));
      }
      offset += n;
    }
  });
}

Var Graph::concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw DimensionError("concat_cols of nothing");
  const std::size_t rows = value(parts[0]).dim(0);
  std::size_t cols = 0;
  bool any = false;
  for (Var p : parts) {
    if (value(p).rank() != 2 || value(p).dim(0) != rows) throw DimensionError("concat_cols: row mismatch");
    cols += value(p).dim(1);
    any = any || needs(p);
  }
  Tensor64 y({rows, cols});
  std::size_t c0 = 0;
  for (Var p : parts) {
    const Tensor64& v = value(p);
    const std::size_t w = v.dim(1);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < w; ++c) y[r * cols + c0 + c] = v[r * w + c];
    c0 += w;
  }
  return push(std::move(y), any, [parts, rows, cols](Graph& g, const Tensor64& dy) {
    std::size_t c0 = 0;
    for (Var p : parts) {
      const std::size_t w = g.value(p).dim(1);
      if (g.needs(p)) {
        Tensor64 dp({rows, w});
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < w; ++c) dp[r * w + c] = dy[r * cols + c0 + c];
        g.accumulate(p, dp);
      }
      c0 += w;
    }
  });
}

Var Graph::gather_rows(Var x, const std::vector<std::size_t>& rows) {
  const Tensor64& xv = value(x);
  if (xv.rank() != 2) throw DimensionError("gather_rows expects a matrix");
  const std::size_t d = xv.dim(1);
  Tensor64 y({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= xv.dim(0)) throw DimensionError("gather_rows: row index out of range");
    for (std::size_t c = 0; c < d; ++c) y[i * d + c] = xv[rows[i] * d + c];
  }
  return push(std::move(y), needs(x), [x, rows, d](Graph& g, const Tensor64& dy) {
    Tensor64 dx(g.value(x).shape());
    for (std::size_t i = 0; i < rows.size(); ++i)
      for (std::size_t c = 0; c < d; ++c) dx[rows[i] * d + c] += dy[i * d + c];
    g.accumulate(x, dx);
  });
}

Var Graph::pool3d(Var x, std::size_t frames, std::size_t h, std::size_t w) {
  return push(adaptive_avg_pool3d(value(x), frames, h, w), needs(x), [x](Graph& g, const Tensor64& dy) {
    g.accumulate(x, adaptive_avg_pool3d_backward(dy, g.value(x).shape()));
  });
}

Var Graph::conv3d(Var x, Var kernel, const Conv3dGeometry& geom) {
  return push(conv3d_simple(value(x), value(kernel), geom), needs(x) || needs(kernel),
              [x, kernel, geom](Graph& g, const Tensor64& dy) {
                if (g.needs(x)) g.accumulate(x, conv3d_backward_input(dy, g.value(kernel), g.value(x).shape(), geom));
                if (g.needs(kernel)) {
                  g.accumulate(kernel, conv3d_backward_kernel(dy, g.value(x), g.value(kernel).shape(), geom));
                }
              });
}

Var Graph::weighted_sum(const std::vector<Var>& xs, Var weights) {
  if (xs.empty() || value(weights).numel() != xs.size()) throw DimensionError("weighted_sum: one weight per input");
  const Shape& s = value(xs[0]).shape();
  Tensor64 y(s);
  bool any = needs(weights);
  for (std::size_t e = 0; e < xs.size(); ++e) {
    if (value(xs[e]).shape() != s) throw DimensionError("weighted_sum: input shapes differ");
    const double w = value(weights)[e];
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += w * value(xs[e])[i];
    any = any || needs(xs[e]);
  }
  return push(std::move(y), any, [xs, weights](Graph& g, const Tensor64& dy) {
    Tensor64 dw(g.value(weights).shape());
    for (std::size_t e = 0; e < xs.size(); ++e) {
      const Tensor64& x = g.value(xs[e]);
      if (g.needs(xs[e])) g.accumulate(xs[e], scaled(dy, g.value(weights)[e]));
      double dot = 0;
      for (std::size_t i = 0; i < x.numel(); ++i) dot += dy[i] * x[i];
      dw[e] = dot;
    }
    g.accumulate(weights, dw);
  });
}

Var Graph::cross_entropy(Var logits, const std::vector<int>& targets, int ignore) {
  const Tensor64& z = value(logits);
  if (z.rank() != 2 || z.dim(0) != targets.size()) throw DimensionError("cross_entropy: one target per row");
  const std::size_t vocab = z.dim(1);
  Tensor64 p = merv::softmax(z, 1);
  double loss = 0;
  std::size_t count = 0;
  for (std::size_t r = 0; r < targets.size(); ++r) {
    if (targets[r] == ignore) continue;
    if (targets[r] < 0 || static_cast<std::size_t>(targets[r]) >= vocab) {
      throw DimensionError("cross_entropy: target outside the vocabulary");
    }
    loss -= std::log(p[r * vocab + static_cast<std::size_t>(targets[r])]);
    ++count;
  }
  if (count == 0) throw DimensionError("cross_entropy: every target is ignored");
  const double inv = 1.0 / static_cast<double>(count);
  Tensor64 out({1});
  out[0] = loss * inv;  // not checked: callers report a non-finite loss themselves
  return push(std::move(out), needs(logits),
              [logits, targets, ignore, inv, vocab, p = std::move(p)](Graph& g, const Tensor64& dy) {
                Tensor64 dz(p.shape());
                for (std::size_t r = 0; r < targets.size(); ++r) {
                  if (targets[r] == ignore) continue;
                  for (std::size_t c = 0; c < vocab; ++c) dz[r * vocab + c] = p[r * vocab + c] * inv * dy[0];
                  dz[r * vocab + static_cast<std::size_t>(targets[r])] -= inv * dy[0];
                }
                g.accumulate(logits, dz);
              });
}

void Graph::backward(Var root) {
  if (value(root).numel() != 1) throw DimensionError("backward needs a scalar root");
  for (auto& n : nodes_) n.grad = Tensor64();
  if (!needs(root)) return;
  nodes_[root.id].grad = Tensor64(value(root).shape(), 1.0);
  for (std::size_t i = root.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.needs_grad || n.grad.empty()) continue;
    if (n.back) n.back(*this, n.grad);
    if (n.param_grad) {
      for (std::size_t j = 0; j < n.grad.numel(); ++j) (*n.param_grad)[j] += n.grad[j];
    }
  }
}

}  // namespace merv
