#include <algorithm>
#include <cmath>

#include "merv/errors.hpp"
#include "merv/numerics.hpp"

namespace merv {

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* what) {
  if (s.size() != rank) {
    throw DimensionError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                         shape_str(s));
  }
}

struct AxisSplit {
  std::size_t outer = 1;
  std::size_t n = 1;
  std::size_t inner = 1;
};

AxisSplit split_axis(const Shape& s, std::size_t axis) {
  if (axis >= s.size()) {
    throw DimensionError("axis " + std::to_string(axis) + " invalid for " + shape_str(s));
  }
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.n = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace

// -- products ---------------------------------------------------------------

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul");
  require_rank(b.shape(), 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()));
  }
  BasicTensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  // i-k-j order: each output element accumulates over k in increasing order.
  for (std::size_t i = 0; i < m; ++i) {
    T* row = pc + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const T av = pa[i * k + p];
      const T* brow = pb + p * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return c;
}

template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul_nt");
  require_rank(b.shape(), 2, "matmul_nt");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(0);
  if (b.dim(1) != k) {
    throw DimensionError("matmul_nt: inner extents differ " + shape_str(a.shape()) + " x " +
                         shape_str(b.shape()) + "^T");
  }
  BasicTensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t i = 0; i < m; ++i) {
    const T* arow = pa + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const T* brow = pb + j * k;
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += arow[p] * brow[p];
      pc[i * n + j] = acc;
    }
  }
  return c;
}

template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_rank(a.shape(), 2, "matmul_tn");
  require_rank(b.shape(), 2, "matmul_tn");
  const std::size_t k = a.dim(0), m = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw DimensionError("matmul_tn: inner extents differ " + shape_str(a.shape()) + "^T x " +
                         shape_str(b.shape()));
  }
  BasicTensor<T> c({m, n});
  const T* pa = a.data().data();
  const T* pb = b.data().data();
  T* pc = c.data().data();
  for (std::size_t p = 0; p < k; ++p) {
    const T* brow = pb + p * n;
    for (std::size_t i = 0; i < m; ++i) {
      const T av = pa[p * m + i];
      T* row = pc + i * n;
      for (std::size_t j = 0; j < n; ++j) row[j] += av * brow[j];
    }
  }
  return c;
}

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a) {
  require_rank(a.shape(), 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  BasicTensor<T> out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a[i * n + j];
  return out;
}

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias) {
  require_rank(weight.shape(), 2, "linear weight");
  const std::size_t k = weight.dim(0), n = weight.dim(1);
  if (x.rank() == 0 || x.shape().back() != k) {
    throw DimensionError("linear: input " + shape_str(x.shape()) + " does not end in " +
                         std::to_string(k));
  }
  if (bias && (bias->rank() != 1 || bias->dim(0) != n)) {
    throw DimensionError("linear: bias must have shape (" + std::to_string(n) + ")");
  }
  const std::size_t rows = x.numel() / k;
  BasicTensor<T> y = matmul(x.reshaped({rows, k}), weight);
  if (bias) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) y[r * n + j] += (*bias)[j];
  }
  Shape out = x.shape();
  out.back() = n;
  return std::move(y).reshaped(std::move(out));
}

// -- reductions -------------------------------------------------------------

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& v, std::size_t axis) {
  const AxisSplit s = split_axis(v.shape(), axis);
  BasicTensor<T> out(v.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T mx = v[base];
      for (std::size_t i = 1; i < s.n; ++i) mx = std::max(mx, v[base + i * s.inner]);
      T sum = 0;
      for (std::size_t i = 0; i < s.n; ++i) {
        const T e = std::exp(v[base + i * s.inner] - mx);
        out[base + i * s.inner] = e;
        sum += e;
      }
      for (std::size_t i = 0; i < s.n; ++i) out[base + i * s.inner] /= sum;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& y, const BasicTensor<T>& dy,
                                std::size_t axis) {
  if (y.shape() != dy.shape()) throw DimensionError("softmax_backward: shape mismatch");
  const AxisSplit s = split_axis(y.shape(), axis);
  BasicTensor<T> dx(y.shape());
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      const std::size_t base = o * s.n * s.inner + in;
      T dot = 0;
      for (std::size_t i = 0; i < s.n; ++i) dot += y[base + i * s.inner] * dy[base + i * s.inner];
      for (std::size_t i = 0; i < s.n; ++i) {
        const std::size_t idx = base + i * s.inner;
        dx[idx] = y[idx] * (dy[idx] - dot);
      }
    }
  }
  return dx;
}

template <typename T>
BasicTensor<T> mean_over_axis(const BasicTensor<T>& x, std::size_t axis) {
  const AxisSplit s = split_axis(x.shape(), axis);
  Shape out_shape;
  for (std::size_t i = 0; i < x.rank(); ++i)
    if (i != axis) out_shape.push_back(x.shape()[i]);
  if (out_shape.empty()) out_shape.push_back(1);
  BasicTensor<T> out(out_shape);
  const T inv = T(1) / static_cast<T>(s.n);
  for (std::size_t o = 0; o < s.outer; ++o) {
    for (std::size_t in = 0; in < s.inner; ++in) {
      T acc = 0;
      for (std::size_t i = 0; i < s.n; ++i) acc += x[o * s.n * s.inner + i * s.inner + in];
      out[o * s.inner + in] = acc * inv;
    }
  }
  return out;
}

// -- pooling ----------------------------------------------------------------

PoolWindow adaptive_window(std::size_t index, std::size_t in, std::size_t out) {
  // floor(i * in / out) .. ceil((i + 1) * in / out)
  const std::size_t begin = (index * in) / out;
  const std::size_t end = ((index + 1) * in + out - 1) / out;
  return {begin, end};
}

namespace {

void check_pool_target(const Shape& s, std::size_t frames, std::size_t h, std::size_t w) {
  require_rank(s, 4, "adaptive pool");
  if (frames < 1 || h < 1 || w < 1) throw DimensionError("adaptive pool: target extents must be >= 1");
  if (frames > s[0] || h > s[1] || w > s[2]) {
    throw DimensionError("adaptive pool: target (" + std::to_string(frames) + ", " +
                         std::to_string(h) + ", " + std::to_string(w) + ") larger than source " +
                         shape_str(s));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> adaptive_avg_pool3d(const BasicTensor<T>& x, std::size_t frames, std::size_t h,
                                   std::size_t w) {
  check_pool_target(x.shape(), frames, h, w);
  const std::size_t T_in = x.dim(0), H = x.dim(1), W = x.dim(2), D = x.dim(3);
  BasicTensor<T> out({frames, h, w, D});
  std::vector<T> acc(D);
  for (std::size_t f = 0; f < frames; ++f) {
    const PoolWindow wt = adaptive_window(f, T_in, frames);
    for (std::size_t i = 0; i < h; ++i) {
      const PoolWindow wh = adaptive_window(i, H, h);
      for (std::size_t j = 0; j < w; ++j) {
        const PoolWindow ww = adaptive_window(j, W, w);
        std::fill(acc.begin(), acc.end(), T(0));
        for (std::size_t tt = wt.begin; tt < wt.end; ++tt)
          for (std::size_t y = wh.begin; y < wh.end; ++y)
            for (std::size_t xx = ww.begin; xx < ww.end; ++xx) {
              const T* src = x.data().data() + ((tt * H + y) * W + xx) * D;
              for (std::size_t c = 0; c < D; ++c) acc[c] += src[c];
            }
        const T count = static_cast<T>((wt.end - wt.begin) * (wh.end - wh.begin) * (ww.end - ww.begin));
        T* dst = out.data().data() + ((f * h + i) * w + j) * D;
        for (std::size_t c = 0; c < D; ++c) dst[c] = acc[c] / count;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t h, std::size_t w) {
  require_rank(x.shape(), 4, "adaptive_avg_pool2d");
  return adaptive_avg_pool3d(x, x.dim(0), h, w);
}

template <typename T>
BasicTensor<T> adaptive_avg_pool3d_backward(const BasicTensor<T>& dy, const Shape& input_shape) {
  require_rank(dy.shape(), 4, "adaptive pool backward");
  const std::size_t frames = dy.dim(0), h = dy.dim(1), w = dy.dim(2);
  check_pool_target(input_shape, frames, h, w);
  const std::size_t T_in = input_shape[0], H = input_shape[1], W = input_shape[2],
                    D = input_shape[3];
  if (dy.dim(3) != D) throw DimensionError("adaptive pool backward: channel mismatch");
  BasicTensor<T> dx(input_shape);
  for (std::size_t f = 0; f < frames; ++f) {
    const PoolWindow wt = adaptive_window(f, T_in, frames);
    for (std::size_t i = 0; i < h; ++i) {
      const PoolWindow wh = adaptive_window(i, H, h);
      for (std::size_t j = 0; j < w; ++j) {
        const PoolWindow ww = adaptive_window(j, W, w);
        const T count = static_cast<T>((wt.end - wt.begin) * (wh.end - wh.begin) * (ww.end - ww.begin));
        const T* g = dy.data().data() + ((f * h + i) * w + j) * D;
        for (std::size_t tt = wt.begin; tt < wt.end; ++tt)
          for (std::size_t y = wh.begin; y < wh.end; ++y)
            for (std::size_t xx = ww.begin; xx < ww.end; ++xx) {
              T* dst = dx.data().data() + ((tt * H + y) * W + xx) * D;
              for (std::size_t c = 0; c < D; ++c) dst[c] += g[c] / count;
            }
      }
    }
  }
  return dx;
}

// -- convolution ------------------------------------------------------------

Conv3dGeometry Conv3dGeometry::same_padding(std::size_t kt, std::size_t kh, std::size_t kw) {
  Conv3dGeometry g;
  const std::array<std::size_t, 3> k{kt, kh, kw};
  for (std::size_t a = 0; a < 3; ++a) {
    g.pad_before[a] = (k[a] - 1) / 2;
    g.pad_after[a] = k[a] - 1 - g.pad_before[a];
  }
  return g;
}

std::array<std::size_t, 3> conv3d_output_extents(const Shape& input, const Shape& kernel,
                                                 const Conv3dGeometry& geom) {
  require_rank(input, 4, "conv3d input");
  require_rank(kernel, 5, "conv3d kernel");
  if (kernel[3] != input[3]) {
    throw DimensionError("conv3d: kernel expects " + std::to_string(kernel[3]) +
                         " input channels, got " + std::to_string(input[3]));
  }
  std::array<std::size_t, 3> out{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (geom.stride[a] == 0) throw DimensionError("conv3d: stride must be positive");
    const std::size_t padded = input[a] + geom.pad_before[a] + geom.pad_after[a];
    if (padded < kernel[a]) throw DimensionError("conv3d: kernel larger than padded input");
    out[a] = (padded - kernel[a]) / geom.stride[a] + 1;
  }
  return out;
}

namespace {

// Visits every (output cell, kernel tap) pair that lands inside the input.
template <typename Fn>
void for_each_tap(const Shape& input, const Shape& kernel, const Conv3dGeometry& geom,
                  const std::array<std::size_t, 3>& out, Fn&& fn) {
  const std::size_t kt = kernel[0], kh = kernel[1], kw = kernel[2];
  for (std::size_t ot = 0; ot < out[0]; ++ot)
    for (std::size_t oh = 0; oh < out[1]; ++oh)
      for (std::size_t ow = 0; ow < out[2]; ++ow) {
        const std::size_t out_cell = (ot * out[1] + oh) * out[2] + ow;
        for (std::size_t a = 0; a < kt; ++a) {
          const long it = static_cast<long>(ot * geom.stride[0] + a) - static_cast<long>(geom.pad_before[0]);
          if (it < 0 || it >= static_cast<long>(input[0])) continue;
          for (std::size_t b = 0; b < kh; ++b) {
            const long ih = static_cast<long>(oh * geom.stride[1] + b) - static_cast<long>(geom.pad_before[1]);
            if (ih < 0 || ih >= static_cast<long>(input[1])) continue;
            for (std::size_t c = 0; c < kw; ++c) {
              const long iw = static_cast<long>(ow * geom.stride[2] + c) - static_cast<long>(geom.pad_before[2]);
              if (iw < 0 || iw >= static_cast<long>(input[2])) continue;
              const std::size_t in_cell =
                  (static_cast<std::size_t>(it) * input[1] + static_cast<std::size_t>(ih)) * input[2] +
                  static_cast<std::size_t>(iw);
              const std::size_t tap = (a * kh + b) * kw + c;
              fn(out_cell, in_cell, tap);
            }
          }
        }
      }
}

}  // namespace

template <typename T>
BasicTensor<T> conv3d_simple(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                             const Conv3dGeometry& geom) {
  const auto out = conv3d_output_extents(x.shape(), kernel.shape(), geom);
  const std::size_t d_in = kernel.dim(3), d_out = kernel.dim(4);
  BasicTensor<T> y({out[0], out[1], out[2], d_out});
  for_each_tap(x.shape(), kernel.shape(), geom, out,
               [&](std::size_t oc, std::size_t ic, std::size_t tap) {
                 const T* src = x.data().data() + ic * d_in;
                 const T* k = kernel.data().data() + tap * d_in * d_out;
                 T* dst = y.data().data() + oc * d_out;
                 for (std::size_t ci = 0; ci < d_in; ++ci) {
                   const T v = src[ci];
                   const T* krow = k + ci * d_out;
                   for (std::size_t co = 0; co < d_out; ++co) dst[co] += v * krow[co];
                 }
               });
  return y;
}

template <typename T>
BasicTensor<T> conv3d_backward_input(const BasicTensor<T>& dy, const BasicTensor<T>& kernel,
                                     const Shape& input_shape, const Conv3dGeometry& geom) {
  const auto out = conv3d_output_extents(input_shape, kernel.shape(), geom);
  const std::size_t d_in = kernel.dim(3), d_out = kernel.dim(4);
  if (dy.shape() != Shape{out[0], out[1], out[2], d_out}) {
    throw DimensionError("conv3d_backward_input: gradient shape mismatch");
  }
  BasicTensor<T> dx(input_shape);
  for_each_tap(input_shape, kernel.shape(), geom, out,
               [&](std::size_t oc, std::size_t ic, std::size_t tap) {
                 const T* g = dy.data().data() + oc * d_out;
                 const T* k = kernel.data().data() + tap * d_in * d_out;
                 T* dst = dx.data().data() + ic * d_in;
                 for (std::size_t ci = 0; ci < d_in; ++ci) {
                   const T* krow = k + ci * d_out;
                   T acc = 0;
                   for (std::size_t co = 0; co < d_out; ++co) acc += krow[co] * g[co];
                   dst[ci] += acc;
                 }
               });
  return dx;
}

template <typename T>
BasicTensor<T> conv3d_backward_kernel(const BasicTensor<T>& dy, const BasicTensor<T>& x,
                                      const Shape& kernel_shape, const Conv3dGeometry& geom) {
  const auto out = conv3d_output_extents(x.shape(), kernel_shape, geom);
  const std::size_t d_in = kernel_shape[3], d_out = kernel_shape[4];
  if (dy.shape() != Shape{out[0], out[1], out[2], d_out}) {
    throw DimensionError("conv3d_backward_kernel: gradient shape mismatch");
  }
  BasicTensor<T> dk(kernel_shape);
  for_each_tap(x.shape(), kernel_shape, geom, out,
               [&](std::size_t oc, std::size_t ic, std::size_t tap) {
                 const T* g = dy.data().data() + oc * d_out;
                 const T* src = x.data().data() + ic * d_in;
                 T* k = dk.data().data() + tap * d_in * d_out;
                 for (std::size_t ci = 0; ci < d_in; ++ci) {
                   const T v = src[ci];
                   T* krow = k + ci * d_out;
                   for (std::size_t co = 0; co < d_out; ++co) krow[co] += v * g[co];
                 }
               });
  return dk;
}

#define MERV_INSTANTIATE(T)                                                                       \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);                   \
  template BasicTensor<T> matmul_nt(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> matmul_tn(const BasicTensor<T>&, const BasicTensor<T>&);                \
  template BasicTensor<T> transpose(const BasicTensor<T>&);                                       \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                    \
                                 const BasicTensor<T>*);                                          \
  template BasicTensor<T> softmax(const BasicTensor<T>&, std::size_t);                            \
  template BasicTensor<T> softmax_backward(const BasicTensor<T>&, const BasicTensor<T>&,          \
                                           std::size_t);                                          \
  template BasicTensor<T> mean_over_axis(const BasicTensor<T>&, std::size_t);                     \
  template BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>&, std::size_t, std::size_t);   \
  template BasicTensor<T> adaptive_avg_pool3d(const BasicTensor<T>&, std::size_t, std::size_t,    \
                                              std::size_t);                                       \
  template BasicTensor<T> adaptive_avg_pool3d_backward(const BasicTensor<T>&, const Shape&);      \
  template BasicTensor<T> conv3d_simple(const BasicTensor<T>&, const BasicTensor<T>&,             \
                                        const Conv3dGeometry&);                                   \
  template BasicTensor<T> conv3d_backward_input(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                                const Shape&, const Conv3dGeometry&);             \
  template BasicTensor<T> conv3d_backward_kernel(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                 const Shape&, const Conv3dGeometry&);

MERV_INSTANTIATE(float)
MERV_INSTANTIATE(double)

#undef MERV_INSTANTIATE

}  // namespace merv
