#pragma once

#include <array>
#include <cstddef>
#include <functional>
#include <utility>

#include "merv/tensor.hpp"

// Dense kernels used by the pipeline. All loops run in a fixed order so a
// given build produces bit-identical results; nothing here is reassociated.

namespace merv {

// -- products ---------------------------------------------------------------

/// a[m,k] x b[k,n] -> [m,n].
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// a[m,k] x b[n,k]^T -> [m,n].
template <typename T>
BasicTensor<T> matmul_nt(const BasicTensor<T>& a, const BasicTensor<T>& b);

/// a[k,m]^T x b[k,n] -> [m,n].
template <typename T>
BasicTensor<T> matmul_tn(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> transpose(const BasicTensor<T>& a);

/// x[..., k] W[k, n] (+ bias[n]) -> [..., n]. Leading axes are flattened
/// into rows and restored afterwards.
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& x, const BasicTensor<T>& weight,
                      const BasicTensor<T>* bias = nullptr);

// -- reductions -------------------------------------------------------------

/// Numerically stable softmax along `axis` (per-slice max is subtracted).
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& v, std::size_t axis);

/// Vector-Jacobian product of softmax given its output y and upstream dy.
template <typename T>
BasicTensor<T> softmax_backward(const BasicTensor<T>& y, const BasicTensor<T>& dy,
                                std::size_t axis);

/// Arithmetic mean along `axis`; the axis is dropped (rank-1 input keeps a
/// single element of extent 1).
template <typename T>
BasicTensor<T> mean_over_axis(const BasicTensor<T>& x, std::size_t axis);

// -- pooling ----------------------------------------------------------------

/// Half-open input window [begin, end) feeding output cell `index` when an
/// axis of extent `in` is pooled to `out` cells.
struct PoolWindow {
  std::size_t begin;
  std::size_t end;
};
PoolWindow adaptive_window(std::size_t index, std::size_t in, std::size_t out);

/// x[t, h_e, w_e, d] -> [t, h, w, d]; each frame and channel independent.
template <typename T>
BasicTensor<T> adaptive_avg_pool2d(const BasicTensor<T>& x, std::size_t h, std::size_t w);

/// x[t, h_e, w_e, d] -> [frames, h, w, d] with the same window rule on the
/// frame axis.
template <typename T>
BasicTensor<T> adaptive_avg_pool3d(const BasicTensor<T>& x, std::size_t frames, std::size_t h,
                                   std::size_t w);

/// Gradient of adaptive_avg_pool3d with respect to its input.
template <typename T>
BasicTensor<T> adaptive_avg_pool3d_backward(const BasicTensor<T>& dy, const Shape& input_shape);

// -- convolution ------------------------------------------------------------

struct Conv3dGeometry {
  std::array<std::size_t, 3> stride{1, 1, 1};
  std::array<std::size_t, 3> pad_before{0, 0, 0};
  std::array<std::size_t, 3> pad_after{0, 0, 0};

  static Conv3dGeometry same_padding(std::size_t kt, std::size_t kh, std::size_t kw);
};

/// Output extents of a direct 3D correlation.
std::array<std::size_t, 3> conv3d_output_extents(const Shape& input, const Shape& kernel,
                                                 const Conv3dGeometry& geom);

/// Direct zero-padded correlation.
/// x[t, h, w, d_in], kernel[k_t, k_h, k_w, d_in, d_out] -> [t', h', w', d_out].
template <typename T>
BasicTensor<T> conv3d_simple(const BasicTensor<T>& x, const BasicTensor<T>& kernel,
                             const Conv3dGeometry& geom = {});

template <typename T>
BasicTensor<T> conv3d_backward_input(const BasicTensor<T>& dy, const BasicTensor<T>& kernel,
                                     const Shape& input_shape, const Conv3dGeometry& geom);

template <typename T>
BasicTensor<T> conv3d_backward_kernel(const BasicTensor<T>& dy, const BasicTensor<T>& x,
                                      const Shape& kernel_shape, const Conv3dGeometry& geom);

// -- layers -----------------------------------------------------------------

/// Row-wise layer normalisation of x[rows, n] with per-channel gain and bias.
template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps = T(1e-5));

template <typename T>
struct LayerNormGrads {
  BasicTensor<T> dx, dgain, dbias;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                                      const BasicTensor<T>& dy, T eps = T(1e-5));

/// tanh-approximated GELU, elementwise.
template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy);

/// Scaled dot-product attention with `heads` equal column groups.
/// q[m, dk], k[n, dk], v[n, dv] -> out[m, dv]; probs[heads, m, n].
template <typename T>
struct AttentionResult {
  BasicTensor<T> out;
  BasicTensor<T> probs;
};

template <typename T>
AttentionResult<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                             const BasicTensor<T>& v, std::size_t heads, bool causal);

template <typename T>
struct AttentionGrads {
  BasicTensor<T> dq, dk, dv;
};

template <typename T>
AttentionGrads<T> attention_backward(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                     const BasicTensor<T>& v, const BasicTensor<T>& probs,
                                     const BasicTensor<T>& dout, std::size_t heads);

// -- verification -----------------------------------------------------------

using ScalarFn = std::function<double(const Tensor64&)>;

/// Central differences (f(x + eps e_i) - f(x - eps e_i)) / (2 eps) for every
/// coordinate, in 64-bit.
Tensor64 finite_diff_grad(const ScalarFn& f, const Tensor64& x, double eps = 1e-5);

/// |a - b| / max(|a|, |b|, floor). The floor keeps near-zero gradients from
/// blowing up the ratio.
double relative_error(double a, double b, double floor = 1e-6);

/// Largest relative_error over all coordinates.
double max_relative_error(const Tensor64& a, const Tensor64& b, double floor = 1e-6);

}  // namespace merv
