#include <cmath>
#include <limits>
#include <numbers>

#include "merv/errors.hpp"
#include "merv/numerics.hpp"

namespace merv {

namespace {

void check_norm_args(const Shape& x, const Shape& gain, const char* what) {
  if (x.size() != 2) throw DimensionError(std::string(what) + ": expected rank-2 input");
  if (gain.size() != 1 || gain[0] != x[1]) {
    throw DimensionError(std::string(what) + ": gain/bias must have extent " + std::to_string(x[1]));
  }
}

}  // namespace

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                          const BasicTensor<T>& bias, T eps) {
  check_norm_args(x.shape(), gain.shape(), "layer_norm");
  check_norm_args(x.shape(), bias.shape(), "layer_norm");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  BasicTensor<T> y(x.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * n;
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += src[c];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (src[c] - mean) * (src[c] - mean);
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    T* dst = y.data().data() + r * n;
    for (std::size_t c = 0; c < n; ++c) dst[c] = (src[c] - mean) * inv * gain[c] + bias[c];
  }
  return y;
}

template <typename T>
LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>& x, const BasicTensor<T>& gain,
                                      const BasicTensor<T>& dy, T eps) {
  check_norm_args(x.shape(), gain.shape(), "layer_norm_backward");
  if (dy.shape() != x.shape()) throw DimensionError("layer_norm_backward: gradient shape mismatch");
  const std::size_t rows = x.dim(0), n = x.dim(1);
  LayerNormGrads<T> g{BasicTensor<T>(x.shape()), BasicTensor<T>({n}), BasicTensor<T>({n})};
  std::vector<T> xhat(n), dxhat(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* src = x.data().data() + r * n;
    const T* gy = dy.data().data() + r * n;
    T mean = 0;
    for (std::size_t c = 0; c < n; ++c) mean += src[c];
    mean /= static_cast<T>(n);
    T var = 0;
    for (std::size_t c = 0; c < n; ++c) var += (src[c] - mean) * (src[c] - mean);
    var /= static_cast<T>(n);
    const T inv = T(1) / std::sqrt(var + eps);
    T mean_d = 0, mean_dx = 0;
    for (std::size_t c = 0; c < n; ++c) {
      xhat[c] = (src[c] - mean) * inv;
      dxhat[c] = gy[c] * gain[c];
      g.dgain[c] += gy[c] * xhat[c];
      g.dbias[c] += gy[c];
      mean_d += dxhat[c];
      mean_dx += dxhat[c] * xhat[c];
    }
    mean_d /= static_cast<T>(n);
    mean_dx /= static_cast<T>(n);
    T* dst = g.dx.data().data() + r * n;
    for (std::size_t c = 0; c < n; ++c) dst[c] = inv * (dxhat[c] - mean_d - xhat[c] * mean_dx);
  }
  return g;
}

namespace {

template <typename T>
constexpr T kGeluC = static_cast<T>(0.7978845608028654);  // sqrt(2 / pi)
template <typename T>
constexpr T kGeluA = static_cast<T>(0.044715);

}  // namespace

template <typename T>
BasicTensor<T> gelu(const BasicTensor<T>& x) {
  BasicTensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    y[i] = T(0.5) * v * (T(1) + std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v)));
  }
  return y;
}

template <typename T>
BasicTensor<T> gelu_backward(const BasicTensor<T>& x, const BasicTensor<T>& dy) {
  if (x.shape() != dy.shape()) throw DimensionError("gelu_backward: shape mismatch");
  BasicTensor<T> dx(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    const T th = std::tanh(kGeluC<T> * (v + kGeluA<T> * v * v * v));
    const T d = T(0.5) * (T(1) + th) +
                T(0.5) * v * (T(1) - th * th) * kGeluC<T> * (T(1) + T(3) * kGeluA<T> * v * v);
    dx[i] = dy[i] * d;
  }
  return dx;
}

namespace {

struct HeadSplit {
  std::size_t m, n, dk, dv, hk, hv;
};

HeadSplit check_attention(const Shape& q, const Shape& k, const Shape& v, std::size_t heads) {
  if (q.size() != 2 || k.size() != 2 || v.size() != 2) {
    throw DimensionError("attention: q, k, v must be rank 2");
  }
  if (q[1] != k[1]) throw DimensionError("attention: query and key widths differ");
  if (k[0] != v[0]) throw DimensionError("attention: key and value lengths differ");
  if (heads == 0 || q[1] % heads != 0 || v[1] % heads != 0) {
    throw DimensionError("attention: widths must divide evenly into heads");
  }
  return {q[0], k[0], q[1], v[1], q[1] / heads, v[1] / heads};
}

}  // namespace

template <typename T>
AttentionResult<T> attention(const BasicTensor<T>& q, const BasicTensor<T>& k,
                             const BasicTensor<T>& v, std::size_t heads, bool causal) {
  const HeadSplit s = check_attention(q.shape(), k.shape(), v.shape(), heads);
  if (causal && s.n < s.m) throw DimensionError("causal attention needs at least as many keys as queries");
  AttentionResult<T> r{BasicTensor<T>({s.m, s.dv}), BasicTensor<T>({heads, s.m, s.n})};
  const T scale = T(1) / std::sqrt(static_cast<T>(s.hk));
  const std::size_t offset = s.n - s.m;  // query i sees keys j <= i + offset
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < s.m; ++i) {
      T* p = r.probs.data().data() + (h * s.m + i) * s.n;
      const std::size_t visible = causal ? i + offset + 1 : s.n;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j < visible; ++j) {
        T dot = 0;
        for (std::size_t c = 0; c < s.hk; ++c) dot += q[i * s.dk + h * s.hk + c] * k[j * s.dk + h * s.hk + c];
        p[j] = dot * scale;
        mx = std::max(mx, p[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j < visible; ++j) {
        p[j] = std::exp(p[j] - mx);
        sum += p[j];
      }
      for (std::size_t j = 0; j < visible; ++j) p[j] /= sum;
      T* o = r.out.data().data() + i * s.dv + h * s.hv;
      for (std::size_t j = 0; j < visible; ++j) {
        const T pj = p[j];
        const T* vr = v.data().data() + j * s.dv + h * s.hv;
        for (std::size_t c = 0; c < s.hv; ++c) o[c] += pj * vr[c];
      }
    }
  }
  return r;
}

template <typename T>
AttentionGrads<T> attention_backward(const BasicTensor<T>& q, const BasicTensor<T>& k,
                                     const BasicTensor<T>& v, const BasicTensor<T>& probs,
                                     const BasicTensor<T>& dout, std::size_t heads) {
  const HeadSplit s = check_attention(q.shape(), k.shape(), v.shape(), heads);
  if (probs.shape() != Shape{heads, s.m, s.n} || dout.shape() != Shape{s.m, s.dv}) {
    throw DimensionError("attention_backward: shape mismatch");
  }
  AttentionGrads<T> g{BasicTensor<T>(q.shape()), BasicTensor<T>(k.shape()), BasicTensor<T>(v.shape())};
  const T scale = T(1) / std::sqrt(static_cast<T>(s.hk));
  std::vector<T> dp(s.n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < s.m; ++i) {
      const T* p = probs.data().data() + (h * s.m + i) * s.n;
      const T* go = dout.data().data() + i * s.dv + h * s.hv;
      T dot = 0;
      for (std::size_t j = 0; j < s.n; ++j) {
        const T* vr = v.data().data() + j * s.dv + h * s.hv;
        T* dvr = g.dv.data().data() + j * s.dv + h * s.hv;
        T acc = 0;
        for (std::size_t c = 0; c < s.hv; ++c) {
          acc += go[c] * vr[c];
          dvr[c] += p[j] * go[c];
        }
        dp[j] = acc;
        dot += p[j] * acc;
      }
      for (std::size_t j = 0; j < s.n; ++j) {
        const T ds = p[j] * (dp[j] - dot) * scale;
        if (ds == T(0)) continue;
        const T* kr = k.data().data() + j * s.dk + h * s.hk;
        const T* qr = q.data().data() + i * s.dk + h * s.hk;
        T* dqr = g.dq.data().data() + i * s.dk + h * s.hk;
        T* dkr = g.dk.data().data() + j * s.dk + h * s.hk;
        for (std::size_t c = 0; c < s.hk; ++c) {
          dqr[c] += ds * kr[c];
          dkr[c] += ds * qr[c];
        }
      }
    }
  }
  return g;
}

#define MERV_INSTANTIATE(T)                                                                        \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,                 \
                                     const BasicTensor<T>&, T);                                    \
  template LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>&, const BasicTensor<T>&,     \
                                                 const BasicTensor<T>&, T);                        \
  template BasicTensor<T> gelu(const BasicTensor<T>&);                                             \
  template BasicTensor<T> gelu_backward(const BasicTensor<T>&, const BasicTensor<T>&);             \
  template AttentionResult<T> attention(const BasicTensor<T>&, const BasicTensor<T>&,              \
                                        const BasicTensor<T>&, std::size_t, bool);                 \
  template AttentionGrads<T> attention_backward(const BasicTensor<T>&, const BasicTensor<T>&,      \
                                                const BasicTensor<T>&, const BasicTensor<T>&,      \
                                                const BasicTensor<T>&, std::size_t);

MERV_INSTANTIATE(float)
MERV_INSTANTIATE(double)

#undef MERV_INSTANTIATE

}  // namespace merv
