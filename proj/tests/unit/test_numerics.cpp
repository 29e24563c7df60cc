#include <cmath>
#include <limits>
#include <numbers>

#include "doctest.h"
#include "helpers.hpp"
#include "merv/errors.hpp"
#include "merv/numerics.hpp"

using namespace merv;
using merv::test::max_abs_diff;
using merv::test::random_tensor;

TEST_SUITE("numerics") {

TEST_CASE("tensor rejects mismatched data and non-finite values") {
  CHECK_THROWS_AS(Tensor({2, 2}, std::vector<float>{1, 2, 3}), DimensionError);
#if MERV_CHECKED
  CHECK_THROWS(Tensor({1}, std::vector<float>{std::numeric_limits<float>::quiet_NaN()}));
  CHECK_THROWS(Tensor({1}, std::vector<float>{std::numeric_limits<float>::infinity()}));
#endif
  Tensor t({2, 3});
  CHECK(t.numel() == 6);
  t.at({1, 2}) = 5.0f;
  CHECK(t[5] == 5.0f);
}

TEST_CASE("matmul small cases") {
  const auto a = Tensor::matrix({{1, 2}, {3, 4}});
  CHECK(matmul(Tensor::matrix({{1, 0}, {0, 1}}), a) == a);
  CHECK(matmul(a, Tensor::matrix({{0}, {0}})) == Tensor::matrix({{0}, {0}}));
  CHECK(matmul(a, Tensor::matrix({{5}, {6}})) == Tensor::matrix({{17}, {39}}));
  CHECK_THROWS_AS(matmul(a, Tensor::matrix({{1, 2, 3}})), DimensionError);
}

TEST_CASE("matmul variants agree with explicit transposes") {
  const auto a = random_tensor<double>({3, 5}, 1), b = random_tensor<double>({4, 5}, 2);
  CHECK(max_abs_diff(matmul_nt(a, b), matmul(a, transpose(b))) < 1e-12);
  const auto c = random_tensor<double>({3, 4}, 3);
  CHECK(max_abs_diff(matmul_tn(a, c), matmul(transpose(a), c)) < 1e-12);
}

TEST_CASE("matmul is associative on random triples") {
  for (std::uint64_t s = 0; s < 20; ++s) {
    const auto a = random_tensor({3, 4}, 10 * s), b = random_tensor({4, 5}, 10 * s + 1),
               c = random_tensor({5, 2}, 10 * s + 2);
    const auto l = matmul(matmul(a, b), c), r = matmul(a, matmul(b, c));
    double scale = 0;
    for (float v : l.data()) scale = std::fmax(scale, std::fabs(v));
    CHECK(max_abs_diff(l, r) <= 1e-4 * std::fmax(scale, 1.0));
  }
}

TEST_CASE("matmul is bit-reproducible") {
  const auto a = random_tensor({17, 33}, 5), b = random_tensor({33, 9}, 6);
  CHECK(matmul(a, b) == matmul(a, b));
}

TEST_CASE("softmax closed forms") {
  auto s = softmax(Tensor::vector({2.5f, 2.5f, 2.5f}), 0);
  for (float v : s.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-7));
  CHECK(softmax(Tensor::vector({-7.0f}), 0)[0] == 1.0f);
  const auto p = softmax(Tensor64::vector({0.0, std::log(3.0)}), 0);
  CHECK(p[0] == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(p[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK_THROWS_AS(softmax(Tensor({2, 0}), 1), DimensionError);
}

TEST_CASE("softmax sums to one for inputs up to magnitude 80") {
  Rng rng(42);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<float> v(7);
    for (auto& x : v) x = static_cast<float>(rng.uniform(-80, 80));
    const auto p = softmax(Tensor({7}, v), 0);
    double sum = 0;
    for (float x : p.data()) {
      CHECK(x >= 0.0f);
      sum += x;
    }
    CHECK(std::fabs(sum - 1.0) <= 1e-6);
  }
}

TEST_CASE("softmax along an inner axis normalises each slice") {
  const auto x = random_tensor({3, 4, 5}, 9, 3.0);
  const auto p = softmax(x, 1);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t k = 0; k < 5; ++k) {
      double sum = 0;
      for (std::size_t j = 0; j < 4; ++j) sum += p.at({i, j, k});
      CHECK(std::fabs(sum - 1.0) <= 1e-6);
    }
}

TEST_CASE("adaptive window rule") {
  CHECK(adaptive_window(0, 16, 8).begin == 0);
  CHECK(adaptive_window(0, 16, 8).end == 2);
  // 14 -> 8: floor(i*14/8), ceil((i+1)*14/8)
  for (std::size_t i = 0; i < 8; ++i) {
    const auto w = adaptive_window(i, 14, 8);
    CHECK(w.begin == (i * 14) / 8);
    CHECK(w.end == ((i + 1) * 14 + 7) / 8);
  }
}

TEST_CASE("adaptive_avg_pool2d hand case and trivial cases") {
  std::vector<float> grid(16);
  for (int i = 0; i < 16; ++i) grid[i] = static_cast<float>(i + 1);
  const Tensor x({1, 4, 4, 1}, grid);
  const auto y = adaptive_avg_pool2d(x, 2, 2);
  CHECK(y.shape() == Shape{1, 2, 2, 1});
  CHECK(y[0] == 3.5f);
  CHECK(y[1] == 5.5f);
  CHECK(y[2] == 11.5f);
  CHECK(y[3] == 13.5f);

  const auto r = random_tensor({2, 5, 3, 4}, 7);
  CHECK(adaptive_avg_pool2d(r, 5, 3) == r);
  const Tensor c({3, 7, 9, 2}, 0.625f);
  const auto pooled = adaptive_avg_pool2d(c, 3, 4);
  for (float v : pooled.data()) CHECK(v == 0.625f);
  CHECK_THROWS_AS(adaptive_avg_pool2d(r, 6, 3), DimensionError);
}

TEST_CASE("adaptive_avg_pool2d keeps the global mean on divisible grids") {
  const auto x = random_tensor<double>({2, 8, 6, 3}, 11);
  const auto y = adaptive_avg_pool2d(x, 4, 3);
  double mx = 0, my = 0;
  for (double v : x.data()) mx += v;
  for (double v : y.data()) my += v;
  CHECK(mx / x.numel() == doctest::Approx(my / y.numel()).epsilon(1e-12));
}

TEST_CASE("adaptive_avg_pool3d") {
  const auto x = random_tensor({4, 6, 6, 2}, 12);
  CHECK(adaptive_avg_pool3d(x, 4, 3, 3) == adaptive_avg_pool2d(x, 3, 3));
  Tensor two({2, 2, 2, 1});
  for (std::size_t i = 0; i < 4; ++i) {
    two[i] = 1.5f;
    two[4 + i] = 4.5f;
  }
  const auto mean = adaptive_avg_pool3d(two, 1, 2, 2);
  for (float v : mean.data()) CHECK(v == 3.0f);
  const Tensor c({5, 4, 4, 1}, -2.0f);
  const auto flat = adaptive_avg_pool3d(c, 2, 2, 1);
  for (float v : flat.data()) CHECK(v == -2.0f);
}

TEST_CASE("mean_over_axis") {
  CHECK(mean_over_axis(Tensor::vector({1, 3}), 0)[0] == 2.0f);
  const auto one = random_tensor({1, 4}, 3);
  CHECK(mean_over_axis(one, 0).values() == one.values());
  const auto x = random_tensor<double>({5, 4}, 13);
  const auto m = mean_over_axis(x, 0);
  REQUIRE(m.shape() == Shape{4});
  for (std::size_t j = 0; j < 4; ++j) {
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i) s += x.at({i, j});
    CHECK(m[j] == doctest::Approx(s / 5).epsilon(1e-14));
  }
}

TEST_CASE("linear") {
  const auto x = random_tensor({2, 3, 4}, 14);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.at({i, i}) = 1.0f;
  CHECK(linear(x, eye) == x);
  const Tensor zero({4, 2});
  const auto bias = Tensor::vector({0.5f, -1.0f});
  const auto y = linear(x, zero, &bias);
  CHECK(y.shape() == Shape{2, 3, 2});
  for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == bias[i % 2]);
  CHECK(linear(Tensor::matrix({{2, 3}}), Tensor::matrix({{4}, {5}}))[0] == 23.0f);
}

TEST_CASE("conv3d_simple") {
  const auto x = random_tensor({3, 4, 5, 2}, 15);
  Tensor id({1, 1, 1, 2, 2});
  id.at({0, 0, 0, 0, 0}) = 1.0f;
  id.at({0, 0, 0, 1, 1}) = 1.0f;
  CHECK(conv3d_simple(x, id) == x);

  const Tensor c({4, 5, 5, 1}, 0.5f);
  const Tensor ones({2, 3, 3, 1, 1}, 1.0f);
  const auto summed = conv3d_simple(c, ones);
  for (float v : summed.data()) CHECK(v == doctest::Approx(0.5 * 18));

  // 2x2 spatial kernel against a sliding-window sum.
  const auto img = random_tensor<double>({1, 4, 3, 1}, 16);
  const auto k = random_tensor<double>({1, 2, 2, 1, 1}, 17);
  const auto y = conv3d_simple(img, k);
  REQUIRE(y.shape() == Shape{1, 3, 2, 1});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double s = 0;
      for (std::size_t a = 0; a < 2; ++a)
        for (std::size_t b = 0; b < 2; ++b) s += img.at({0, i + a, j + b, 0}) * k.at({0, a, b, 0, 0});
      CHECK(y.at({0, i, j, 0}) == doctest::Approx(s).epsilon(1e-14));
    }
}

TEST_CASE("finite_diff_grad simple functions") {
  const auto x = random_tensor<double>({2, 3}, 18);
  const auto g1 = finite_diff_grad([](const Tensor64& v) {
    double s = 0;
    for (double e : v.data()) s += e;
    return s;
  }, x);
  for (double g : g1.data()) CHECK(g == doctest::Approx(1.0).epsilon(1e-8));
  const auto g2 = finite_diff_grad([](const Tensor64& v) {
    double s = 0;
    for (double e : v.data()) s += 0.5 * e * e;
    return s;
  }, x);
  CHECK(max_relative_error(g2, x) < 1e-8);
}

TEST_CASE("finite_diff_grad matches the softmax Jacobian") {
  const auto x = random_tensor<double>({5}, 19);
  const auto c = random_tensor<double>({5}, 20);
  const auto fd = finite_diff_grad([&](const Tensor64& v) {
    const auto p = softmax(v, 0);
    double s = 0;
    for (std::size_t i = 0; i < 5; ++i) s += p[i] * c[i];
    return s;
  }, x);
  // d/dx_j sum_i p_i c_i = p_j (c_j - sum_i p_i c_i)
  const auto p = softmax(x, 0);
  double pc = 0;
  for (std::size_t i = 0; i < 5; ++i) pc += p[i] * c[i];
  Tensor64 analytic({5});
  for (std::size_t j = 0; j < 5; ++j) analytic[j] = p[j] * (c[j] - pc);
  CHECK(max_relative_error(fd, analytic) < 1e-6);
  CHECK(max_relative_error(softmax_backward(p, c, 0), analytic) < 1e-12);
}

TEST_CASE("relative_error floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(1e-12, -1e-12) < 1e-5);
}

// Scalar probe: sum(out * w) for a fixed random w.
template <typename F>
double probe(const F& f, const Tensor64& x, const Tensor64& w) {
  const auto y = f(x);
  double s = 0;
  for (std::size_t i = 0; i < y.numel(); ++i) s += y[i] * w[i];
  return s;
}

TEST_CASE("backward kernels match finite differences") {
  constexpr double tol = 1e-4;
  SUBCASE("layer_norm") {
    const auto x = random_tensor<double>({3, 6}, 21), gain = random_tensor<double>({6}, 22),
               bias = random_tensor<double>({6}, 23), w = random_tensor<double>({3, 6}, 24);
    const auto grads = layer_norm_backward(x, gain, w);
    CHECK(max_relative_error(grads.dx, finite_diff_grad([&](const Tensor64& v) {
      return probe([&](const Tensor64& a) { return layer_norm(a, gain, bias); }, v, w);
    }, x)) < tol);
    CHECK(max_relative_error(grads.dgain, finite_diff_grad([&](const Tensor64& g) {
      return probe([&](const Tensor64& a) { return layer_norm(a, g, bias); }, x, w);
    }, gain)) < tol);
    CHECK(max_relative_error(grads.dbias, finite_diff_grad([&](const Tensor64& b) {
      return probe([&](const Tensor64& a) { return layer_norm(a, gain, b); }, x, w);
    }, bias)) < tol);
  }
  SUBCASE("gelu") {
    const auto x = random_tensor<double>({10}, 25, 2.0), w = random_tensor<double>({10}, 26);
    CHECK(max_relative_error(gelu_backward(x, w), finite_diff_grad([&](const Tensor64& v) {
      return probe([](const Tensor64& a) { return gelu(a); }, v, w);
    }, x)) < tol);
  }
  SUBCASE("attention") {
    for (bool causal : {false, true}) {
      const auto q = random_tensor<double>({3, 4}, 27), k = random_tensor<double>({3, 4}, 28),
                 v = random_tensor<double>({3, 6}, 29), w = random_tensor<double>({3, 6}, 30);
      const auto fwd = attention(q, k, v, 2, causal);
      const auto g = attention_backward(q, k, v, fwd.probs, w, 2);
      auto out = [&](const Tensor64& qq, const Tensor64& kk, const Tensor64& vv) {
        return attention(qq, kk, vv, 2, causal).out;
      };
      CHECK(max_relative_error(g.dq, finite_diff_grad([&](const Tensor64& a) {
        return probe([&](const Tensor64& z) { return out(z, k, v); }, a, w);
      }, q)) < tol);
      CHECK(max_relative_error(g.dk, finite_diff_grad([&](const Tensor64& a) {
        return probe([&](const Tensor64& z) { return out(q, z, v); }, a, w);
      }, k)) < tol);
      CHECK(max_relative_error(g.dv, finite_diff_grad([&](const Tensor64& a) {
        return probe([&](const Tensor64& z) { return out(q, k, z); }, a, w);
      }, v)) < tol);
    }
  }
  SUBCASE("adaptive_avg_pool3d") {
    const auto x = random_tensor<double>({5, 7, 6, 2}, 31), w = random_tensor<double>({3, 3, 4, 2}, 32);
    CHECK(max_relative_error(adaptive_avg_pool3d_backward(w, x.shape()), finite_diff_grad([&](const Tensor64& v) {
      return probe([](const Tensor64& a) { return adaptive_avg_pool3d(a, 3, 3, 4); }, v, w);
    }, x)) < tol);
  }
  SUBCASE("conv3d") {
    const auto geom = Conv3dGeometry::same_padding(2, 3, 3);
    const auto x = random_tensor<double>({3, 4, 4, 2}, 33), k = random_tensor<double>({2, 3, 3, 2, 3}, 34);
    const auto y = conv3d_simple(x, k, geom);
    const auto w = random_tensor<double>(y.shape(), 35);
    CHECK(max_relative_error(conv3d_backward_input(w, k, x.shape(), geom), finite_diff_grad([&](const Tensor64& v) {
      return probe([&](const Tensor64& a) { return conv3d_simple(a, k, geom); }, v, w);
    }, x)) < tol);
    CHECK(max_relative_error(conv3d_backward_kernel(w, x, k.shape(), geom), finite_diff_grad([&](const Tensor64& v) {
      return probe([&](const Tensor64& a) { return conv3d_simple(x, a, geom); }, v, w);
    }, k)) < tol);
  }
}

}  // TEST_SUITE
