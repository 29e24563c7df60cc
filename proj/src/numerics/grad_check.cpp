#include <algorithm>
#include <cmath>

#include "merv/errors.hpp"
#include "merv/numerics.hpp"

namespace merv {

Tensor64 finite_diff_grad(const ScalarFn& f, const Tensor64& x, double eps) {
  if (!(eps > 0.0)) throw ConfigError("finite_diff_grad: eps must be positive");
  Tensor64 probe = x;
  Tensor64 grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + eps;
    const double up = f(probe);
    probe[i] = orig - eps;
    const double down = f(probe);
    probe[i] = orig;
    grad[i] = (up - down) / (2.0 * eps);
  }
  return grad;
}

double relative_error(double a, double b, double floor) {
  const double denom = std::max({std::abs(a), std::abs(b), floor});
  return std::abs(a - b) / denom;
}

double max_relative_error(const Tensor64& a, const Tensor64& b, double floor) {
  if (a.shape() != b.shape()) throw DimensionError("max_relative_error: shape mismatch");
  double worst = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) worst = std::max(worst, relative_error(a[i], b[i], floor));
  return worst;
}

}  // namespace merv
