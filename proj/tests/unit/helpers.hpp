#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "merv/rng.hpp"
#include "merv/tensor.hpp"

namespace merv::test {

template <typename T = float>
BasicTensor<T> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(rng.normal() * scale);
  return BasicTensor<T>(std::move(shape), std::move(v));
}

template <typename T>
double max_abs_diff(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  double m = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) m = std::fmax(m, std::fabs(double(a[i]) - double(b[i])));
  return m;
}

}  // namespace merv::test
