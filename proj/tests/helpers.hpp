#pragma once

// Shared test utilities. fd_grad is a plain central difference written
// independently of the library's gradient checker.

#include <cmath>
#include <functional>
#include <vector>

#include "cinformer/params.hpp"
#include "cinformer/rng.hpp"

namespace testutil {

using Td = cinformer::ad::Tensor<double>;

inline double fd_grad(Td leaf, std::size_t i, const std::function<double()>& loss, double h = 1e-3) {
  cinformer::ad::NoGradGuard guard;
  double& x = leaf.mutable_data()[i];
  const double saved = x;
  x = saved + h;
  const double up = loss();
  x = saved - h;
  const double down = loss();
  x = saved;
  return (up - down) / (2 * h);
}

inline double rel_err(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6});
}

inline Td noise(cinformer::Shape shape, std::uint64_t seed, double lo = -1, double hi = 1) {
  cinformer::SeededRng rng(seed);
  std::vector<double> v(cinformer::numel(shape));
  for (double& x : v) x = rng.uniform(lo, hi);
  return Td::from(std::move(shape), std::move(v), true);
}

inline cinformer::ad::Tensor<float> noise_f(cinformer::Shape shape, std::uint64_t seed, double lo = -1,
                                            double hi = 1) {
  const Td d = noise(shape, seed, lo, hi);
  return cinformer::ad::Tensor<float>::from(std::move(shape), std::vector<float>(d.data().begin(), d.data().end()));
}

template <class T>
std::vector<T> values(const cinformer::ad::Tensor<T>& t) {
  return {t.data().begin(), t.data().end()};
}

}  // namespace testutil
