#pragma once

#include <random>

#include "fsar/tensor/nn.hpp"

namespace fsar::testing {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, bool requires_grad = true, double stddev = 1.0) {
  return Tensor<double>(normal_array<double>(std::move(shape), stddev, rng), requires_grad);
}

/// Scalar probe sum(out * w) with fixed random weights, so every output
/// element contributes to the checked gradient.
inline Tensor<double> probe(const Tensor<double>& out, std::uint64_t seed = 99) {
  Rng rng(seed);
  const Tensor<double> w(normal_array<double>(out.shape(), 1.0, rng));
  return sum_all(mul(out, w));
}

}  // namespace fsar::testing
