#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "fsar/tensor/tensor.hpp"

namespace fsar {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::size_t elements = 0;
  bool passed = true;
};

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences. The error per tensor is ||analytic - numeric|| /
/// max(||analytic||, ||numeric||); the worst tensor is reported.
inline GradCheckResult check_gradients(const std::function<Tensor<double>()>& loss_fn, std::vector<Tensor<double>> wrt,
                                       double tolerance, double eps = 1e-6) {
  for (auto& t : wrt) t.zero_grad();
  const Tensor<double> loss = loss_fn();
  loss.backward();

  GradCheckResult result;
  for (auto& t : wrt) {
    const NdArray<double> analytic = t.has_grad() ? t.grad() : NdArray<double>(t.shape());
    auto& value = t.mutable_value();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
    NoGradGuard no_grad;
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + eps;
      const double up = loss_fn().item();
      value[i] = saved - eps;
      const double down = loss_fn().item();
      value[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      diff2 += (analytic[i] - numeric) * (analytic[i] - numeric);
      a2 += analytic[i] * analytic[i];
      n2 += numeric * numeric;
    }
    result.elements += value.size();
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    // Below the finite-difference noise floor only the absolute difference is meaningful.
    const double err = denom > 1e-7 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
    result.max_relative_error = std::max(result.max_relative_error, err);
  }
  result.passed = result.max_relative_error <= tolerance;
  for (auto& t : wrt) t.zero_grad();
  return result;
}

}  // namespace fsar
