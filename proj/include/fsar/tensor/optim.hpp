#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fsar/tensor/tensor.hpp"

namespace fsar {

struct AdamOptions {
  double lr = 1e-5;
  double weight_decay = 5e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  std::vector<NdArray<T>> first_moment;
  std::vector<NdArray<T>> second_moment;
  std::uint64_t step = 0;
};

struct AdamStepReport {
  bool applied = false;
  std::string reason;
};

/// One Adam update with decoupled weight decay. A non-finite gradient skips the
/// whole step and leaves params and state untouched.
template <class T>
AdamStepReport adam_step(std::span<Tensor<T>> params, std::span<const NdArray<T>> grads, AdamState<T>& state,
                         const AdamOptions& opt) {
  if (params.size() != grads.size()) throw ContractError("adam_step: params/grads count mismatch");
  if (state.first_moment.empty()) {
    for (const auto& p : params) {
      state.first_moment.emplace_back(p.shape());
      state.second_moment.emplace_back(p.shape());
    }
  }
  if (state.first_moment.size() != params.size()) throw ContractError("adam_step: state does not match params");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].shape() != params[i].shape() || state.first_moment[i].shape() != params[i].shape()) {
      throw DimensionError("adam_step: shape mismatch for parameter " + std::to_string(i));
    }
    for (T g : grads[i].data()) {
      if (!std::isfinite(g)) return {false, "non-finite gradient in parameter " + std::to_string(i)};
    }
  }

  ++state.step;
  const double bc1 = 1.0 - std::pow(opt.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(opt.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& w = params[i].mutable_value();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = static_cast<double>(g[j]);
      const double mj = opt.beta1 * static_cast<double>(m[j]) + (1.0 - opt.beta1) * gj;
      const double vj = opt.beta2 * static_cast<double>(v[j]) + (1.0 - opt.beta2) * gj * gj;
      m[j] = static_cast<T>(mj);
      v[j] = static_cast<T>(vj);
      const double update = (mj / bc1) / (std::sqrt(vj / bc2) + opt.eps) + opt.weight_decay * static_cast<double>(w[j]);
      w[j] = static_cast<T>(static_cast<double>(w[j]) - opt.lr * update);
    }
  }
  return {true, {}};
}

}  // namespace fsar
