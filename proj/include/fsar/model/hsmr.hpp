#pragma once

#include <functional>
#include <string>

#include "fsar/model/distances.hpp"
#include "fsar/model/fusion.hpp"

namespace fsar {

/// Per-frame channel bottleneck C -> C/r -> C.
template <class T>
struct MfeParams {
  Linear<T> reduce;
  Linear<T> expand;
  /// Replaces the activation by the identity, making the map affine.
  bool linear = false;

  static MfeParams init(std::size_t width, std::size_t reduction, Rng& rng) {
    if (reduction == 0 || width % reduction != 0) {
      throw ConfigError("mfe reduction " + std::to_string(reduction) + " does not divide width " +
                        std::to_string(width));
    }
    MfeParams p{Linear<T>::init(width, width / reduction, rng), Linear<T>::init(width / reduction, width, rng)};
    // phi starts at zero so the untrained extractor is plain weighted frame differencing.
    p.expand.zero();
    return p;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    const auto h = reduce(x);
    return expand(linear ? h : gelu(h));
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    reduce.visit(prefix + ".reduce", f);
    expand.visit(prefix + ".expand", f);
  }
};

/// Bidirectional adjacent-frame differencing: frames [B, T, C] -> [B, 1, C].
/// m = sum_t (phi(f[t+1]) - f[t]) + (phi(f[t]) - f[t+1]).
template <class T, class Phi>
Tensor<T> mfe_with(const Tensor<T>& frames, const Phi& phi) {
  if (frames.ndim() != 3) throw DimensionError("mfe expects [B,T,C], got " + shape_str(frames.shape()));
  const std::size_t t = frames.shape()[1];
  if (t < 2) throw ContractError("mfe needs at least 2 frames, got " + std::to_string(t));
  const auto cur = slice(frames, 1, 0, t - 1);
  const auto next = slice(frames, 1, 1, t - 1);
  const auto forward = sub(phi(next), cur);
  const auto backward = sub(phi(cur), next);
  return sum(add(forward, backward), 1, true);
}

template <class T>
Tensor<T> mfe(const Tensor<T>& frames, const MfeParams<T>& params) {
  return mfe_with(frames, [&](const Tensor<T>& x) { return params(x); });
}

template <class T>
struct HsmrParams {
  MfeParams<T> shallow;
  MfeParams<T> deep;
  SfParams<T> fusion;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    shallow.visit(prefix + ".mfe_shallow", f);
    deep.visit(prefix + ".mfe_deep", f);
    fusion.visit(prefix + ".sf", f);
  }
};

struct HsmrOptions {
  SfOptions fusion;
  /// Compare the deep token against the shallow token before fusion.
  bool consistency_pre_fusion = false;
};

template <class T>
struct HsmrOutput {
  Tensor<T> shallow;   // [B, 1, C]
  Tensor<T> deep;      // [B, 1, C]
  Tensor<T> refined;   // [B, T, C]
  Tensor<T> distance;  // [B] consistency distance d_h
};

template <class T>
HsmrOutput<T> hsmr_forward(const Tensor<T>& frames, const HsmrParams<T>& params, const HsmrOptions& opt,
                           const Tensor<T>* positional = nullptr) {
  const auto raw = mfe(frames, params.shallow);
  auto fused = sf_forward(raw, frames, params.fusion, opt.fusion, positional);
  const auto deep = mfe(fused.visual, params.deep);
  const auto& target = opt.consistency_pre_fusion ? raw : fused.prompt;
  return {fused.prompt, deep, fused.visual, con_dis(target, deep)};
}

}  // namespace fsar
