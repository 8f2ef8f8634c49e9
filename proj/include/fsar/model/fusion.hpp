#pragma once

#include <string>
#include <utility>
#include <vector>

#include "fsar/tensor/nn.hpp"

namespace fsar {

enum class FusionStrategy { concat, concat_sum, gate };

inline std::string fusion_name(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::concat: return "concat";
    case FusionStrategy::concat_sum: return "concat+sum";
    default: return "concat+sum+gate";
  }
}

inline FusionStrategy parse_fusion(const std::string& s) {
  if (s == "concat") return FusionStrategy::concat;
  if (s == "concat+sum" || s == "sum") return FusionStrategy::concat_sum;
  if (s == "concat+sum+gate" || s == "gate") return FusionStrategy::gate;
  throw ConfigError("unknown fusion strategy '" + s + "' (concat | concat+sum | concat+sum+gate)");
}

struct SfOptions {
  FusionStrategy strategy = FusionStrategy::gate;
  /// Gate the raw streams and feed the gated visual stream to the encoder,
  /// instead of gating the encoder outputs.
  bool gate_pre_encoder = false;
};

template <class T>
struct SfParams {
  std::vector<EncoderLayerParams<T>> encoder;
  Linear<T> gate_visual;
  Linear<T> gate_prompt;

  static SfParams init(std::size_t width, std::size_t depth, std::size_t heads, std::size_t ff_mult, Rng& rng) {
    SfParams p;
    p.encoder = init_encoder<T>(depth, width, heads, ff_mult, rng);
    p.gate_visual = Linear<T>::init(width, width, rng);
    p.gate_prompt = Linear<T>::init(width, width, rng);
    // Gates start neutral at 0.5 for every channel.
    p.gate_visual.zero();
    p.gate_prompt.zero();
    return p;
  }

  std::size_t width() const { return gate_visual.in_features(); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < encoder.size(); ++i) encoder[i].visit(prefix + ".encoder." + std::to_string(i), f);
    gate_visual.visit(prefix + ".gate_visual", f);
    gate_prompt.visit(prefix + ".gate_prompt", f);
  }
};

template <class T>
struct SfOutput {
  Tensor<T> prompt;  // [B, P, C]
  Tensor<T> visual;  // [B, T, C]
};

/// Semantic fusion of prompt tokens [B, P, C] with visual tokens [B, T, C].
/// `positional` ([T, C]) is added to the visual tokens first when given.
template <class T>
SfOutput<T> sf_forward(const Tensor<T>& prompt, const Tensor<T>& visual, const SfParams<T>& params,
                       const SfOptions& opt, const Tensor<T>* positional = nullptr) {
  if (prompt.ndim() != 3 || visual.ndim() != 3 || prompt.shape()[0] != visual.shape()[0]) {
    throw DimensionError("sf_forward expects [B,P,C] and [B,T,C], got " + shape_str(prompt.shape()) + " and " +
                         shape_str(visual.shape()));
  }
  const std::size_t c = params.width();
  if (prompt.shape()[2] != c || visual.shape()[2] != c) {
    throw DimensionError("sf_forward channel mismatch: prompt " + shape_str(prompt.shape()) + ", visual " +
                         shape_str(visual.shape()) + ", width " + std::to_string(c));
  }
  const std::size_t np = prompt.shape()[1], nt = visual.shape()[1];
  const Tensor<T> v = positional ? add(visual, *positional) : visual;
  const Tensor<T>& p = prompt;

  if (opt.strategy == FusionStrategy::gate && opt.gate_pre_encoder) {
    const auto pg = mul(sigmoid(params.gate_prompt(p)), p);
    const auto gated = add(mul(sigmoid(params.gate_visual(v)), v), pg);
    auto parts = split(encoder(concat<T>({p, gated}, 1), params.encoder), {np, nt}, 1);
    return {parts[0], parts[1]};
  }

  auto parts = split(encoder(concat<T>({p, v}, 1), params.encoder), {np, nt}, 1);
  const Tensor<T>& pc = parts[0];
  const Tensor<T>& vc = parts[1];
  switch (opt.strategy) {
    case FusionStrategy::concat:
      return {pc, vc};
    case FusionStrategy::concat_sum:
      return {add(pc, p), add(vc, v)};
    default: {
      const auto vg = mul(sigmoid(params.gate_visual(vc)), vc);
      const auto pg = mul(sigmoid(params.gate_prompt(pc)), pc);
      const auto pg_tokens = np == 1 ? pg : mean(pg, 1, true);
      return {add(add(pg, mean(vg, 1, true)), p), add(add(vg, pg_tokens), v)};
    }
  }
}

}  // namespace fsar
