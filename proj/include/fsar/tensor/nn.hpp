#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "fsar/tensor/ops.hpp"

namespace fsar {

using Rng = std::mt19937_64;

template <class T>
NdArray<T> uniform_array(Shape shape, T bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
  NdArray<T> a(std::move(shape));
  for (auto& v : a.data()) v = static_cast<T>(dist(rng));
  return a;
}

template <class T>
NdArray<T> normal_array(Shape shape, T stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  NdArray<T> a(std::move(shape));
  for (auto& v : a.data()) v = static_cast<T>(dist(rng));
  return a;
}

/// Affine map y = x·W + b over the last axis; W is [in, out].
template <class T>
struct Linear {
  Tensor<T> weight;
  Tensor<T> bias;

  static Linear init(std::size_t in, std::size_t out, Rng& rng) {
    const T bound = T{1} / std::sqrt(static_cast<T>(in));
    return {Tensor<T>::parameter(uniform_array<T>({in, out}, bound, rng)),
            Tensor<T>::parameter(uniform_array<T>({out}, bound, rng))};
  }

  std::size_t in_features() const { return weight.shape()[0]; }
  std::size_t out_features() const { return weight.shape()[1]; }

  Tensor<T> operator()(const Tensor<T>& x) const { return add(matmul(x, weight), bias); }

  void zero() {
    weight.mutable_value().fill(T{0});
    bias.mutable_value().fill(T{0});
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".weight", weight);
    f(prefix + ".bias", bias);
  }
};

template <class T>
struct LayerNormParams {
  Tensor<T> gain;
  Tensor<T> bias;

  static LayerNormParams init(std::size_t c) {
    return {Tensor<T>::parameter(NdArray<T>({c}, T{1})), Tensor<T>::parameter(NdArray<T>({c}, T{0}))};
  }

  Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gain, bias); }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + ".gain", gain);
    f(prefix + ".bias", bias);
  }
};

/// Pre-normalization encoder layer: x + MHSA(LN(x)), then h + FFN(LN(h)).
/// No positional term; callers add one when token order matters.
template <class T>
struct EncoderLayerParams {
  std::size_t heads = 1;
  LayerNormParams<T> ln_attn;
  Linear<T> query, key, value, out;
  LayerNormParams<T> ln_ff;
  Linear<T> ff_in, ff_out;

  static EncoderLayerParams init(std::size_t width, std::size_t heads, std::size_t ff_mult, Rng& rng) {
    if (heads == 0 || width % heads != 0) {
      throw ConfigError("encoder width " + std::to_string(width) + " is not divisible by " +
                        std::to_string(heads) + " heads");
    }
    EncoderLayerParams p;
    p.heads = heads;
    p.ln_attn = LayerNormParams<T>::init(width);
    p.query = Linear<T>::init(width, width, rng);
    p.key = Linear<T>::init(width, width, rng);
    p.value = Linear<T>::init(width, width, rng);
    p.out = Linear<T>::init(width, width, rng);
    p.ln_ff = LayerNormParams<T>::init(width);
    p.ff_in = Linear<T>::init(width, ff_mult * width, rng);
    p.ff_out = Linear<T>::init(ff_mult * width, width, rng);
    return p;
  }

  std::size_t width() const { return query.in_features(); }

  /// Zeroes both residual branch outputs so the layer is exactly the identity.
  void zero_residual_branches() {
    out.zero();
    ff_out.zero();
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    ln_attn.visit(prefix + ".ln_attn", f);
    query.visit(prefix + ".query", f);
    key.visit(prefix + ".key", f);
    value.visit(prefix + ".value", f);
    out.visit(prefix + ".out", f);
    ln_ff.visit(prefix + ".ln_ff", f);
    ff_in.visit(prefix + ".ff_in", f);
    ff_out.visit(prefix + ".ff_out", f);
  }
};

/// Scaled dot-product self-attention over the token axis of x[..., L, C].
template <class T>
Tensor<T> multihead_self_attention(const Tensor<T>& x, const EncoderLayerParams<T>& p) {
  const std::size_t c = x.shape().back();
  if (c != p.width()) {
    throw DimensionError("attention input " + shape_str(x.shape()) + " vs width " + std::to_string(p.width()));
  }
  if (p.heads == 0 || c % p.heads != 0) {
    throw ConfigError("width " + std::to_string(c) + " not divisible by " + std::to_string(p.heads) + " heads");
  }
  const std::size_t dh = c / p.heads;
  const T inv_sqrt = T{1} / std::sqrt(static_cast<T>(dh));
  const Tensor<T> q = p.query(x);
  const Tensor<T> k = p.key(x);
  const Tensor<T> v = p.value(x);
  std::vector<Tensor<T>> heads;
  heads.reserve(p.heads);
  for (std::size_t h = 0; h < p.heads; ++h) {
    const auto qh = p.heads == 1 ? q : slice(q, -1, h * dh, dh);
    const auto kh = p.heads == 1 ? k : slice(k, -1, h * dh, dh);
    const auto vh = p.heads == 1 ? v : slice(v, -1, h * dh, dh);
    const auto weights = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt), -1);
    heads.push_back(matmul(weights, vh));
  }
  const Tensor<T> merged = p.heads == 1 ? heads[0] : concat(heads, -1);
  return p.out(merged);
}

template <class T>
Tensor<T> encoder_layer(const Tensor<T>& x, const EncoderLayerParams<T>& p) {
  const Tensor<T> h = add(x, multihead_self_attention(p.ln_attn(x), p));
  return add(h, p.ff_out(gelu(p.ff_in(p.ln_ff(h)))));
}

template <class T>
Tensor<T> encoder(const Tensor<T>& x, const std::vector<EncoderLayerParams<T>>& layers) {
  Tensor<T> y = x;
  for (const auto& layer : layers) y = encoder_layer(y, layer);
  return y;
}

template <class T>
std::vector<EncoderLayerParams<T>> init_encoder(std::size_t depth, std::size_t width, std::size_t heads,
                                                std::size_t ff_mult, Rng& rng) {
  std::vector<EncoderLayerParams<T>> layers;
  for (std::size_t i = 0; i < depth; ++i) layers.push_back(EncoderLayerParams<T>::init(width, heads, ff_mult, rng));
  return layers;
}

}  // namespace fsar
