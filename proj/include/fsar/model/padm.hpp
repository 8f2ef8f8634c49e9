#pragma once

#include <string>
#include <vector>

#include "fsar/model/distances.hpp"
#include "fsar/model/spm.hpp"

namespace fsar {

template <class T>
struct PadmParams {
  std::vector<EncoderLayerParams<T>> prototype_encoder;
  std::vector<EncoderLayerParams<T>> anchor_encoder;

  static PadmParams init(std::size_t width, std::size_t depth, std::size_t heads, std::size_t ff_mult, Rng& rng) {
    PadmParams p;
    p.prototype_encoder = init_encoder<T>(depth, width, heads, ff_mult, rng);
    p.anchor_encoder = init_encoder<T>(depth, width, heads, ff_mult, rng);
    return p;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < prototype_encoder.size(); ++i)
      prototype_encoder[i].visit(prefix + ".prototype_encoder." + std::to_string(i), f);
    for (std::size_t i = 0; i < anchor_encoder.size(); ++i)
      anchor_encoder[i].visit(prefix + ".anchor_encoder." + std::to_string(i), f);
  }
};

struct PadmOptions {
  /// Include every query sequence in each class's initial prototype.
  bool transductive = true;
};

template <class T>
struct PadmOutput {
  Tensor<T> support;           // [NK, T, C]
  Tensor<T> query;             // [NM, T, C]
  Tensor<T> prototypes;        // [N, T, C] modulated prototypes
  Tensor<T> query_anchor;      // [1, T, C]
  Tensor<T> anchor;            // [1, T, C] before modulation
  Tensor<T> initial_prototypes;  // [N, T, C] before modulation
  std::vector<std::size_t> support_labels;
};

/// support [NK, T, C] with labels 0..N-1 (K each), query [NM, T, C].
template <class T>
PadmOutput<T> padm_forward(const Tensor<T>& support, const std::vector<std::size_t>& labels, const Tensor<T>& query,
                           const PadmParams<T>& params, const PadmOptions& opt = {}) {
  if (support.ndim() != 3 || query.ndim() != 3 || support.shape()[1] != query.shape()[1] ||
      support.shape()[2] != query.shape()[2]) {
    throw DimensionError("padm_forward: support " + shape_str(support.shape()) + ", query " + shape_str(query.shape()));
  }
  std::size_t n = 0, k = 0;
  const auto order = grouped_order(labels, n, k);
  const std::size_t t = support.shape()[1], nm = query.shape()[0];
  const auto shot_sum = sum(reshape(take(support, order), {n, k, t, support.shape()[2]}), 1, false);  // [N, T, C]
  Tensor<T> initial;
  if (opt.transductive) {
    const auto query_sum = sum(query, 0, true);  // [1, T, C]
    initial = scale(add(shot_sum, query_sum), T{1} / static_cast<T>(k + nm));
  } else {
    initial = scale(shot_sum, T{1} / static_cast<T>(k));
  }
  const auto anchor = mean(initial, 0, true);  // [1, T, C]

  std::vector<std::size_t> proto_index(labels.begin(), labels.end());
  const auto paired = encoder(concat<T>({take(initial, proto_index), support}, 1), params.prototype_encoder);
  auto sp = split(paired, {t, t}, 1);
  const auto modulated_protos = class_prototypes(sp[0], labels);

  const std::vector<std::size_t> anchor_index(nm, 0);
  const auto anchored = encoder(concat<T>({take(anchor, anchor_index), query}, 1), params.anchor_encoder);
  auto aq = split(anchored, {t, t}, 1);

  PadmOutput<T> out;
  out.support = sp[1];
  out.query = aq[1];
  out.prototypes = modulated_protos;
  out.query_anchor = mean(aq[0], 0, true);
  out.anchor = anchor;
  out.initial_prototypes = initial;
  out.support_labels = labels;
  return out;
}

/// d_padm [NM, N]: SeqDis(prototype_n, query_j) + SeqDis(modulated prototype_n, query anchor).
template <class T>
Tensor<T> padm_distance(const PadmOutput<T>& out, const SeqDisOptions& opt) {
  const auto protos = class_prototypes(out.support, out.support_labels);
  const auto per_query = seq_dis_matrix(out.query, protos, opt);         // [NM, N]
  const auto bias = seq_dis_matrix(out.query_anchor, out.prototypes, opt);  // [1, N]
  return add(per_query, bias);
}

}  // namespace fsar
