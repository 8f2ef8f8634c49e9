#pragma once

#include <map>
#include <string>
#include <vector>

#include "fsar/model/distances.hpp"
#include "fsar/model/fusion.hpp"

namespace fsar {

enum class SpmMode { train, test };

/// Which samples contribute to the consistency distance d_s.
enum class ConstraintMode { none, support, query, both };

inline std::string constraint_name(ConstraintMode c) {
  switch (c) {
    case ConstraintMode::none: return "none";
    case ConstraintMode::support: return "support";
    case ConstraintMode::query: return "query";
    default: return "both";
  }
}

inline ConstraintMode parse_constraint(const std::string& s) {
  if (s == "none") return ConstraintMode::none;
  if (s == "support") return ConstraintMode::support;
  if (s == "query") return ConstraintMode::query;
  if (s == "both") return ConstraintMode::both;
  throw ConfigError("unknown constraint mode '" + s + "' (none | support | query | both)");
}

inline bool constrains_support(ConstraintMode c) { return c == ConstraintMode::support || c == ConstraintMode::both; }
inline bool constrains_query(ConstraintMode c) { return c == ConstraintMode::query || c == ConstraintMode::both; }

/// Prompt generator: affine layers with GELU between them.
template <class T>
struct PgParams {
  std::vector<Linear<T>> layers;

  static PgParams init(std::size_t width, std::size_t depth, Rng& rng) {
    if (depth == 0) throw ConfigError("prompt generator needs at least one layer");
    PgParams p;
    for (std::size_t i = 0; i < depth; ++i) p.layers.push_back(Linear<T>::init(width, width, rng));
    return p;
  }

  Tensor<T> operator()(const Tensor<T>& x) const {
    Tensor<T> y = x;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      y = layers[i](y);
      if (i + 1 < layers.size()) y = gelu(y);
    }
    return y;
  }

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".layer" + std::to_string(i), f);
  }
};

/// Learned prompts [B, 1, C] from episode prompts [NK, 1, C] and visuals [B, T, C]:
/// Y(mean_o prompt_o * mean_t visual_b[t]).
template <class T, class Upsilon>
Tensor<T> prompt_generate_with(const Tensor<T>& episode_prompts, const Tensor<T>& visuals, const Upsilon& upsilon) {
  if (episode_prompts.ndim() != 3 || episode_prompts.shape()[0] == 0) {
    throw ContractError("prompt generator needs a non-empty [NK,1,C] prompt set, got " +
                        shape_str(episode_prompts.shape()));
  }
  if (visuals.ndim() != 3) throw DimensionError("prompt generator visuals must be [B,T,C], got " + shape_str(visuals.shape()));
  const auto g = mean(episode_prompts, 0, false);  // [1, C]
  const auto v = mean(visuals, 1, true);           // [B, 1, C]
  return upsilon(mul(v, g));
}

template <class T>
Tensor<T> prompt_generate(const Tensor<T>& episode_prompts, const Tensor<T>& visuals, const PgParams<T>& pg) {
  return prompt_generate_with(episode_prompts, visuals, [&](const Tensor<T>& x) { return pg(x); });
}

template <class T>
struct SpmParams {
  SfParams<T> fusion;  // shared by all four fusion passes
  PgParams<T> generator;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    fusion.visit(prefix + ".sf", f);
    generator.visit(prefix + ".pg", f);
  }
};

struct SpmOptions {
  SfOptions fusion;
  SpmMode mode = SpmMode::train;
  ConstraintMode constraint = ConstraintMode::both;
};

template <class T>
struct SpmOutput {
  Tensor<T> support;                 // [NK, T, C] real-prompt modulated
  Tensor<T> query;                   // [NM, T, C] learned-prompt modulated
  Tensor<T> support_real_prompt;     // [NK, 1, C]
  Tensor<T> support_learned_prompt;  // [NK, 1, C], set when the support side is constrained
  Tensor<T> query_real_prompt;       // [NM, 1, C], train mode with a query constraint only
  Tensor<T> query_learned_prompt;    // [NM, 1, C]
  Tensor<T> support_distance;        // [NK] d_s per support sample (zeros when unconstrained)
  Tensor<T> query_distance;          // [NM] d_s per query sample (zeros when unconstrained)
  Tensor<T> total;                   // scalar sum of the constrained d_s terms
};

/// d_s per sample: ConDis of the prompts plus ConDis of prompt+visual token sequences.
template <class T>
Tensor<T> prompt_consistency(const SfOutput<T>& real, const SfOutput<T>& learned) {
  return add(con_dis(real.prompt, learned.prompt),
             con_dis(concat<T>({real.prompt, real.visual}, 1), concat<T>({learned.prompt, learned.visual}, 1)));
}

/// Fusion passes and consistency terms given explicit learned prompts
/// (learned_support [NK, 1, C], learned_query [NM, 1, C]).
template <class T>
SpmOutput<T> spm_modulate(const Tensor<T>& support, const Tensor<T>& query, const Tensor<T>& support_prompts,
                          const Tensor<T>* query_prompts, const Tensor<T>& learned_support,
                          const Tensor<T>& learned_query, const SpmParams<T>& params, const SpmOptions& opt,
                          const Tensor<T>* positional = nullptr) {
  if (opt.mode == SpmMode::test && query_prompts) {
    throw ContractError("query prompts are label-derived and cannot be used in test mode");
  }
  const std::size_t nk = support.shape()[0], nm = query.shape()[0];
  SpmOutput<T> out;
  const auto real_s = sf_forward(support_prompts, support, params.fusion, opt.fusion, positional);
  const auto learn_q = sf_forward(learned_query, query, params.fusion, opt.fusion, positional);
  out.support = real_s.visual;
  out.support_real_prompt = real_s.prompt;
  out.query = learn_q.visual;
  out.query_learned_prompt = learn_q.prompt;
  out.support_distance = Tensor<T>(NdArray<T>({nk}));
  out.query_distance = Tensor<T>(NdArray<T>({nm}));
  out.total = Tensor<T>(NdArray<T>::scalar(T{0}));

  std::vector<Tensor<T>> terms;
  if (constrains_support(opt.constraint)) {
    const auto learn_s = sf_forward(learned_support, support, params.fusion, opt.fusion, positional);
    out.support_learned_prompt = learn_s.prompt;
    out.support_distance = prompt_consistency(real_s, learn_s);
    terms.push_back(sum_all(out.support_distance));
  }
  if (constrains_query(opt.constraint) && opt.mode == SpmMode::train) {
    if (!query_prompts) throw ContractError("query-side consistency in train mode needs the query class prompts");
    const auto real_q = sf_forward(*query_prompts, query, params.fusion, opt.fusion, positional);
    out.query_real_prompt = real_q.prompt;
    out.query_distance = prompt_consistency(real_q, learn_q);
    terms.push_back(sum_all(out.query_distance));
  }
  if (terms.size() == 1) out.total = terms[0];
  if (terms.size() == 2) out.total = add(terms[0], terms[1]);
  return out;
}

/// `query_prompts` are the ground-truth class prompts of the queries; they may
/// only be supplied in train mode.
template <class T>
SpmOutput<T> spm_forward(const Tensor<T>& support, const Tensor<T>& query, const Tensor<T>& support_prompts,
                         const Tensor<T>* query_prompts, const SpmParams<T>& params, const SpmOptions& opt,
                         const Tensor<T>* positional = nullptr) {
  if (opt.mode == SpmMode::test && query_prompts) {
    throw ContractError("query prompts are label-derived and cannot be used in test mode");
  }
  if (support.ndim() != 3 || query.ndim() != 3 || support_prompts.ndim() != 3 ||
      support_prompts.shape()[0] != support.shape()[0]) {
    throw DimensionError("spm_forward: support " + shape_str(support.shape()) + ", query " + shape_str(query.shape()) +
                         ", prompts " + shape_str(support_prompts.shape()));
  }
  const auto learned_s = prompt_generate(support_prompts, support, params.generator);
  const auto learned_q = prompt_generate(support_prompts, query, params.generator);
  return spm_modulate(support, query, support_prompts, query_prompts, learned_s, learned_q, params, opt, positional);
}

/// Stable grouping of sample indices by label; every label 0..N-1 must occur
/// the same number of times.
inline std::vector<std::size_t> grouped_order(const std::vector<std::size_t>& labels, std::size_t& classes,
                                              std::size_t& per_class) {
  std::map<std::size_t, std::vector<std::size_t>> by_label;
  for (std::size_t i = 0; i < labels.size(); ++i) by_label[labels[i]].push_back(i);
  classes = by_label.size();
  if (classes == 0) throw ContractError("prototype construction needs at least one sample");
  if (by_label.rbegin()->first != classes - 1) throw ContractError("labels must cover 0..N-1 without gaps");
  per_class = by_label.begin()->second.size();
  std::vector<std::size_t> order;
  for (const auto& [label, idx] : by_label) {
    if (idx.size() != per_class) {
      throw ContractError("ragged classes: label " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                          " samples, expected " + std::to_string(per_class));
    }
    order.insert(order.end(), idx.begin(), idx.end());
  }
  return order;
}

/// Per-class temporal mean over the K shots: [NK, T, C] -> [N, T, C].
template <class T>
Tensor<T> class_prototypes(const Tensor<T>& support, const std::vector<std::size_t>& labels) {
  if (support.ndim() != 3 || support.shape()[0] != labels.size()) {
    throw DimensionError("class_prototypes: support " + shape_str(support.shape()) + " with " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t n = 0, k = 0;
  const auto order = grouped_order(labels, n, k);
  bool sorted = true;
  for (std::size_t i = 0; i < order.size(); ++i) sorted = sorted && order[i] == i;
  const auto grouped = sorted ? support : take(support, order);
  if (k == 1) return grouped;
  return mean(reshape(grouped, {n, k, support.shape()[1], support.shape()[2]}), 1, false);
}

}  // namespace fsar
