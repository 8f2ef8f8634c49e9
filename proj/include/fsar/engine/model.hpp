#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "fsar/data/episode.hpp"
#include "fsar/engine/config.hpp"
#include "fsar/model/hsmr.hpp"
#include "fsar/model/padm.hpp"
#include "fsar/model/spm.hpp"

namespace fsar {

template <class T>
struct ModelParams {
  Tensor<T> positional;  // [T, C]
  HsmrParams<T> hsmr;
  SpmParams<T> spm;
  PadmParams<T> padm;

  static ModelParams init(const ModelConfig& cfg) {
    cfg.validate();
    Rng rng(cfg.model_seed);
    ModelParams p;
    p.positional = Tensor<T>::parameter(normal_array<T>({cfg.T, cfg.C}, T(0.02), rng));
    const auto sf = [&] { return SfParams<T>::init(cfg.C, cfg.encoder_depth, cfg.encoder_heads, cfg.ff_mult, rng); };
    p.hsmr.shallow = MfeParams<T>::init(cfg.C, cfg.mfe_reduction, rng);
    p.hsmr.deep = MfeParams<T>::init(cfg.C, cfg.mfe_reduction, rng);
    p.hsmr.fusion = sf();
    p.spm.fusion = sf();
    p.spm.generator = PgParams<T>::init(cfg.C, cfg.pg_depth, rng);
    p.padm = PadmParams<T>::init(cfg.C, cfg.encoder_depth, cfg.encoder_heads, cfg.ff_mult, rng);
    return p;
  }

  template <class F>
  void visit(F&& f) {
    f(std::string("positional"), positional);
    hsmr.visit("hsmr", f);
    spm.visit("spm", f);
    padm.visit("padm", f);
  }

  std::vector<Tensor<T>> tensors() {
    std::vector<Tensor<T>> out;
    visit([&](const std::string&, Tensor<T>& t) { out.push_back(t); });
    return out;
  }

  std::vector<std::string> names() {
    std::vector<std::string> out;
    visit([&](const std::string& n, Tensor<T>&) { out.push_back(n); });
    return out;
  }
};

template <class T>
struct EpisodeOutput {
  Tensor<T> distances;  // [NM, N] combined distance
  Tensor<T> l_ce, l_h, l_s, total;
  NdArray<T> probabilities;  // [NM, N]
  std::vector<std::size_t> predicted;
  double accuracy = 0.0;
};

template <class T>
Tensor<T> episode_tensor(const NdArray<float>& a) {
  if constexpr (std::is_same_v<T, float>) {
    return Tensor<T>(a);
  } else {
    return Tensor<T>(a.template cast<T>());
  }
}

/// Full pipeline for one episode. `training` selects the train-mode SPM path
/// (real query prompts available for the consistency term).
template <class T>
EpisodeOutput<T> forward_episode(const Episode& ep, const ModelParams<T>& params, const ModelConfig& cfg,
                                 bool training) {
  const auto support_in = episode_tensor<T>(ep.support);
  const auto query_in = episode_tensor<T>(ep.query);
  const std::size_t nk = support_in.shape()[0], nm = query_in.shape()[0];
  if (support_in.shape()[1] != cfg.T || support_in.shape()[2] != cfg.C) {
    throw DimensionError("episode frames " + shape_str(support_in.shape()) + " do not match config T=" +
                         std::to_string(cfg.T) + " C=" + std::to_string(cfg.C));
  }
  const Tensor<T>* positional = &params.positional;
  const Tensor<T> zero(NdArray<T>::scalar(T{0}));

  Tensor<T> support = support_in, query = query_in;
  Tensor<T> l_h = zero, l_s = zero;

  if (cfg.use_hsmr) {
    HsmrOptions opt{cfg.sf(), cfg.hsmr_pre_fusion_target};
    const auto out = hsmr_forward(concat<T>({support, query}, 0), params.hsmr, opt, positional);
    positional = nullptr;
    l_h = sum_all(out.distance);
    auto parts = split(out.refined, {nk, nm}, 0);
    support = parts[0];
    query = parts[1];
  }

  if (cfg.use_spm) {
    SpmOptions opt{cfg.sf(), training ? SpmMode::train : SpmMode::test, cfg.constraint};
    const auto sp = episode_tensor<T>(ep.support_prompts);
    const auto qp = episode_tensor<T>(ep.query_prompts);
    const bool need_query_prompts = training && constrains_query(cfg.constraint);
    const auto out = spm_forward(support, query, sp, need_query_prompts ? &qp : nullptr, params.spm, opt, positional);
    positional = nullptr;
    l_s = out.total;
    support = out.support;
    query = out.query;
  }

  const auto seq = cfg.seq_dis();
  const auto d_spm = seq_dis_matrix(query, class_prototypes(support, ep.support_labels), seq);
  Tensor<T> d_padm = d_spm;
  if (cfg.use_padm) {
    const auto s = positional ? add(support, *positional) : support;
    const auto q = positional ? add(query, *positional) : query;
    PadmOptions opt{cfg.transductive};
    d_padm = padm_distance(padm_forward(s, ep.support_labels, q, params.padm, opt), seq);
  }

  EpisodeOutput<T> out;
  out.distances = combined_distance(d_padm, d_spm, cfg.weights());
  const auto logp = log_softmax(neg(out.distances), -1);
  out.l_ce = neg(mean_all(pick(logp, ep.query_labels)));
  out.l_h = l_h;
  out.l_s = l_s;
  out.total = add(add(out.l_ce, scale(l_h, static_cast<T>(cfg.lambda3))), scale(l_s, static_cast<T>(cfg.lambda4)));

  const std::pair<const char*, const Tensor<T>*> checks[] = {
      {"distances", &out.distances}, {"L_CE", &out.l_ce}, {"L_H", &out.l_h}, {"L_S", &out.l_s}};
  for (const auto& [name, t] : checks) {
    for (T v : t->value().data()) {
      if (!std::isfinite(v)) throw NumericError(std::string("non-finite ") + name + " in episode forward pass");
    }
  }

  const std::size_t n = out.distances.shape()[1];
  out.probabilities = NdArray<T>({nm, n});
  std::size_t correct = 0;
  for (std::size_t j = 0; j < nm; ++j) {
    std::vector<double> d(n);
    for (std::size_t c = 0; c < n; ++c) d[c] = static_cast<double>(out.distances.value()(j, c));
    const auto p = class_probabilities(std::span<const double>(d));
    std::size_t best = 0;
    for (std::size_t c = 0; c < n; ++c) {
      out.probabilities(j, c) = static_cast<T>(p[c]);
      if (p[c] > p[best]) best = c;
    }
    out.predicted.push_back(best);
    correct += best == ep.query_labels[j];
  }
  out.accuracy = static_cast<double>(correct) / static_cast<double>(nm);
  return out;
}

}  // namespace fsar
