#pragma once

#include <chrono>
#include <functional>
#include <string>
#include <vector>

#include "fsar/data/synth.hpp"
#include "fsar/engine/model.hpp"
#include "fsar/tensor/gradcheck.hpp"

namespace fsar {

struct GradCase {
  std::string name;
  double error = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

struct GradSuiteResult {
  std::vector<GradCase> cases;
  double seconds = 0.0;
  bool passed() const {
    for (const auto& c : cases)
      if (!c.passed) return false;
    return !cases.empty();
  }
};

namespace detail {

inline Tensor<double> grad_input(Shape shape, Rng& rng, double offset = 0.0) {
  auto a = normal_array<double>(std::move(shape), 1.0, rng);
  for (auto& v : a.data()) v += offset;
  return Tensor<double>(std::move(a), true);
}

/// sum(out * w) with fixed random w so every output element is exercised.
inline Tensor<double> grad_probe(const Tensor<double>& out) {
  Rng rng(7);
  return sum_all(mul(out, Tensor<double>(normal_array<double>(out.shape(), 1.0, rng))));
}

template <class P>
std::vector<Tensor<double>> with_params(std::vector<Tensor<double>> inputs, P& params) {
  params.visit("p", [&](const std::string&, Tensor<double>& t) { inputs.push_back(t); });
  return inputs;
}

}  // namespace detail

/// Central finite-difference checks of every differentiable operation and of
/// one full episode (N=2, K=1, M=1, T=3, C=8), all in double precision.
inline GradSuiteResult run_gradient_suite(double op_tolerance = 1e-5, double pipeline_tolerance = 1e-4) {
  using detail::grad_input;
  using detail::grad_probe;
  using F = std::function<Tensor<double>()>;
  const auto start = std::chrono::steady_clock::now();
  GradSuiteResult result;
  Rng rng(2024);
  auto check = [&](const std::string& name, const F& f, std::vector<Tensor<double>> wrt, double tol) {
    const auto r = check_gradients(f, std::move(wrt), tol);
    result.cases.push_back({name, r.max_relative_error, tol, r.passed});
  };
  auto op = [&](const std::string& name, const F& f, std::vector<Tensor<double>> wrt) {
    check(name, f, std::move(wrt), op_tolerance);
  };

  const auto a = grad_input({2, 3, 4}, rng), b = grad_input({3, 4}, rng), c = grad_input({2, 1, 4}, rng);
  op("add", [&] { return grad_probe(add(a, b)); }, {a, b});
  op("sub", [&] { return grad_probe(sub(a, c)); }, {a, c});
  op("mul", [&] { return grad_probe(mul(a, c)); }, {a, c});
  op("scale", [&] { return grad_probe(scale(a, 1.7)); }, {a});
  op("add_scalar", [&] { return grad_probe(add_scalar(a, -0.3)); }, {a});
  op("neg", [&] { return grad_probe(neg(a)); }, {a});
  op("sigmoid", [&] { return grad_probe(sigmoid(a)); }, {a});
  op("gelu", [&] { return grad_probe(gelu(a)); }, {a});
  op("exp", [&] { return grad_probe(exp(a)); }, {a});
  const auto pos = grad_input({3, 4}, rng, 4.0);
  op("log", [&] { return grad_probe(log(pos)); }, {pos});
  op("reshape", [&] { return grad_probe(reshape(a, {6, 4})); }, {a});
  op("transpose", [&] { return grad_probe(transpose(a)); }, {a});
  op("slice", [&] { return grad_probe(slice(a, 1, 1, 2)); }, {a});
  op("split", [&] {
    const auto parts = split(a, {1, 2}, 1);
    return add(grad_probe(parts[0]), scale(sum_all(parts[1]), 0.5));
  }, {a});
  op("concat", [&] { return grad_probe(concat<double>({a, c}, 1)); }, {a, c});
  op("take", [&] { return grad_probe(take(a, {1, 0, 1})); }, {a});
  const auto logits = grad_input({3, 5}, rng);
  op("pick", [&] { return grad_probe(pick(logits, {4, 0, 2})); }, {logits});
  op("sum", [&] { return grad_probe(sum(a, 1)); }, {a});
  op("mean", [&] { return grad_probe(mean(a, 0, true)); }, {a});
  op("mean_all", [&] { return mean_all(mul(a, a)); }, {a});
  op("softmax", [&] { return grad_probe(softmax(logits, -1)); }, {logits});
  op("log_softmax", [&] { return grad_probe(log_softmax(logits, -1)); }, {logits});
  op("l2_norm", [&] { return grad_probe(l2_norm(a, -1)); }, {a});
  op("l2_normalize", [&] { return grad_probe(l2_normalize(a, -1)); }, {a});
  const auto gain = grad_input({4}, rng), bias = grad_input({4}, rng);
  op("layer_norm", [&] { return grad_probe(layer_norm(a, gain, bias)); }, {a, gain, bias});
  const auto w = grad_input({4, 5}, rng);
  op("matmul", [&] { return grad_probe(matmul(a, w)); }, {a, w});
  const auto bw = grad_input({2, 4, 3}, rng);
  op("matmul batched", [&] { return grad_probe(matmul(a, bw)); }, {a, bw});

  auto layer = EncoderLayerParams<double>::init(4, 2, 2, rng);
  op("self-attention", [&] { return grad_probe(multihead_self_attention(a, layer)); },
     detail::with_params({a}, layer));
  op("encoder layer", [&] { return grad_probe(encoder_layer(a, layer)); }, detail::with_params({a}, layer));

  const auto cost = grad_input({2, 3, 4}, rng);
  op("soft alignment", [&] { return grad_probe(soft_otam(cost, 0.1)); }, {cost});
  op("soft alignment transposed", [&] { return grad_probe(soft_otam(cost, 0.1, true)); }, {cost});
  const auto qs = grad_input({2, 3, 8}, rng), ss = grad_input({3, 4, 8}, rng);
  op("seq_dis", [&] { return grad_probe(seq_dis_matrix(qs, ss)); }, {qs, ss});
  const auto ta = grad_input({2, 3, 8}, rng), tb = grad_input({2, 3, 8}, rng);
  op("con_dis", [&] { return grad_probe(con_dis(ta, tb)); }, {ta, tb});

  const std::size_t width = 8;
  auto sf = SfParams<double>::init(width, 1, 2, 2, rng);
  sf.gate_visual = Linear<double>::init(width, width, rng);
  sf.gate_prompt = Linear<double>::init(width, width, rng);
  const auto prompt = grad_input({2, 1, width}, rng), visual = grad_input({2, 3, width}, rng);
  for (const auto& mode : {SfOptions{FusionStrategy::concat, false}, SfOptions{FusionStrategy::concat_sum, false},
                           SfOptions{FusionStrategy::gate, false}, SfOptions{FusionStrategy::gate, true}}) {
    op("fusion " + fusion_name(mode.strategy) + (mode.gate_pre_encoder ? " pre-encoder" : ""), [&] {
      const auto out = sf_forward(prompt, visual, sf, mode);
      return add(grad_probe(out.prompt), grad_probe(out.visual));
    }, detail::with_params({prompt, visual}, sf));
  }

  auto phi = MfeParams<double>::init(width, 2, rng);
  phi.expand = Linear<double>::init(width / 2, width, rng);
  op("motion extractor", [&] { return grad_probe(mfe(visual, phi)); }, detail::with_params({visual}, phi));
  HsmrParams<double> hsmr{phi, phi, sf};
  hsmr.deep.expand = Linear<double>::init(width / 2, width, rng);
  op("hierarchical refinement", [&] {
    const auto out = hsmr_forward(visual, hsmr, {});
    return add(sum_all(out.distance), grad_probe(out.refined));
  }, detail::with_params({visual}, hsmr));

  SpmParams<double> spm{sf, PgParams<double>::init(width, 2, rng)};
  const auto query = grad_input({2, 3, width}, rng), query_prompt = grad_input({2, 1, width}, rng);
  op("prompt generator", [&] { return grad_probe(prompt_generate(prompt, visual, spm.generator)); },
     detail::with_params({prompt, visual}, spm.generator));
  op("semantic modulation", [&] {
    const auto out = spm_forward(visual, query, prompt, &query_prompt, spm, {});
    return add(out.total, add(grad_probe(out.support), grad_probe(out.query)));
  }, detail::with_params({visual, query, prompt}, spm));

  auto padm = PadmParams<double>::init(width, 1, 2, 2, rng);
  op("prototype-anchor modulation", [&] {
    return grad_probe(padm_distance(padm_forward(visual, {0, 1}, query, padm), {}));
  }, detail::with_params({visual, query}, padm));

  ModelConfig cfg;
  cfg.T = 3;
  cfg.C = 8;
  cfg.R = 2;
  cfg.way = 2;
  cfg.shot = 1;
  cfg.query = 1;
  cfg.encoder_heads = 2;
  cfg.mfe_reduction = 2;
  cfg.ff_mult = 2;
  cfg.lambda3 = cfg.lambda4 = 0.5;
  SynthOptions so;
  so.train_classes = 3;
  so.test_classes = 0;
  so.per_class = 3;
  so.T = 3;
  so.C = 8;
  so.R = 2;
  const auto [m, s] = synth_dataset(so);
  auto params = ModelParams<double>::init(cfg);
  params.visit([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.mutable_value().data()) v += 0.1 * std::normal_distribution<double>()(rng);
  });
  Rng sampler(3);
  const Episode ep = sample_episode(m, s, Split::train, cfg.way, cfg.shot, cfg.query, sampler);
  check("full episode", [&] { return forward_episode(ep, params, cfg, true).total; }, params.tensors(),
        pipeline_tolerance);

  result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace fsar
