#include <gtest/gtest.h>

#include <cmath>

#include "fsar/model/padm.hpp"
#include "fsar/tensor/gradcheck.hpp"
#include "otam_oracle.hpp"
#include "test_support.hpp"

using namespace fsar;
using fsar::testing::probe;
using fsar::testing::random_tensor;

namespace {

constexpr std::size_t kWidth = 8;
const Tensor<double>* const kNoPrompts = nullptr;

SpmParams<double> random_spm(Rng& rng) {
  SpmParams<double> p{SfParams<double>::init(kWidth, 1, 2, 2, rng), PgParams<double>::init(kWidth, 2, rng)};
  p.fusion.gate_visual = Linear<double>::init(kWidth, kWidth, rng);
  p.fusion.gate_prompt = Linear<double>::init(kWidth, kWidth, rng);
  return p;
}

PadmParams<double> identity_padm(Rng& rng) {
  auto p = PadmParams<double>::init(kWidth, 1, 2, 2, rng);
  for (auto& l : p.prototype_encoder) l.zero_residual_branches();
  for (auto& l : p.anchor_encoder) l.zero_residual_branches();
  return p;
}

std::vector<std::size_t> grouped_labels(std::size_t n, std::size_t k) {
  std::vector<std::size_t> labels;
  for (std::size_t c = 0; c < n; ++c) labels.insert(labels.end(), k, c);
  return labels;
}

double oracle_seq_dis(const NdArray<double>& q, const NdArray<double>& s, double gamma) {
  const std::size_t tq = q.shape()[0], ts = s.shape()[0], c = q.shape()[1];
  auto centered = [c](const NdArray<double>& x, std::size_t i) {
    std::vector<double> v(c);
    double mu = 0.0;
    for (std::size_t k = 0; k < c; ++k) mu += x(i, k) / static_cast<double>(c);
    for (std::size_t k = 0; k < c; ++k) v[k] = x(i, k) - mu;
    return v;
  };
  std::vector<double> cost(tq * ts);
  for (std::size_t i = 0; i < tq; ++i)
    for (std::size_t j = 0; j < ts; ++j) {
      const auto qi = centered(q, i), sj = centered(s, j);
      double dot = 0.0, nq = 0.0, ns = 0.0;
      for (std::size_t k = 0; k < c; ++k) {
        dot += qi[k] * sj[k];
        nq += qi[k] * qi[k];
        ns += sj[k] * sj[k];
      }
      cost[i * ts + j] = 1.0 - dot / std::sqrt(nq * ns);
    }
  const double fwd = fsar::testing::smooth_min(fsar::testing::enumerate_path_costs(cost, tq, ts), gamma);
  const auto t = fsar::testing::transpose_matrix(cost, tq, ts);
  const double bwd = fsar::testing::smooth_min(fsar::testing::enumerate_path_costs(t, ts, tq), gamma);
  return 0.5 * (fwd + bwd);
}

NdArray<double> row(const NdArray<double>& x, std::size_t i) {
  const std::size_t t = x.shape()[1], c = x.shape()[2];
  NdArray<double> r({t, c});
  for (std::size_t a = 0; a < t; ++a)
    for (std::size_t k = 0; k < c; ++k) r(a, k) = x(i, a, k);
  return r;
}

}  // namespace

TEST(PromptGenerator, IdentityMapMatchesLoop) {
  Rng rng(1);
  const auto prompts = random_tensor({6, 1, kWidth}, rng, false);
  const auto visuals = random_tensor({3, 4, kWidth}, rng, false);
  const auto out = prompt_generate_with(prompts, visuals, [](const Tensor<double>& x) { return x; });
  ASSERT_EQ(out.shape(), (Shape{3, 1, kWidth}));
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t k = 0; k < kWidth; ++k) {
      double g = 0.0, v = 0.0;
      for (std::size_t o = 0; o < 6; ++o) g += prompts.value()(o, 0, k);
      for (std::size_t t = 0; t < 4; ++t) v += visuals.value()(b, t, k);
      EXPECT_NEAR(out.value()(b, 0, k), (g / 6.0) * (v / 4.0), 1e-12);
    }
}

TEST(PromptGenerator, OnesPromptsPassTemporalMean) {
  Rng rng(2);
  const Tensor<double> prompts(NdArray<double>({2, 1, kWidth}, 1.0));
  const auto visuals = random_tensor({2, 5, kWidth}, rng, false);
  const auto out = prompt_generate_with(prompts, visuals, [](const Tensor<double>& x) { return x; });
  const auto want = mean(visuals, 1, true);
  for (std::size_t i = 0; i < out.value().size(); ++i) EXPECT_NEAR(out.value()[i], want.value()[i], 1e-12);
}

TEST(PromptGenerator, ZeroPromptsGiveZeroInput) {
  Rng rng(3);
  const Tensor<double> prompts(NdArray<double>({3, 1, kWidth}, 0.0));
  const auto out =
      prompt_generate_with(prompts, random_tensor({2, 4, kWidth}, rng, false), [](const Tensor<double>& x) { return x; });
  for (double v : out.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(PromptGenerator, EmptyPromptSetIsContractError) {
  Rng rng(4);
  const auto pg = PgParams<double>::init(kWidth, 2, rng);
  const Tensor<double> none(NdArray<double>({0, 1, kWidth}));
  EXPECT_THROW(prompt_generate(none, random_tensor({2, 4, kWidth}, rng, false), pg), ContractError);
}

TEST(Spm, RealPromptsOnLearnedPathGiveZeroDistance) {
  Rng rng(5);
  const auto p = random_spm(rng);
  const auto support = random_tensor({4, 5, kWidth}, rng, false);
  const auto query = random_tensor({3, 5, kWidth}, rng, false);
  const auto sp = random_tensor({4, 1, kWidth}, rng, false);
  const auto qp = random_tensor({3, 1, kWidth}, rng, false);
  const auto out = spm_modulate(support, query, sp, &qp, sp, qp, p, {});
  for (double v : out.support_distance.value().data()) EXPECT_EQ(v, 0.0);
  for (double v : out.query_distance.value().data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(out.total.item(), 0.0);
}

TEST(Spm, NoConstraintHasZeroTotal) {
  Rng rng(6);
  const auto p = random_spm(rng);
  const auto out = spm_forward(random_tensor({2, 4, kWidth}, rng, false), random_tensor({2, 4, kWidth}, rng, false),
                               random_tensor({2, 1, kWidth}, rng, false), kNoPrompts, p,
                               {{}, SpmMode::train, ConstraintMode::none});
  EXPECT_EQ(out.total.item(), 0.0);
  for (double v : out.support_distance.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Spm, ProtocolShapesAndNonNegativity) {
  Rng rng(7);
  const auto p = random_spm(rng);
  const auto support = random_tensor({5, 4, kWidth}, rng, false);
  const auto query = random_tensor({10, 4, kWidth}, rng, false);
  const auto sp = random_tensor({5, 1, kWidth}, rng, false);
  const auto qp = random_tensor({10, 1, kWidth}, rng, false);
  const auto out = spm_forward(support, query, sp, &qp, p, {});
  EXPECT_EQ(out.support.shape(), support.shape());
  EXPECT_EQ(out.query.shape(), query.shape());
  EXPECT_EQ(out.support_learned_prompt.shape(), (Shape{5, 1, kWidth}));
  EXPECT_EQ(out.query_real_prompt.shape(), (Shape{10, 1, kWidth}));
  EXPECT_EQ(out.support_distance.shape(), (Shape{5}));
  EXPECT_EQ(out.query_distance.shape(), (Shape{10}));
  double total = 0.0;
  for (double v : out.support_distance.value().data()) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  for (double v : out.query_distance.value().data()) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(out.total.item(), total, 1e-9);
}

TEST(Spm, TestModeRejectsQueryPrompts) {
  Rng rng(8);
  const auto p = random_spm(rng);
  const auto qp = random_tensor({2, 1, kWidth}, rng, false);
  SpmOptions opt;
  opt.mode = SpmMode::test;
  EXPECT_THROW(spm_forward(random_tensor({2, 4, kWidth}, rng, false), random_tensor({2, 4, kWidth}, rng, false),
                           random_tensor({2, 1, kWidth}, rng, false), &qp, p, opt),
               ContractError);
}

TEST(Spm, TestModeSkipsQueryTermWithoutPrompts) {
  Rng rng(9);
  const auto p = random_spm(rng);
  SpmOptions opt;
  opt.mode = SpmMode::test;
  const auto out = spm_forward(random_tensor({2, 4, kWidth}, rng, false), random_tensor({3, 4, kWidth}, rng, false),
                               random_tensor({2, 1, kWidth}, rng, false), kNoPrompts, p, opt);
  for (double v : out.query_distance.value().data()) EXPECT_EQ(v, 0.0);
}

TEST(Spm, TrainModeQueryConstraintNeedsPrompts) {
  Rng rng(10);
  const auto p = random_spm(rng);
  EXPECT_THROW(spm_forward(random_tensor({2, 4, kWidth}, rng, false), random_tensor({2, 4, kWidth}, rng, false),
                           random_tensor({2, 1, kWidth}, rng, false), kNoPrompts, p, {}),
               ContractError);
}

TEST(Spm, QueryPromptsOnlyReachQueryConsistency) {
  Rng rng(11);
  const auto p = random_spm(rng);
  const auto support = random_tensor({2, 4, kWidth}, rng, false);
  const auto query = random_tensor({3, 4, kWidth}, rng, false);
  const auto sp = random_tensor({2, 1, kWidth}, rng, false);
  const auto qa = random_tensor({3, 1, kWidth}, rng, false);
  const auto qb = random_tensor({3, 1, kWidth}, rng, false);
  const auto a = spm_forward(support, query, sp, &qa, p, {});
  const auto b = spm_forward(support, query, sp, &qb, p, {});
  EXPECT_EQ(a.query.value(), b.query.value());
  EXPECT_EQ(a.support.value(), b.support.value());
  EXPECT_EQ(a.support_distance.value(), b.support_distance.value());
  EXPECT_NE(a.query_distance.value(), b.query_distance.value());
}

TEST(Spm, ConsistencyGradientMatchesFiniteDifferences) {
  Rng rng(12);
  auto p = random_spm(rng);
  const auto support = random_tensor({2, 3, kWidth}, rng);
  const auto query = random_tensor({2, 3, kWidth}, rng);
  const auto sp = random_tensor({2, 1, kWidth}, rng);
  const auto qp = random_tensor({2, 1, kWidth}, rng);
  std::vector<Tensor<double>> wrt{support, query, sp};
  p.visit("spm", [&](const std::string&, Tensor<double>& t) { wrt.push_back(t); });
  const auto r = check_gradients(
      [&] {
        const auto out = spm_forward(support, query, sp, &qp, p, {});
        return add(out.total, add(probe(out.support, 1), probe(out.query, 2)));
      },
      wrt, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(ClassPrototypes, SingleShotIsIdentity) {
  Rng rng(13);
  const auto s = random_tensor({3, 4, kWidth}, rng, false);
  EXPECT_EQ(class_prototypes(s, {0, 1, 2}).value(), s.value());
}

TEST(ClassPrototypes, ThreeShotMeanMatchesLoop) {
  Rng rng(14);
  const auto s = random_tensor({6, 2, kWidth}, rng, false);
  const std::vector<std::size_t> labels{1, 0, 1, 0, 0, 1};
  const auto protos = class_prototypes(s, labels);
  ASSERT_EQ(protos.shape(), (Shape{2, 2, kWidth}));
  for (std::size_t c = 0; c < 2; ++c)
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t k = 0; k < kWidth; ++k) {
        double acc = 0.0;
        for (std::size_t i = 0; i < 6; ++i)
          if (labels[i] == c) acc += s.value()(i, t, k);
        EXPECT_NEAR(protos.value()(c, t, k), acc / 3.0, 1e-12);
      }
}

TEST(ClassPrototypes, InvariantToSampleOrder) {
  Rng rng(15);
  const auto s = random_tensor({4, 3, kWidth}, rng, false);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  const std::vector<std::size_t> labels{0, 0, 1, 1};
  std::vector<std::size_t> permuted_labels;
  for (auto i : perm) permuted_labels.push_back(labels[i]);
  const auto a = class_prototypes(s, labels);
  const auto b = class_prototypes(take(s, perm), permuted_labels);
  for (std::size_t i = 0; i < a.value().size(); ++i) EXPECT_NEAR(a.value()[i], b.value()[i], 1e-12);
}

TEST(ClassPrototypes, RaggedOrGappedLabelsThrow) {
  Rng rng(16);
  const auto s = random_tensor({3, 2, kWidth}, rng, false);
  EXPECT_THROW(class_prototypes(s, {0, 0, 1}), ContractError);
  EXPECT_THROW(class_prototypes(s, {0, 2, 2}), ContractError);
}

TEST(Padm, IdentityEncodersPassFeaturesThrough) {
  Rng rng(17);
  const auto p = identity_padm(rng);
  const auto support = random_tensor({3, 4, kWidth}, rng, false);
  const auto query = random_tensor({2, 4, kWidth}, rng, false);
  const auto out = padm_forward(support, {0, 1, 2}, query, p, {false});
  EXPECT_EQ(out.support.value(), support.value());
  EXPECT_EQ(out.query.value(), query.value());
  EXPECT_EQ(out.prototypes.value(), out.initial_prototypes.value());
  EXPECT_EQ(out.query_anchor.value(), out.anchor.value());
}

TEST(Padm, TransductivePrototypesAverageShotAndAllQueries) {
  Rng rng(18);
  const auto p = identity_padm(rng);
  const auto support = random_tensor({5, 8, kWidth}, rng, false);
  const auto query = random_tensor({20, 8, kWidth}, rng, false);
  const auto out = padm_forward(support, grouped_labels(5, 1), query, p);
  EXPECT_EQ(out.anchor.shape(), (Shape{1, 8, kWidth}));
  EXPECT_EQ(out.query_anchor.shape(), (Shape{1, 8, kWidth}));
  EXPECT_EQ(out.initial_prototypes.shape(), (Shape{5, 8, kWidth}));
  for (std::size_t c = 0; c < 5; ++c)
    for (std::size_t t = 0; t < 8; ++t)
      for (std::size_t k = 0; k < kWidth; ++k) {
        double acc = support.value()(c, t, k);
        for (std::size_t j = 0; j < 20; ++j) acc += query.value()(j, t, k);
        EXPECT_NEAR(out.initial_prototypes.value()(c, t, k), acc / 21.0, 1e-12);
      }
  for (std::size_t t = 0; t < 8; ++t)
    for (std::size_t k = 0; k < kWidth; ++k) {
      double acc = 0.0;
      for (std::size_t c = 0; c < 5; ++c) acc += out.initial_prototypes.value()(c, t, k);
      EXPECT_NEAR(out.anchor.value()(0, t, k), acc / 5.0, 1e-12);
    }
}

TEST(Padm, QueryPermutationPermutesDistanceRows) {
  Rng rng(19);
  const auto p = PadmParams<double>::init(kWidth, 1, 2, 2, rng);
  const auto support = random_tensor({4, 3, kWidth}, rng, false);
  const auto query = random_tensor({4, 3, kWidth}, rng, false);
  const std::vector<std::size_t> perm{3, 1, 0, 2};
  const auto labels = grouped_labels(2, 2);
  const auto a = padm_distance(padm_forward(support, labels, query, p), {});
  const auto b = padm_distance(padm_forward(support, labels, take(query, perm), p), {});
  for (std::size_t j = 0; j < 4; ++j)
    for (std::size_t n = 0; n < 2; ++n) EXPECT_NEAR(b.value()(j, n), a.value()(perm[j], n), 1e-9);
}

TEST(Padm, IdenticalFeaturesGiveUniformProbabilities) {
  Rng rng(20);
  const auto p = identity_padm(rng);
  const auto x = random_tensor({1, 4, kWidth}, rng, false);
  const auto support = take(x, std::vector<std::size_t>(3, 0));
  const auto query = take(x, std::vector<std::size_t>(2, 0));
  const auto d = padm_distance(padm_forward(support, {0, 1, 2}, query, p), {});
  const auto reference = 2.0 * seq_dis(reshape(x, {4, kWidth}), reshape(x, {4, kWidth})).item();
  for (double v : d.value().data()) EXPECT_NEAR(v, reference, 1e-12);
  const auto probs = class_probabilities(d);
  for (double v : probs.value().data()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(Padm, AnchorTermIsSharedByAllQueries) {
  Rng rng(21);
  const auto p = PadmParams<double>::init(kWidth, 1, 2, 2, rng);
  const auto out = padm_forward(random_tensor({3, 4, kWidth}, rng, false), {0, 1, 2},
                                random_tensor({5, 4, kWidth}, rng, false), p);
  const auto d = padm_distance(out, {});
  const auto per_query = seq_dis_matrix(out.query, class_prototypes(out.support, out.support_labels));
  for (std::size_t n = 0; n < 3; ++n) {
    const double bias = d.value()(0, n) - per_query.value()(0, n);
    for (std::size_t j = 1; j < 5; ++j) EXPECT_NEAR(d.value()(j, n) - per_query.value()(j, n), bias, 1e-12);
  }
}

TEST(Padm, TwoWayOrthogonalHandCase) {
  Rng rng(22);
  const auto p = identity_padm(rng);
  NdArray<double> s({2, 2, kWidth}), q({1, 2, kWidth});
  s(0, 0, 0) = s(0, 1, 1) = 1.0;
  s(1, 0, 2) = s(1, 1, 3) = 1.0;
  q(0, 0, 0) = q(0, 1, 1) = 1.0;
  const auto out = padm_forward(Tensor<double>(s), {0, 1}, Tensor<double>(q), p, {false});
  const auto d = padm_distance(out, {});
  const auto anchor = row(out.anchor.value(), 0);
  for (std::size_t n = 0; n < 2; ++n) {
    const double want = oracle_seq_dis(row(q, 0), row(s, n), 0.1) + oracle_seq_dis(anchor, row(s, n), 0.1);
    EXPECT_NEAR(d.value()(0, n), want, 1e-12);
  }
  EXPECT_LT(d.value()(0, 0), d.value()(0, 1));
}

TEST(Padm, DistanceGradientMatchesFiniteDifferences) {
  Rng rng(23);
  auto p = PadmParams<double>::init(kWidth, 1, 2, 2, rng);
  const auto support = random_tensor({2, 3, kWidth}, rng);
  const auto query = random_tensor({2, 3, kWidth}, rng);
  std::vector<Tensor<double>> wrt{support, query};
  p.visit("padm", [&](const std::string&, Tensor<double>& t) { wrt.push_back(t); });
  const auto r = check_gradients(
      [&] { return probe(padm_distance(padm_forward(support, {0, 1}, query, p), {})); }, wrt, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(Padm, RaggedSupportThrows) {
  Rng rng(24);
  const auto p = PadmParams<double>::init(kWidth, 1, 2, 2, rng);
  EXPECT_THROW(padm_forward(random_tensor({3, 2, kWidth}, rng, false), {0, 0, 1},
                            random_tensor({1, 2, kWidth}, rng, false), p),
               ContractError);
}
