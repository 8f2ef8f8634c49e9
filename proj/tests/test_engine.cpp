#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "fsar/data/synth.hpp"
#include "fsar/engine/checkpoint.hpp"
#include "fsar/engine/metrics.hpp"
#include "fsar/engine/report.hpp"
#include "fsar/engine/train.hpp"
#include "fsar/tensor/gradcheck.hpp"
#include "temp_dir.hpp"

using namespace fsar;
using fsar::testing::TempDir;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.T = 4;
  c.C = 8;
  c.R = 3;
  c.way = 3;
  c.shot = 1;
  c.query = 2;
  c.encoder_heads = 2;
  c.mfe_reduction = 2;
  c.ff_mult = 2;
  return c;
}

SynthOptions small_data(const ModelConfig& c) {
  SynthOptions o;
  o.train_classes = 6;
  o.test_classes = 4;
  o.per_class = 6;
  o.T = static_cast<std::uint32_t>(c.T);
  o.C = static_cast<std::uint32_t>(c.C);
  o.R = static_cast<std::uint32_t>(c.R);
  o.seed = 5;
  return o;
}

template <class T>
std::vector<std::vector<T>> snapshot(ModelParams<T>& p) {
  std::vector<std::vector<T>> out;
  for (auto& t : p.tensors()) out.emplace_back(t.value().data().begin(), t.value().data().end());
  return out;
}

Episode sample(const ModelConfig& c, const Manifest& m, const EmbeddingStore& s, std::uint64_t seed,
               Split split = Split::train) {
  Rng rng(seed);
  return sample_episode(m, s, split, c.way, c.shot, c.query, rng);
}

}  // namespace

TEST(Config, DefaultsMatchReferenceSetting) {
  const ModelConfig c;
  EXPECT_EQ(c.T, 8u);
  EXPECT_EQ(c.R, 16u);
  EXPECT_EQ(c.way, 5u);
  EXPECT_EQ(c.query, 4u);
  EXPECT_EQ(c.lambda1, 1.0);
  EXPECT_EQ(c.lambda2, 0.5);
  EXPECT_EQ(c.lambda3, 0.001);
  EXPECT_EQ(c.lambda4, 0.001);
  EXPECT_EQ(c.lr, 1e-5);
  EXPECT_EQ(c.weight_decay, 5e-5);
  EXPECT_EQ(c.accumulation, 16u);
  EXPECT_EQ(c.fusion, FusionStrategy::gate);
  EXPECT_EQ(c.constraint, ConstraintMode::both);
  EXPECT_TRUE(c.use_hsmr && c.use_spm && c.use_padm);
  EXPECT_NO_THROW(c.validate());
}

TEST(Config, JsonRoundTrip) {
  auto c = small_config();
  c.fusion = FusionStrategy::concat_sum;
  c.constraint = ConstraintMode::query;
  c.use_padm = false;
  const auto back = ModelConfig::from_json(c.to_json());
  EXPECT_EQ(back.to_json(), c.to_json());
  EXPECT_EQ(back.architecture_hash(), c.architecture_hash());
}

TEST(Config, UnknownKeysAreRejectedByName) {
  try {
    ModelConfig::from_json(nlohmann::json{{"loss", {{"lambda5", 1.0}}}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("loss.lambda5"), std::string::npos);
  }
  EXPECT_THROW(ModelConfig::from_json(nlohmann::json{{"extras", nlohmann::json::object()}}), ConfigError);
}

TEST(Config, TypeErrorsNameTheKey) {
  try {
    ModelConfig::from_json(nlohmann::json{{"episode", {{"way", "five"}}}});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("episode.way"), std::string::npos);
  }
}

TEST(Config, OverridesApplyOnTopOfBase) {
  const auto c = small_config().with_override("loss.lambda3=0.25").with_override("model.fusion=concat");
  EXPECT_EQ(c.lambda3, 0.25);
  EXPECT_EQ(c.fusion, FusionStrategy::concat);
  EXPECT_EQ(c.C, 8u);
  EXPECT_THROW(c.with_override("lambda3=1"), ConfigError);
  EXPECT_THROW(c.with_override("model.gamma=0"), ConfigError);
}

TEST(Config, ArchitectureHashIgnoresRunSettings) {
  auto a = small_config();
  auto b = a;
  b.lr = 1e-3;
  b.train_episodes = 7;
  EXPECT_EQ(a.architecture_hash(), b.architecture_hash());
  b.encoder_depth = 2;
  EXPECT_NE(a.architecture_hash(), b.architecture_hash());
}

TEST(Engine, ZeroAuxiliaryWeightsLeaveCrossEntropy) {
  auto c = small_config();
  c.lambda3 = c.lambda4 = 0.0;
  const auto [m, s] = synth_dataset(small_data(c));
  const auto p = ModelParams<double>::init(c);
  const auto out = forward_episode(sample(c, m, s, 1), p, c, true);
  EXPECT_GT(out.l_h.item(), 0.0);
  EXPECT_GT(out.l_s.item(), 0.0);
  EXPECT_EQ(out.total.item(), out.l_ce.item());
}

TEST(Engine, TotalCombinesComponents) {
  auto c = small_config();
  c.lambda3 = 0.3;
  c.lambda4 = 0.7;
  const auto [m, s] = synth_dataset(small_data(c));
  const auto p = ModelParams<double>::init(c);
  const auto out = forward_episode(sample(c, m, s, 2), p, c, true);
  EXPECT_NEAR(out.total.item(), out.l_ce.item() + 0.3 * out.l_h.item() + 0.7 * out.l_s.item(), 1e-12);
}

TEST(Engine, ComponentsAreNonNegativeAndProbabilitiesNormalised) {
  const auto c = small_config();
  const auto [m, s] = synth_dataset(small_data(c));
  const auto p = ModelParams<double>::init(c);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto out = forward_episode(sample(c, m, s, seed), p, c, true);
    EXPECT_GE(out.l_ce.item(), 0.0);
    EXPECT_GE(out.l_h.item(), 0.0);
    EXPECT_GE(out.l_s.item(), 0.0);
    for (std::size_t j = 0; j < out.probabilities.shape()[0]; ++j) {
      double z = 0.0;
      for (std::size_t n = 0; n < out.probabilities.shape()[1]; ++n) z += out.probabilities(j, n);
      EXPECT_NEAR(z, 1.0, 1e-12);
    }
  }
}

TEST(Engine, CrossEntropyInvariantToQueryOrder) {
  const auto c = small_config();
  const auto [m, s] = synth_dataset(small_data(c));
  const auto p = ModelParams<double>::init(c);
  const auto ep = sample(c, m, s, 3);
  Episode shuffled = ep;
  const std::vector<std::size_t> perm{4, 2, 0, 5, 1, 3};
  const std::size_t frame = c.T * c.C;
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy_n(ep.query.data().begin() + perm[i] * frame, frame, shuffled.query.data().begin() + i * frame);
    std::copy_n(ep.query_prompts.data().begin() + perm[i] * c.C, c.C,
                shuffled.query_prompts.data().begin() + i * c.C);
    shuffled.query_labels[i] = ep.query_labels[perm[i]];
  }
  NoGradGuard no_grad;
  const auto a = forward_episode(ep, p, c, true);
  const auto b = forward_episode(shuffled, p, c, true);
  EXPECT_NEAR(a.l_ce.item(), b.l_ce.item(), 1e-10);
  EXPECT_NEAR(a.l_s.item(), b.l_s.item(), 1e-10);
  EXPECT_NEAR(a.l_h.item(), b.l_h.item(), 1e-10);
}

TEST(Engine, FullPipelineGradientMatchesFiniteDifferences) {
  auto c = small_config();
  c.T = 3;
  c.way = 2;
  c.query = 1;
  c.lambda3 = c.lambda4 = 0.5;
  auto o = small_data(c);
  const auto [m, s] = synth_dataset(o);
  auto p = ModelParams<double>::init(c);
  // Move gates and phi off their zero init so every path carries gradient.
  Rng rng(9);
  p.visit([&](const std::string&, Tensor<double>& t) {
    for (auto& v : t.mutable_value().data()) v += 0.1 * std::normal_distribution<double>()(rng);
  });
  const auto ep = sample(c, m, s, 4);
  const auto r = check_gradients([&] { return forward_episode(ep, p, c, true).total; }, p.tensors(), 1e-4);
  EXPECT_TRUE(r.passed) << r.max_relative_error;
}

TEST(Engine, NonFiniteInputIsNumericError) {
  const auto c = small_config();
  const auto [m, s] = synth_dataset(small_data(c));
  const auto p = ModelParams<double>::init(c);
  auto ep = sample(c, m, s, 5);
  ep.support[0] = std::nanf("");
  EXPECT_THROW(forward_episode(ep, p, c, true), NumericError);
}

TEST(Training, ZeroEpisodesLeaveParametersUnchanged) {
  const auto c = small_config();
  const auto [m, s] = synth_dataset(small_data(c));
  auto state = TrainState<double>::fresh(c);
  const auto before = snapshot(state.params);
  EXPECT_TRUE(train(m, s, c, 0, state).empty());
  EXPECT_EQ(snapshot(state.params), before);
}

TEST(Training, OptimizerStepsEveryAccumulationWindow) {
  const auto c = small_config();
  const auto [m, s] = synth_dataset(small_data(c));
  auto state = TrainState<double>::fresh(c);
  const auto before = snapshot(state.params);
  train(m, s, c, 15, state);
  EXPECT_EQ(state.optimizer_steps, 0u);
  EXPECT_EQ(snapshot(state.params), before);
  train(m, s, c, 25, state);
  EXPECT_EQ(state.optimizer_steps, 2u);
  EXPECT_EQ(state.accumulated_count, 8u);
  EXPECT_EQ(state.episode, 40u);
  EXPECT_NE(snapshot(state.params), before);
}

TEST(Training, DeterministicForFixedSeeds) {
  auto c = small_config();
  c.accumulation = 4;
  const auto [m, s] = synth_dataset(small_data(c));
  auto a = TrainState<double>::fresh(c);
  auto b = TrainState<double>::fresh(c);
  const auto la = train(m, s, c, 12, a);
  const auto lb = train(m, s, c, 12, b);
  EXPECT_EQ(snapshot(a.params), snapshot(b.params));
  for (std::size_t i = 0; i < la.size(); ++i) EXPECT_EQ(la[i].total, lb[i].total);
}

TEST(Training, NonFiniteEpisodesAreSkipped) {
  auto c = small_config();
  c.accumulation = 2;
  auto [m, s] = synth_dataset(small_data(c));
  for (std::size_t v = 0; v < s.video_count(); ++v)
    if (s.video_class[v] == 0) s.frames[v * c.T * c.C] = std::nanf("");
  auto state = TrainState<double>::fresh(c);
  const auto log = train(m, s, c, 20, state);
  EXPECT_GT(state.skipped_episodes, 0u);
  std::size_t nan_rows = 0;
  for (const auto& r : log) nan_rows += std::isnan(r.total);
  EXPECT_EQ(nan_rows, state.skipped_episodes);
  for (auto& t : state.params.tensors())
    for (double v : t.value().data()) ASSERT_TRUE(std::isfinite(v));
}

TEST(Evaluation, PureNoiseIsAtChance) {
  auto c = small_config();
  c.C = 16;
  c.way = 5;
  c.query = 4;
  auto o = small_data(c);
  o.train_classes = 5;
  o.test_classes = 10;
  o.per_class = 10;
  o.appearance_sep = 0.0;
  o.motion_sep = 0.0;
  o.noise = 1.0;
  o.prompt_jitter = 1.0;
  const auto [m, s] = synth_dataset(o);
  const auto p = ModelParams<float>::init(c);
  const auto r = evaluate(m, s, p, c, 200);
  const double sd = std::sqrt(0.2 * 0.8 / (200.0 * 20.0));
  EXPECT_NEAR(r.mean_accuracy, 0.2, 3.0 * sd);
}

TEST(Evaluation, SeparableDataIsSolved) {
  auto c = small_config();
  c.C = 32;
  c.way = 5;
  c.query = 3;
  auto o = small_data(c);
  o.train_classes = 5;
  o.test_classes = 8;
  o.noise = 0.0;
  o.appearance_sep = 3.0;
  const auto [m, s] = synth_dataset(o);
  const auto p = ModelParams<float>::init(c);
  EXPECT_EQ(evaluate(m, s, p, c, 20).mean_accuracy, 1.0);
}

TEST(Evaluation, IndependentOfThreadCount) {
  const auto c = small_config();
  const auto [m, s] = synth_dataset(small_data(c));
  const auto p = ModelParams<float>::init(c);
  const auto a = evaluate(m, s, p, c, 12, Split::test, 1);
  const auto b = evaluate(m, s, p, c, 12, Split::test, 3);
  EXPECT_EQ(a.per_episode, b.per_episode);
}

TEST(Evaluation, ConfidenceInterval) {
  EXPECT_TRUE(std::isnan(summarize_accuracies({0.75}).ci95));
  const std::vector<double> base{0.2, 0.6, 0.4, 1.0, 0.8, 0.4, 0.6, 0.2};
  std::vector<double> four;
  for (int i = 0; i < 4; ++i) four.insert(four.end(), base.begin(), base.end());
  const auto a = summarize_accuracies(base);
  const auto b = summarize_accuracies(four);
  EXPECT_DOUBLE_EQ(a.mean_accuracy, b.mean_accuracy);
  const double n = static_cast<double>(base.size());
  EXPECT_NEAR(b.ci95 / a.ci95, 0.5 * std::sqrt(4.0 * (n - 1.0) / (4.0 * n - 1.0)), 1e-12);
  double ss = 0.0;
  for (double v : base) ss += (v - a.mean_accuracy) * (v - a.mean_accuracy);
  EXPECT_NEAR(a.ci95, 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n), 1e-12);
}

TEST(Checkpoint, RoundTripRestoresValues) {
  TempDir dir;
  const auto c = small_config();
  auto p = ModelParams<float>::init(c);
  save_checkpoint(p, c, dir.file("model.fsck"));
  auto other = c;
  other.model_seed = 99;
  auto q = ModelParams<float>::init(other);
  EXPECT_NE(snapshot(q), snapshot(p));
  load_checkpoint(q, other, dir.file("model.fsck"));
  EXPECT_EQ(snapshot(q), snapshot(p));
}

TEST(Checkpoint, RejectsDifferentArchitecture) {
  TempDir dir;
  const auto c = small_config();
  auto p = ModelParams<float>::init(c);
  save_checkpoint(p, c, dir.file("model.fsck"));
  auto deeper = c;
  deeper.pg_depth = 3;
  auto q = ModelParams<float>::init(deeper);
  EXPECT_THROW(load_checkpoint(q, deeper, dir.file("model.fsck")), IntegrityError);
}

TEST(Checkpoint, RejectsTruncatedFile) {
  TempDir dir;
  const auto c = small_config();
  auto p = ModelParams<float>::init(c);
  save_checkpoint(p, c, dir.file("model.fsck"));
  std::filesystem::resize_file(dir.file("model.fsck"), 100);
  EXPECT_THROW(load_checkpoint(p, c, dir.file("model.fsck")), FormatError);
}

TEST(Metrics, CsvRoundTripKeepsMissingValues) {
  TempDir dir;
  const double nan = std::nan("");
  const std::vector<MetricsRow> rows{{1, 1.5, 0.25, 0.125, 1.5004, 0.5}, {2, nan, nan, nan, nan, nan}};
  write_metrics(rows, dir.file("m.csv"));
  std::ifstream in(dir.file("m.csv"));
  std::string header, second, third;
  std::getline(in, header);
  std::getline(in, second);
  std::getline(in, third);
  EXPECT_EQ(header, "episode,L_CE,L_H,L_S,total,accuracy");
  EXPECT_EQ(third, "2,NA,NA,NA,NA,NA");
  const auto back = read_metrics(dir.file("m.csv"));
  ASSERT_EQ(back.size(), 2u);
  EXPECT_EQ(back[0].l_ce, 1.5);
  EXPECT_EQ(back[0].total, 1.5004);
  EXPECT_TRUE(std::isnan(back[1].accuracy));
}

TEST(Metrics, EmptyOrMalformedFilesAreDataErrors) {
  TempDir dir;
  write_metrics({}, dir.file("empty.csv"));
  EXPECT_THROW(read_metrics(dir.file("empty.csv")), DataError);
  std::ofstream(dir.file("bad.csv")) << "a,b\n1,2\n";
  EXPECT_THROW(read_metrics(dir.file("bad.csv")), DataError);
  EXPECT_THROW(read_metrics(dir.file("missing.csv")), DataError);
}

TEST(Report, SummaryAndSvg) {
  std::vector<MetricsRow> rows;
  for (std::size_t i = 1; i <= 100; ++i) rows.push_back({i, 2.0 - i * 0.01, 0, 0, 2.0 - i * 0.01, i > 50 ? 1.0 : 0.0});
  const auto s = summarize_run("full", rows, 10);
  EXPECT_EQ(s.episodes, 100u);
  EXPECT_NEAR(s.first_loss, 2.0 - 0.055, 1e-12);
  EXPECT_NEAR(s.final_loss, 2.0 - 0.955, 1e-12);
  EXPECT_EQ(s.final_accuracy, 1.0);
  const auto svg = render_svg({{"full", rows}}, 10);
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("polyline"), std::string::npos);
  EXPECT_NE(summary_table({s}).find("full,100,0,"), std::string::npos);
}

TEST(Report, MovingAverageSkipsMissing) {
  const double nan = std::nan("");
  const auto ma = moving_average({1.0, nan, 3.0, 5.0}, 2);
  EXPECT_EQ(ma[0], 1.0);
  EXPECT_EQ(ma[1], 1.0);
  EXPECT_EQ(ma[2], 3.0);
  EXPECT_EQ(ma[3], 4.0);
}
