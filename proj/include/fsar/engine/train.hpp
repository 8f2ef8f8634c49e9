#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <functional>
#include <limits>
#include <mutex>
#include <thread>
#include <vector>

#include "fsar/engine/model.hpp"
#include "fsar/tensor/optim.hpp"

namespace fsar {

struct MetricsRow {
  std::size_t episode = 0;
  double l_ce = 0, l_h = 0, l_s = 0, total = 0, accuracy = 0;
};

template <class T>
struct TrainState {
  ModelParams<T> params;
  AdamState<T> adam;
  Rng sampler;
  std::size_t episode = 0;
  std::vector<NdArray<T>> accumulated;
  std::size_t accumulated_count = 0;
  std::size_t optimizer_steps = 0;
  std::size_t skipped_episodes = 0;

  static TrainState fresh(const ModelConfig& cfg) {
    TrainState s;
    s.params = ModelParams<T>::init(cfg);
    s.sampler = Rng(cfg.train_seed);
    return s;
  }
};

using EpisodeCallback = std::function<void(const MetricsRow&)>;

/// Runs `episodes` training episodes; Adam fires after every
/// `cfg.accumulation` successfully accumulated episodes.
template <class T>
std::vector<MetricsRow> train(const Manifest& m, const EmbeddingStore& s, const ModelConfig& cfg, std::size_t episodes,
                              TrainState<T>& state, const EpisodeCallback& on_episode = {}) {
  auto params = state.params.tensors();
  if (state.accumulated.empty()) {
    for (const auto& p : params) state.accumulated.emplace_back(p.shape());
  }
  std::vector<MetricsRow> log;
  log.reserve(episodes);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  for (std::size_t i = 0; i < episodes; ++i) {
    const Episode ep = sample_episode(m, s, Split::train, cfg.way, cfg.shot, cfg.query, state.sampler);
    MetricsRow row;
    row.episode = ++state.episode;
    try {
      const auto out = forward_episode(ep, state.params, cfg, true);
      if (out.total.requires_grad()) out.total.backward();
      for (std::size_t k = 0; k < params.size(); ++k) {
        if (!params[k].has_grad()) continue;
        auto dst = state.accumulated[k].data();
        const auto src = params[k].grad().data();
        for (std::size_t e = 0; e < dst.size(); ++e) dst[e] += src[e];
        params[k].zero_grad();
      }
      row = {state.episode, static_cast<double>(out.l_ce.item()), static_cast<double>(out.l_h.item()),
             static_cast<double>(out.l_s.item()), static_cast<double>(out.total.item()), out.accuracy};
      ++state.accumulated_count;
    } catch (const NumericError&) {
      for (auto& p : params) p.zero_grad();
      ++state.skipped_episodes;
      row = {state.episode, nan, nan, nan, nan, nan};
    }
    if (state.accumulated_count == cfg.accumulation) {
      const auto report = adam_step<T>(params, state.accumulated, state.adam, cfg.adam());
      if (report.applied) ++state.optimizer_steps;
      for (auto& g : state.accumulated) g.fill(T{0});
      state.accumulated_count = 0;
    }
    log.push_back(row);
    if (on_episode) on_episode(row);
  }
  return log;
}

struct EvalResult {
  double mean_accuracy = 0.0;
  double ci95 = std::numeric_limits<double>::quiet_NaN();  // half-width; NaN when undefined
  std::vector<double> per_episode;
};

inline EvalResult summarize_accuracies(std::vector<double> acc) {
  EvalResult r;
  r.per_episode = std::move(acc);
  const double n = static_cast<double>(r.per_episode.size());
  if (r.per_episode.empty()) return r;
  double sum = 0.0;
  for (double a : r.per_episode) sum += a;
  r.mean_accuracy = sum / n;
  if (r.per_episode.size() > 1) {
    double ss = 0.0;
    for (double a : r.per_episode) ss += (a - r.mean_accuracy) * (a - r.mean_accuracy);
    r.ci95 = 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
  }
  return r;
}

/// Seed of evaluation episode i, independent of how episodes are scheduled.
inline std::uint64_t episode_seed(std::uint64_t base, std::size_t i) {
  std::uint64_t z = base + 0x9E3779B97F4A7C15ull * (static_cast<std::uint64_t>(i) + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

/// Frozen-parameter episodic evaluation spread over `threads` workers.
template <class T>
EvalResult evaluate(const Manifest& m, const EmbeddingStore& s, const ModelParams<T>& params, const ModelConfig& cfg,
                    std::size_t episodes, Split split = Split::test, std::size_t threads = 1) {
  std::vector<double> acc(episodes, 0.0);
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    NoGradGuard no_grad;
    try {
      for (std::size_t i = next++; i < episodes; i = next++) {
        Rng rng(episode_seed(cfg.eval_seed, i));
        const Episode ep = sample_episode(m, s, split, cfg.way, cfg.shot, cfg.query, rng);
        acc[i] = forward_episode(ep, params, cfg, false).accuracy;
      }
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = episodes;
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, episodes));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  if (failure) std::rethrow_exception(failure);
  return summarize_accuracies(std::move(acc));
}

}  // namespace fsar
