#pragma once

#include <atomic>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "fsar/engine/train.hpp"

namespace fsar {

struct AblationRow {
  std::string table;  // "components", "fusion" or "constraint"
  std::string label;
  ModelConfig config;
};

struct AblationResult {
  AblationRow row;
  EvalResult eval;
  std::size_t optimizer_steps = 0;
  std::size_t skipped_episodes = 0;
};

/// 8 module on/off combinations, 3 fusion strategies and 4 constraint modes.
inline std::vector<AblationRow> ablation_grid(const ModelConfig& base) {
  std::vector<AblationRow> rows;
  for (int mask = 0; mask < 8; ++mask) {
    ModelConfig c = base;
    c.use_hsmr = mask & 1;
    c.use_spm = mask & 2;
    c.use_padm = mask & 4;
    std::string label = std::string("hsmr=") + (c.use_hsmr ? "on" : "off") + " spm=" + (c.use_spm ? "on" : "off") +
                        " padm=" + (c.use_padm ? "on" : "off");
    rows.push_back({"components", label, c});
  }
  for (auto f : {FusionStrategy::concat, FusionStrategy::concat_sum, FusionStrategy::gate}) {
    ModelConfig c = base;
    c.use_hsmr = c.use_spm = c.use_padm = true;
    c.fusion = f;
    rows.push_back({"fusion", fusion_name(f), c});
  }
  for (auto m : {ConstraintMode::none, ConstraintMode::support, ConstraintMode::query, ConstraintMode::both}) {
    ModelConfig c = base;
    c.use_hsmr = c.use_spm = c.use_padm = true;
    c.constraint = m;
    rows.push_back({"constraint", constraint_name(m), c});
  }
  return rows;
}

/// Trains a fresh model for `cfg.train_episodes` and evaluates it on the test split.
template <class T>
AblationResult run_ablation_row(const Manifest& m, const EmbeddingStore& s, const AblationRow& row,
                                std::size_t eval_threads = 1) {
  auto state = TrainState<T>::fresh(row.config);
  train(m, s, row.config, row.config.train_episodes, state);
  AblationResult r{row, evaluate(m, s, state.params, row.config, row.config.eval_episodes, Split::test, eval_threads),
                   state.optimizer_steps, state.skipped_episodes};
  return r;
}

/// Runs rows on up to `threads` workers; results keep grid order.
template <class T>
std::vector<AblationResult> run_ablation(const Manifest& m, const EmbeddingStore& s,
                                         const std::vector<AblationRow>& rows, std::size_t threads = 1) {
  std::vector<AblationResult> out(rows.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    try {
      for (std::size_t i = next++; i < rows.size(); i = next++) out[i] = run_ablation_row<T>(m, s, rows[i]);
    } catch (...) {
      std::lock_guard lock(failure_mutex);
      if (!failure) failure = std::current_exception();
      next = rows.size();
    }
  };
  threads = std::max<std::size_t>(1, std::min(threads, rows.size()));
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
  worker();
  for (auto& th : pool) th.join();
  if (failure) std::rethrow_exception(failure);
  return out;
}

}  // namespace fsar
