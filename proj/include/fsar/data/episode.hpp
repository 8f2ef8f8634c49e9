#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "fsar/data/store.hpp"
#include "fsar/tensor/nn.hpp"

namespace fsar {

/// One N-way K-shot task. Support items are grouped by episode label
/// (label n occupies rows n*K .. n*K+K-1); query items likewise with M rows.
struct Episode {
  std::size_t way = 0, shot = 0, query_per_class = 0;
  NdArray<float> support;          // [N*K, T, C]
  NdArray<float> query;            // [N*M, T, C]
  NdArray<float> support_prompts;  // [N*K, 1, C] aggregated prompt of each item's class
  NdArray<float> query_prompts;    // [N*M, 1, C] ground-truth class prompt, training only
  std::vector<std::size_t> support_labels;
  std::vector<std::size_t> query_labels;
  std::vector<std::uint32_t> classes;  // global class id of each episode label
  std::vector<std::size_t> support_videos, query_videos;
};

namespace detail {

/// k distinct draws from 0..n-1 in random order (partial Fisher-Yates).
inline std::vector<std::size_t> draw_without_replacement(std::size_t n, std::size_t k, Rng& rng) {
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  return pool;
}

inline void copy_record(NdArray<float>& dst, std::size_t row, std::span<const float> src) {
  std::copy(src.begin(), src.end(), dst.data().begin() + static_cast<std::ptrdiff_t>(row * src.size()));
}

}  // namespace detail

/// Videos of each class in a split, in store order.
inline std::map<std::uint32_t, std::vector<std::size_t>> videos_by_class(const Manifest& m, const EmbeddingStore& s,
                                                                        Split split) {
  std::map<std::uint32_t, std::vector<std::size_t>> out;
  for (auto c : m.split_classes(split)) out[c];
  for (std::size_t i = 0; i < s.video_count(); ++i) {
    auto it = out.find(s.video_class[i]);
    if (it != out.end()) it->second.push_back(i);
  }
  return out;
}

inline Episode sample_episode(const Manifest& m, const EmbeddingStore& s, Split split, std::size_t way,
                              std::size_t shot, std::size_t query, Rng& rng) {
  if (way == 0 || shot == 0 || query == 0) throw SamplingError("way, shot and query must all be positive");
  const auto pools = videos_by_class(m, s, split);
  std::vector<std::uint32_t> eligible;
  for (const auto& [c, vids] : pools)
    if (vids.size() >= shot + query) eligible.push_back(c);
  if (eligible.size() < way) {
    throw SamplingError("split " + split_name(split) + " has " + std::to_string(eligible.size()) +
                        " classes with at least " + std::to_string(shot + query) + " videos, need " +
                        std::to_string(way) + " (short by " + std::to_string(way - eligible.size()) + ")");
  }
  const std::size_t T = s.T, C = s.C;
  Episode ep;
  ep.way = way;
  ep.shot = shot;
  ep.query_per_class = query;
  ep.support = NdArray<float>({way * shot, T, C});
  ep.query = NdArray<float>({way * query, T, C});
  ep.support_prompts = NdArray<float>({way * shot, 1, C});
  ep.query_prompts = NdArray<float>({way * query, 1, C});
  // Draw order is already a uniform shuffle, so episode labels carry no position information.
  for (auto idx : detail::draw_without_replacement(eligible.size(), way, rng)) ep.classes.push_back(eligible[idx]);
  for (std::size_t n = 0; n < way; ++n) {
    const auto& vids = pools.at(ep.classes[n]);
    const auto chosen = detail::draw_without_replacement(vids.size(), shot + query, rng);
    const auto prompt = aggregate_prompts(s, ep.classes[n]);
    for (std::size_t k = 0; k < shot + query; ++k) {
      const std::size_t video = vids[chosen[k]];
      const bool is_support = k < shot;
      const std::size_t row = is_support ? n * shot + k : n * query + (k - shot);
      detail::copy_record(is_support ? ep.support : ep.query, row, s.frame_record(video));
      detail::copy_record(is_support ? ep.support_prompts : ep.query_prompts, row, prompt.data());
      (is_support ? ep.support_videos : ep.query_videos).push_back(video);
    }
  }
  for (std::size_t n = 0; n < way; ++n) {
    ep.support_labels.insert(ep.support_labels.end(), shot, n);
    ep.query_labels.insert(ep.query_labels.end(), query, n);
  }
  return ep;
}

}  // namespace fsar
