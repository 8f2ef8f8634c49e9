#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <iomanip>
#include <utility>
#include <vector>

#include "fsar/data/store.hpp"
#include "fsar/tensor/nn.hpp"

namespace fsar {

struct SynthOptions {
  std::size_t train_classes = 24, val_classes = 0, test_classes = 10;
  std::size_t per_class = 30;
  std::uint32_t T = 8, C = 64, R = 16;
  double appearance_sep = 1.0;
  double motion_sep = 1.0;
  double noise = 0.1;
  double prompt_jitter = 0.05;
  std::uint64_t seed = 0;

  std::size_t n_classes() const { return train_classes + val_classes + test_classes; }
};

namespace detail {

inline std::vector<double> random_unit(std::size_t c, Rng& rng) {
  std::normal_distribution<double> g;
  std::vector<double> v(c);
  double n2 = 0.0;
  do {
    n2 = 0.0;
    for (auto& x : v) {
      x = g(rng);
      n2 += x * x;
    }
  } while (n2 == 0.0);
  for (auto& x : v) x /= std::sqrt(n2);
  return v;
}

inline std::string padded(const char* prefix, std::size_t i, int width) {
  std::ostringstream os;
  os << prefix << std::setw(width) << std::setfill('0') << i;
  return os.str();
}

}  // namespace detail

/// Class c has a unit appearance direction u_c and a drift d_c (unit
/// direction times a speed in [0.5, 1.5]). Frame t = 1..T of a video is
/// appearance_sep*u_c + t*motion_sep*d_c + noise*N(0, I); each prompt row is
/// appearance_sep*u_c + prompt_jitter*N(0, I). Classes are assigned to
/// train, val and test in that order.
inline std::pair<Manifest, EmbeddingStore> synth_dataset(const SynthOptions& o) {
  if (o.n_classes() == 0 || o.per_class == 0 || o.C == 0 || o.R == 0) {
    throw ConfigError("synth: class count, per-class count, C and R must be positive");
  }
  if (o.T < 2) throw ConfigError("synth: T must be >= 2");
  Rng rng(o.seed);
  std::normal_distribution<double> g;
  std::uniform_real_distribution<double> speed(0.5, 1.5);

  Manifest m;
  m.T = o.T;
  m.C = o.C;
  m.R = o.R;
  EmbeddingStore s;
  s.T = o.T;
  s.C = o.C;
  s.R = o.R;
  const std::size_t tc = static_cast<std::size_t>(o.T) * o.C;
  const std::size_t rc = static_cast<std::size_t>(o.R) * o.C;
  s.frames.reserve(o.n_classes() * o.per_class * tc);
  s.prompts.resize(o.n_classes() * rc);

  for (std::size_t c = 0; c < o.n_classes(); ++c) {
    const Split split = c < o.train_classes ? Split::train
                        : c < o.train_classes + o.val_classes ? Split::val
                                                               : Split::test;
    m.classes.push_back({static_cast<std::uint32_t>(c), detail::padded("class_", c, 3)});
    m.splits[split].push_back(static_cast<std::uint32_t>(c));
    const auto u = detail::random_unit(o.C, rng);
    auto d = detail::random_unit(o.C, rng);
    const double v = speed(rng);
    for (auto& x : d) x *= v;

    s.prompt_class.push_back(static_cast<std::uint32_t>(c));
    for (std::size_t r = 0; r < o.R; ++r)
      for (std::size_t k = 0; k < o.C; ++k)
        s.prompts[c * rc + r * o.C + k] = static_cast<float>(o.appearance_sep * u[k] + o.prompt_jitter * g(rng));

    for (std::size_t i = 0; i < o.per_class; ++i) {
      const std::string id = detail::padded("video_", c * o.per_class + i, 6);
      m.videos.push_back({id, static_cast<std::uint32_t>(c), split});
      s.video_ids.push_back(id);
      s.video_class.push_back(static_cast<std::uint32_t>(c));
      for (std::size_t t = 1; t <= o.T; ++t)
        for (std::size_t k = 0; k < o.C; ++k) {
          const double x = o.appearance_sep * u[k] + static_cast<double>(t) * o.motion_sep * d[k] + o.noise * g(rng);
          s.frames.push_back(static_cast<float>(x));
        }
    }
  }
  for (Split sp : kAllSplits) m.splits[sp];
  m.validate();
  return {std::move(m), std::move(s)};
}

}  // namespace fsar
