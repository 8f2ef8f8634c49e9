#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <set>

#include "fsar/data/episode.hpp"
#include "fsar/data/synth.hpp"
#include "temp_dir.hpp"

using namespace fsar;
using fsar::testing::TempDir;

namespace {

SynthOptions small_options() {
  SynthOptions o;
  o.train_classes = 6;
  o.val_classes = 2;
  o.test_classes = 5;
  o.per_class = 6;
  o.T = 4;
  o.C = 8;
  o.R = 3;
  o.seed = 5;
  return o;
}

struct Files {
  std::string frames, prompts, manifest;
};

Files write_all(const TempDir& dir, const Manifest& m, const EmbeddingStore& s) {
  Files f{dir.file("frames.fse"), dir.file("prompts.fsp"), dir.file("manifest.json")};
  write_store(m, s, f.frames, f.prompts, f.manifest);
  return f;
}

void patch_bytes(const std::string& path, std::size_t offset, const void* bytes, std::size_t n) {
  std::fstream io(path, std::ios::in | std::ios::out | std::ios::binary);
  io.seekp(static_cast<std::streamoff>(offset));
  io.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(n));
}

template <class E>
std::string thrown_message(const std::function<void()>& f) {
  try {
    f();
  } catch (const E& e) {
    return e.what();
  }
  ADD_FAILURE() << "expected exception was not thrown";
  return {};
}

}  // namespace

TEST(Store, RoundTripIsBitExact) {
  TempDir dir;
  const auto [m, s] = synth_dataset(small_options());
  const auto f = write_all(dir, m, s);
  const auto [m2, s2] = read_store(f.frames, f.prompts, f.manifest);
  EXPECT_EQ(m2.to_json(), m.to_json());
  EXPECT_EQ(s2.video_ids, s.video_ids);
  EXPECT_EQ(s2.video_class, s.video_class);
  EXPECT_EQ(s2.prompt_class, s.prompt_class);
  ASSERT_EQ(s2.frames.size(), s.frames.size());
  ASSERT_EQ(s2.prompts.size(), s.prompts.size());
  EXPECT_EQ(std::memcmp(s2.frames.data(), s.frames.data(), s.frames.size() * sizeof(float)), 0);
  EXPECT_EQ(std::memcmp(s2.prompts.data(), s.prompts.data(), s.prompts.size() * sizeof(float)), 0);
}

TEST(Store, HeaderIsLittleEndian) {
  TempDir dir;
  const auto [m, s] = synth_dataset(small_options());
  const auto f = write_all(dir, m, s);
  std::ifstream in(f.frames, std::ios::binary);
  unsigned char head[20];
  in.read(reinterpret_cast<char*>(head), 20);
  EXPECT_EQ(std::string(reinterpret_cast<char*>(head), 4), "FSE1");
  EXPECT_EQ(head[4], 1);  // version
  EXPECT_EQ(head[8], s.video_count() & 0xFF);
  EXPECT_EQ(head[12], 4);  // T
  EXPECT_EQ(head[16], 8);  // C
  const auto size = std::filesystem::file_size(f.frames);
  std::size_t expected = 20;
  for (const auto& id : s.video_ids) expected += 2 + id.size() + 4 + 4 * 4 * 8;
  EXPECT_EQ(size, expected);
}

TEST(Store, ThreeClassesTimesSixteenTemplates) {
  auto o = small_options();
  o.train_classes = 1;
  o.val_classes = 1;
  o.test_classes = 1;
  o.R = 16;
  TempDir dir;
  const auto [m, s] = synth_dataset(o);
  const auto f = write_all(dir, m, s);
  const auto [m2, s2] = read_store(f.frames, f.prompts, f.manifest);
  EXPECT_EQ(s2.prompts.size() / s2.C, 3u * 16u);
}

TEST(Store, BadMagicIsFormatError) {
  TempDir dir;
  const auto [m, s] = synth_dataset(small_options());
  const auto f = write_all(dir, m, s);
  patch_bytes(f.frames, 0, "XSE1", 4);
  EXPECT_THROW(read_store(f.frames, f.prompts, f.manifest), FormatError);
}

TEST(Store, BadVersionIsFormatError) {
  TempDir dir;
  const auto [m, s] = synth_dataset(small_options());
  const auto f = write_all(dir, m, s);
  const unsigned char v2[4] = {2, 0, 0, 0};
  patch_bytes(f.prompts, 4, v2, 4);
  EXPECT_THROW(read_store(f.frames, f.prompts, f.manifest), FormatError);
}

TEST(Store, TruncatedFileIsFormatError) {
  TempDir dir;
  const auto [m, s] = synth_dataset(small_options());
  const auto f = write_all(dir, m, s);
  std::filesystem::resize_file(f.frames, std::filesystem::file_size(f.frames) - 3);
  EXPECT_THROW(read_store(f.frames, f.prompts, f.manifest), FormatError);
}

TEST(Store, CountMismatchIsIntegrityError) {
  TempDir dir;
  auto [m, s] = synth_dataset(small_options());
  const auto f = write_all(dir, m, s);
  m.videos.pop_back();
  write_manifest(m, f.manifest);
  EXPECT_THROW(read_store(f.frames, f.prompts, f.manifest), IntegrityError);
}

TEST(Store, NonFiniteValueNamesRecord) {
  TempDir dir;
  auto [m, s] = synth_dataset(small_options());
  s.frames[3 * s.T * s.C + 5] = std::numeric_limits<float>::quiet_NaN();
  const auto f = write_all(dir, m, s);
  const auto msg = thrown_message<DataError>([&] { read_store(f.frames, f.prompts, f.manifest); });
  EXPECT_NE(msg.find("record 3"), std::string::npos) << msg;
}

TEST(Manifest, OverlappingSplitsAreRejected) {
  auto [m, s] = synth_dataset(small_options());
  m.splits[Split::test].push_back(m.splits[Split::train].front());
  EXPECT_THROW(m.validate(), IntegrityError);
  TempDir dir;
  const auto f = write_all(dir, m, s);
  EXPECT_THROW(read_store(f.frames, f.prompts, f.manifest), IntegrityError);
}

TEST(Manifest, InvariantsAreChecked) {
  auto [m, s] = synth_dataset(small_options());
  auto bad = m;
  bad.T = 1;
  EXPECT_THROW(bad.validate(), IntegrityError);
  bad = m;
  bad.classes[2].id = 7;
  EXPECT_THROW(bad.validate(), IntegrityError);
  bad = m;
  bad.videos[0].class_id = 99;
  EXPECT_THROW(bad.validate(), IntegrityError);
  bad = m;
  bad.R = 0;
  EXPECT_THROW(bad.validate(), IntegrityError);
}

TEST(AggregatePrompts, SingleTemplateUnchanged) {
  EmbeddingStore s;
  s.C = 3;
  s.R = 1;
  s.prompt_class = {0};
  s.prompts = {1.5f, -2.0f, 0.25f};
  const auto p = aggregate_prompts(s, 0);
  EXPECT_EQ(p.shape(), (Shape{1, 3}));
  EXPECT_EQ(std::vector<float>(p.data().begin(), p.data().end()), s.prompts);
}

TEST(AggregatePrompts, OppositeTemplatesCancel) {
  EmbeddingStore s;
  s.C = 3;
  s.R = 2;
  s.prompt_class = {0};
  s.prompts = {1.5f, -2.0f, 0.25f, -1.5f, 2.0f, -0.25f};
  const auto p = aggregate_prompts(s, 0);
  for (float v : p.data()) EXPECT_EQ(v, 0.0f);
}

TEST(AggregatePrompts, SixteenTemplatesEqualColumnSums) {
  auto o = small_options();
  o.R = 16;
  const auto [m, s] = synth_dataset(o);
  for (std::uint32_t c = 0; c < 3; ++c) {
    const auto p = aggregate_prompts(s, c);
    const auto rec = s.prompt_record(c);
    for (std::size_t k = 0; k < s.C; ++k) {
      double col = 0.0;
      for (std::size_t r = 0; r < 16; ++r) col += rec[r * s.C + k];
      EXPECT_NEAR(p[k], col, 1e-5);
    }
  }
  EXPECT_THROW(aggregate_prompts(s, 999), LookupError);
}

TEST(SampleEpisode, ProtocolShapes) {
  const auto [m, s] = synth_dataset(small_options());
  Rng rng(1);
  const auto ep = sample_episode(m, s, Split::train, 5, 1, 4, rng);
  EXPECT_EQ(ep.support.shape(), (Shape{5, 4, 8}));
  EXPECT_EQ(ep.query.shape(), (Shape{20, 4, 8}));
  EXPECT_EQ(ep.support_prompts.shape(), (Shape{5, 1, 8}));
  EXPECT_EQ(ep.support_labels.size(), 5u);
  EXPECT_EQ(ep.query_labels.size(), 20u);
}

TEST(SampleEpisode, DeterministicUnderSeed) {
  const auto [m, s] = synth_dataset(small_options());
  Rng a(42), b(42);
  const auto e1 = sample_episode(m, s, Split::train, 3, 2, 2, a);
  const auto e2 = sample_episode(m, s, Split::train, 3, 2, 2, b);
  EXPECT_EQ(e1.classes, e2.classes);
  EXPECT_EQ(e1.support_videos, e2.support_videos);
  EXPECT_EQ(e1.query_videos, e2.query_videos);
  EXPECT_EQ(e1.support, e2.support);
}

TEST(SampleEpisode, StructuralInvariants) {
  const auto [m, s] = synth_dataset(small_options());
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto ep = sample_episode(m, s, Split::train, 4, 2, 3, rng);
    std::set<std::uint32_t> distinct(ep.classes.begin(), ep.classes.end());
    EXPECT_EQ(distinct.size(), 4u);
    std::map<std::size_t, int> per_support, per_query;
    for (auto l : ep.support_labels) ++per_support[l];
    for (auto l : ep.query_labels) ++per_query[l];
    for (std::size_t n = 0; n < 4; ++n) {
      EXPECT_EQ(per_support[n], 2);
      EXPECT_EQ(per_query[n], 3);
    }
    std::set<std::size_t> support_set(ep.support_videos.begin(), ep.support_videos.end());
    for (auto v : ep.query_videos) EXPECT_EQ(support_set.count(v), 0u);
    for (std::size_t i = 0; i < ep.support_videos.size(); ++i) {
      EXPECT_EQ(s.video_class[ep.support_videos[i]], ep.classes[ep.support_labels[i]]);
      const auto agg = aggregate_prompts(s, ep.classes[ep.support_labels[i]]);
      for (std::size_t k = 0; k < s.C; ++k) EXPECT_EQ(ep.support_prompts(i, 0, k), agg[k]);
    }
    for (std::size_t j = 0; j < ep.query_videos.size(); ++j) {
      EXPECT_EQ(s.video_class[ep.query_videos[j]], ep.classes[ep.query_labels[j]]);
    }
  }
}

TEST(SampleEpisode, ClassFrequencyIsUniform) {
  SynthOptions o = small_options();
  o.train_classes = 24;
  o.val_classes = 0;
  o.test_classes = 5;
  const auto [m, s] = synth_dataset(o);
  Rng rng(9);
  std::map<std::uint32_t, int> hits;
  const int episodes = 10000;
  for (int e = 0; e < episodes; ++e)
    for (auto c : sample_episode(m, s, Split::train, 5, 1, 4, rng).classes) ++hits[c];
  ASSERT_EQ(hits.size(), 24u);
  for (const auto& [c, n] : hits) EXPECT_NEAR(n / double(episodes), 5.0 / 24.0, 0.02) << "class " << c;
}

TEST(SampleEpisode, LabelsCarryNoPositionInformation) {
  const auto [m, s] = synth_dataset(small_options());
  Rng rng(4);
  std::map<std::uint32_t, int> first_label_class;
  for (int e = 0; e < 3000; ++e) ++first_label_class[sample_episode(m, s, Split::train, 5, 1, 1, rng).classes[0]];
  for (const auto& [c, n] : first_label_class) EXPECT_NEAR(n / 3000.0, 1.0 / 6.0, 0.03);
}

TEST(SampleEpisode, InsufficientDataNamesDeficit) {
  const auto [m, s] = synth_dataset(small_options());
  Rng rng(1);
  const auto msg = thrown_message<SamplingError>([&] { sample_episode(m, s, Split::val, 5, 1, 4, rng); });
  EXPECT_NE(msg.find("short by 3"), std::string::npos) << msg;
  EXPECT_THROW(sample_episode(m, s, Split::train, 2, 4, 4, rng), SamplingError);
}

TEST(Synth, NoNoiseNoMotionGivesIdenticalFrames) {
  auto o = small_options();
  o.noise = 0.0;
  o.motion_sep = 0.0;
  const auto [m, s] = synth_dataset(o);
  for (std::size_t v = 0; v < s.video_count(); ++v) {
    const auto rec = s.frame_record(v);
    for (std::size_t t = 1; t < s.T; ++t)
      for (std::size_t k = 0; k < s.C; ++k) EXPECT_EQ(rec[t * s.C + k], rec[k]);
  }
}

TEST(Synth, MotionOnlyFrameDifferencesSeparateClasses) {
  auto o = small_options();
  o.appearance_sep = 0.0;
  o.noise = 0.0;
  const auto [m, s] = synth_dataset(o);
  // Differences are constant within a video and shared by every video of a class.
  auto diff = [&](std::size_t v, std::size_t t, std::size_t k) {
    return s.frame_record(v)[(t + 1) * s.C + k] - s.frame_record(v)[t * s.C + k];
  };
  for (std::size_t v = 0; v + 1 < s.video_count(); ++v) {
    const bool same = s.video_class[v] == s.video_class[v + 1];
    double gap = 0.0;
    for (std::size_t k = 0; k < s.C; ++k) gap += std::abs(diff(v, 0, k) - diff(v + 1, 2, k));
    if (same) EXPECT_LT(gap, 1e-4);
    else EXPECT_GT(gap, 1e-2);
  }
}

TEST(Synth, NearestMeanSeparatesAppearanceRegime) {
  SynthOptions o;
  o.seed = 21;
  o.appearance_sep = 1.0;
  o.noise = 0.1;
  const auto [m, s] = synth_dataset(o);
  Rng rng(2);
  int correct = 0, total = 0;
  for (int e = 0; e < 200; ++e) {
    const auto ep = sample_episode(m, s, Split::test, 5, 1, 4, rng);
    auto frame_mean = [&](const NdArray<float>& a, std::size_t i, std::size_t k) {
      double acc = 0.0;
      for (std::size_t t = 0; t < o.T; ++t) acc += a(i, t, k);
      return acc / o.T;
    };
    for (std::size_t j = 0; j < ep.query_labels.size(); ++j) {
      std::size_t best = 0;
      double best_d = 1e300;
      for (std::size_t n = 0; n < 5; ++n) {
        double d = 0.0;
        for (std::size_t k = 0; k < o.C; ++k) {
          const double diff = frame_mean(ep.query, j, k) - frame_mean(ep.support, n, k);
          d += diff * diff;
        }
        if (d < best_d) best_d = d, best = n;
      }
      correct += best == ep.query_labels[j];
      ++total;
    }
  }
  EXPECT_GT(correct / double(total), 0.95);
}
