#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fsar/data/manifest.hpp"
#include "fsar/tensor/ndarray.hpp"

namespace fsar {


inline constexpr std::uint32_t kStoreVersion = 1;

/// Per-video T x C frame embeddings and per-class R x C prompt embeddings.
struct EmbeddingStore {
  std::uint32_t T = 0, C = 0, R = 0;
  std::vector<std::string> video_ids;
  std::vector<std::uint32_t> video_class;
  std::vector<float> frames;  // video-major, T*C per video
  std::vector<std::uint32_t> prompt_class;
  std::vector<float> prompts;  // class-record-major, R*C per record

  std::size_t video_count() const { return video_ids.size(); }

  std::span<const float> frame_record(std::size_t i) const {
    return {frames.data() + i * T * C, static_cast<std::size_t>(T) * C};
  }

  std::size_t prompt_index(std::uint32_t class_id) const {
    for (std::size_t i = 0; i < prompt_class.size(); ++i)
      if (prompt_class[i] == class_id) return i;
    throw LookupError("no prompt record for class " + std::to_string(class_id));
  }

  std::span<const float> prompt_record(std::uint32_t class_id) const {
    return {prompts.data() + prompt_index(class_id) * R * C, static_cast<std::size_t>(R) * C};
  }
};

namespace detail {

class ByteWriter {
 public:
  explicit ByteWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
    if (!out_) throw FormatError("cannot write '" + path + "'");
  }
  void magic(const char (&m)[5]) { out_.write(m, 4); }
  template <class U>
  void le(U v) {
    using Bits = std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint32_t>;
    static_assert(sizeof(U) == sizeof(Bits));
    const auto bits = std::bit_cast<Bits>(v);
    char b[sizeof(Bits)];
    for (std::size_t i = 0; i < sizeof(Bits); ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFFu);
    out_.write(b, sizeof(Bits));
  }
  void bytes(const std::string& s) { out_.write(s.data(), static_cast<std::streamsize>(s.size())); }
  void close() {
    out_.flush();
    if (!out_) throw FormatError("write to '" + path_ + "' failed");
  }

 private:
  std::ofstream out_;
  std::string path_;
};

class ByteReader {
 public:
  explicit ByteReader(const std::string& path) : in_(path, std::ios::binary), path_(path) {
    if (!in_) throw FormatError("cannot open '" + path + "'");
  }
  void expect_magic(const char (&m)[5]) {
    char got[4] = {};
    read(got, 4);
    if (std::memcmp(got, m, 4) != 0) throw FormatError("'" + path_ + "': bad magic, expected " + std::string(m));
  }
  template <class U>
  U le() {
    using Bits = std::conditional_t<sizeof(U) == 2, std::uint16_t, std::uint32_t>;
    unsigned char b[sizeof(Bits)];
    read(reinterpret_cast<char*>(b), sizeof(Bits));
    Bits bits = 0;
    for (std::size_t i = 0; i < sizeof(Bits); ++i) bits |= static_cast<Bits>(static_cast<Bits>(b[i]) << (8 * i));
    return std::bit_cast<U>(bits);
  }
  std::string text(std::size_t n) {
    std::string s(n, '\0');
    read(s.data(), n);
    return s;
  }
  void expect_end() {
    if (in_.peek() != std::char_traits<char>::eof()) throw IntegrityError("'" + path_ + "': trailing bytes after last record");
  }

 private:
  void read(char* dst, std::size_t n) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) throw FormatError("'" + path_ + "': truncated file");
  }
  std::ifstream in_;
  std::string path_;
};

inline void check_finite(const float* v, std::size_t n, const std::string& what, std::size_t record) {
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(v[i])) {
      throw DataError(what + " record " + std::to_string(record) + " holds a non-finite value at element " +
                      std::to_string(i));
    }
  }
}

}  // namespace detail

inline void write_frames(const EmbeddingStore& s, const std::string& path) {
  detail::ByteWriter w(path);
  w.magic("FSE1");
  w.le(kStoreVersion);
  w.le(static_cast<std::uint32_t>(s.video_count()));
  w.le(s.T);
  w.le(s.C);
  for (std::size_t i = 0; i < s.video_count(); ++i) {
    if (s.video_ids[i].size() > 0xFFFF) throw FormatError("video id too long: " + s.video_ids[i]);
    w.le(static_cast<std::uint16_t>(s.video_ids[i].size()));
    w.bytes(s.video_ids[i]);
    w.le(s.video_class[i]);
    for (float v : s.frame_record(i)) w.le(v);
  }
  w.close();
}

inline void write_prompts(const EmbeddingStore& s, const std::string& path) {
  detail::ByteWriter w(path);
  w.magic("FSP1");
  w.le(kStoreVersion);
  w.le(static_cast<std::uint32_t>(s.prompt_class.size()));
  w.le(s.R);
  w.le(s.C);
  const std::size_t rc = static_cast<std::size_t>(s.R) * s.C;
  for (std::size_t i = 0; i < s.prompt_class.size(); ++i) {
    w.le(s.prompt_class[i]);
    for (std::size_t k = 0; k < rc; ++k) w.le(s.prompts[i * rc + k]);
  }
  w.close();
}

inline void write_store(const Manifest& m, const EmbeddingStore& s, const std::string& frame_path,
                        const std::string& prompt_path, const std::string& manifest_path) {
  write_frames(s, frame_path);
  write_prompts(s, prompt_path);
  write_manifest(m, manifest_path);
}

/// Loads and cross-validates a frame container, prompt container and manifest.
inline std::pair<Manifest, EmbeddingStore> read_store(const std::string& frame_path, const std::string& prompt_path,
                                                      const std::string& manifest_path) {
  Manifest m = read_manifest(manifest_path);
  m.validate();
  EmbeddingStore s;

  detail::ByteReader fr(frame_path);
  fr.expect_magic("FSE1");
  if (const auto v = fr.le<std::uint32_t>(); v != kStoreVersion) {
    throw FormatError("'" + frame_path + "': unsupported version " + std::to_string(v));
  }
  const auto n_videos = fr.le<std::uint32_t>();
  s.T = fr.le<std::uint32_t>();
  s.C = fr.le<std::uint32_t>();
  if (n_videos != m.videos.size()) {
    throw IntegrityError("frame container holds " + std::to_string(n_videos) + " videos, manifest lists " +
                         std::to_string(m.videos.size()));
  }
  if (s.T != m.T || s.C != m.C) {
    throw IntegrityError("frame container is " + std::to_string(s.T) + "x" + std::to_string(s.C) + ", manifest says " +
                         std::to_string(m.T) + "x" + std::to_string(m.C));
  }
  std::unordered_map<std::string, std::uint32_t> expected;
  for (const auto& v : m.videos) expected.emplace(v.id, v.class_id);
  const std::size_t tc = static_cast<std::size_t>(s.T) * s.C;
  s.frames.resize(n_videos * tc);
  for (std::uint32_t i = 0; i < n_videos; ++i) {
    const auto len = fr.le<std::uint16_t>();
    std::string id = fr.text(len);
    const auto cls = fr.le<std::uint32_t>();
    auto it = expected.find(id);
    if (it == expected.end()) throw IntegrityError("frame record " + std::to_string(i) + " video '" + id + "' not in manifest");
    if (it->second != cls) {
      throw IntegrityError("frame record " + std::to_string(i) + " class " + std::to_string(cls) +
                           " disagrees with manifest class " + std::to_string(it->second));
    }
    float* dst = s.frames.data() + i * tc;
    for (std::size_t k = 0; k < tc; ++k) dst[k] = fr.le<float>();
    detail::check_finite(dst, tc, "frame", i);
    s.video_ids.push_back(std::move(id));
    s.video_class.push_back(cls);
  }
  fr.expect_end();

  detail::ByteReader pr(prompt_path);
  pr.expect_magic("FSP1");
  if (const auto v = pr.le<std::uint32_t>(); v != kStoreVersion) {
    throw FormatError("'" + prompt_path + "': unsupported version " + std::to_string(v));
  }
  const auto n_classes = pr.le<std::uint32_t>();
  s.R = pr.le<std::uint32_t>();
  const auto pc = pr.le<std::uint32_t>();
  if (n_classes != m.classes.size()) {
    throw IntegrityError("prompt container holds " + std::to_string(n_classes) + " classes, manifest lists " +
                         std::to_string(m.classes.size()));
  }
  if (s.R != m.R || pc != m.C) {
    throw IntegrityError("prompt container is R=" + std::to_string(s.R) + " C=" + std::to_string(pc) +
                         ", manifest says R=" + std::to_string(m.R) + " C=" + std::to_string(m.C));
  }
  const std::size_t rc = static_cast<std::size_t>(s.R) * s.C;
  s.prompts.resize(n_classes * rc);
  std::vector<bool> seen(n_classes, false);
  for (std::uint32_t i = 0; i < n_classes; ++i) {
    const auto cls = pr.le<std::uint32_t>();
    if (cls >= n_classes || seen[cls]) {
      throw IntegrityError("prompt record " + std::to_string(i) + " has invalid or repeated class " + std::to_string(cls));
    }
    seen[cls] = true;
    float* dst = s.prompts.data() + i * rc;
    for (std::size_t k = 0; k < rc; ++k) dst[k] = pr.le<float>();
    detail::check_finite(dst, rc, "prompt", i);
    s.prompt_class.push_back(cls);
  }
  pr.expect_end();
  return {std::move(m), std::move(s)};
}

/// Sum of the R template embeddings of one class, shape [1, C].
inline NdArray<float> aggregate_prompts(const EmbeddingStore& s, std::uint32_t class_id) {
  const auto rec = s.prompt_record(class_id);
  NdArray<float> out({1, s.C});
  for (std::size_t r = 0; r < s.R; ++r)
    for (std::size_t c = 0; c < s.C; ++c) out[c] += rec[r * s.C + c];
  return out;
}

}  // namespace fsar
