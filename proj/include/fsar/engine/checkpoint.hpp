#pragma once

#include <string>
#include <vector>

#include "fsar/data/store.hpp"
#include "fsar/engine/model.hpp"

namespace fsar {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Layout: "FSCK", u32 version, u32 hash low, u32 hash high, u32 tensor count;
/// per tensor: u16 name length, name, u32 rank, rank x u32 dims, f32 values.
template <class T>
void save_checkpoint(ModelParams<T>& params, const ModelConfig& cfg, const std::string& path) {
  detail::ByteWriter w(path);
  w.magic("FSCK");
  w.le(kCheckpointVersion);
  const std::uint64_t h = cfg.architecture_hash();
  w.le(static_cast<std::uint32_t>(h & 0xFFFFFFFFu));
  w.le(static_cast<std::uint32_t>(h >> 32));
  const auto names = params.names();
  w.le(static_cast<std::uint32_t>(names.size()));
  params.visit([&](const std::string& name, Tensor<T>& t) {
    w.le(static_cast<std::uint16_t>(name.size()));
    w.bytes(name);
    w.le(static_cast<std::uint32_t>(t.ndim()));
    for (auto d : t.shape()) w.le(static_cast<std::uint32_t>(d));
    for (T v : t.value().data()) w.le(static_cast<float>(v));
  });
  w.close();
}

/// Restores values into `params`, which must have been built from a config
/// with the same architecture hash.
template <class T>
void load_checkpoint(ModelParams<T>& params, const ModelConfig& cfg, const std::string& path) {
  detail::ByteReader r(path);
  r.expect_magic("FSCK");
  if (const auto v = r.le<std::uint32_t>(); v != kCheckpointVersion) {
    throw FormatError("'" + path + "': unsupported checkpoint version " + std::to_string(v));
  }
  const std::uint64_t lo = r.le<std::uint32_t>(), hi = r.le<std::uint32_t>();
  if ((lo | (hi << 32)) != cfg.architecture_hash()) {
    throw IntegrityError("checkpoint '" + path + "' was written for a different model configuration");
  }
  const auto count = r.le<std::uint32_t>();
  if (count != params.names().size()) throw IntegrityError("checkpoint '" + path + "' tensor count mismatch");
  params.visit([&](const std::string& name, Tensor<T>& t) {
    const std::string got = r.text(r.le<std::uint16_t>());
    if (got != name) throw IntegrityError("checkpoint tensor '" + got + "' where '" + name + "' was expected");
    const auto rank = r.le<std::uint32_t>();
    Shape shape(rank);
    for (auto& d : shape) d = r.le<std::uint32_t>();
    if (shape != t.shape()) {
      throw IntegrityError("checkpoint tensor '" + name + "' is " + shape_str(shape) + ", model has " + shape_str(t.shape()));
    }
    auto& dst = t.mutable_value();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(r.le<float>());
  });
  r.expect_end();
}

}  // namespace fsar
