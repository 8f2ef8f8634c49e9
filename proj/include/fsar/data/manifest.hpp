#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsar/error.hpp"

namespace fsar {

enum class Split { train, val, test };

inline const std::array<Split, 3> kAllSplits{Split::train, Split::val, Split::test};

inline std::string split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    default: return "test";
  }
}

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw IntegrityError("unknown split '" + s + "'");
}

struct ClassInfo {
  std::uint32_t id = 0;
  std::string name;
};

struct VideoInfo {
  std::string id;
  std::uint32_t class_id = 0;
  Split split = Split::train;
};

struct Manifest {
  std::vector<ClassInfo> classes;
  std::vector<VideoInfo> videos;
  std::uint32_t T = 0, C = 0, R = 0;
  std::map<Split, std::vector<std::uint32_t>> splits;

  const std::vector<std::uint32_t>& split_classes(Split s) const {
    static const std::vector<std::uint32_t> empty;
    auto it = splits.find(s);
    return it == splits.end() ? empty : it->second;
  }

  /// Throws IntegrityError on the first violated invariant.
  void validate() const {
    if (T < 2) throw IntegrityError("manifest T must be >= 2, got " + std::to_string(T));
    if (C < 1) throw IntegrityError("manifest C must be >= 1");
    if (R < 1) throw IntegrityError("manifest R must be >= 1");
    for (std::size_t i = 0; i < classes.size(); ++i) {
      if (classes[i].id != i) {
        throw IntegrityError("class ids must be dense 0.." + std::to_string(classes.size() - 1) + ", entry " +
                             std::to_string(i) + " has id " + std::to_string(classes[i].id));
      }
    }
    std::map<std::uint32_t, Split> owner;
    for (Split s : kAllSplits) {
      for (auto c : split_classes(s)) {
        if (c >= classes.size()) throw IntegrityError("split " + split_name(s) + " names unknown class " + std::to_string(c));
        auto [it, fresh] = owner.emplace(c, s);
        if (!fresh) {
          throw IntegrityError("class " + std::to_string(c) + " appears in both " + split_name(it->second) + " and " +
                               split_name(s) + " splits");
        }
      }
    }
    std::set<std::string> ids;
    for (const auto& v : videos) {
      if (v.class_id >= classes.size()) {
        throw IntegrityError("video '" + v.id + "' references unknown class " + std::to_string(v.class_id));
      }
      if (!ids.insert(v.id).second) throw IntegrityError("duplicate video id '" + v.id + "'");
      auto it = owner.find(v.class_id);
      if (it == owner.end() || it->second != v.split) {
        throw IntegrityError("video '" + v.id + "' split " + split_name(v.split) + " disagrees with its class split");
      }
    }
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["T"] = T;
    j["C"] = C;
    j["R"] = R;
    j["classes"] = nlohmann::json::array();
    for (const auto& c : classes) j["classes"].push_back({{"id", c.id}, {"name", c.name}});
    j["videos"] = nlohmann::json::array();
    for (const auto& v : videos) j["videos"].push_back({{"id", v.id}, {"class_id", v.class_id}, {"split", split_name(v.split)}});
    j["splits"] = nlohmann::json::object();
    for (Split s : kAllSplits) j["splits"][split_name(s)] = split_classes(s);
    return j;
  }

  static Manifest from_json(const nlohmann::json& j) {
    Manifest m;
    try {
      m.T = j.at("T").get<std::uint32_t>();
      m.C = j.at("C").get<std::uint32_t>();
      m.R = j.at("R").get<std::uint32_t>();
      for (const auto& c : j.at("classes")) m.classes.push_back({c.at("id").get<std::uint32_t>(), c.at("name").get<std::string>()});
      for (const auto& v : j.at("videos")) {
        m.videos.push_back({v.at("id").get<std::string>(), v.at("class_id").get<std::uint32_t>(),
                            parse_split(v.at("split").get<std::string>())});
      }
      for (const auto& [name, ids] : j.at("splits").items()) m.splits[parse_split(name)] = ids.get<std::vector<std::uint32_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(std::string("manifest: ") + e.what());
    }
    return m;
  }
};

inline Manifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest '" + path + "'");
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("manifest '" + path + "' is not valid JSON: " + e.what());
  }
  return Manifest::from_json(j);
}

inline void write_manifest(const Manifest& m, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write manifest '" + path + "'");
  out << m.to_json().dump(2) << '\n';
}

}  // namespace fsar
