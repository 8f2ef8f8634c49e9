#pragma once

#include <cstdint>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include <json.hpp>

#include "fsar/model/distances.hpp"
#include "fsar/model/fusion.hpp"
#include "fsar/model/spm.hpp"
#include "fsar/tensor/optim.hpp"

namespace fsar {

struct ModelConfig {
  // data
  std::size_t T = 8, C = 64, R = 16;
  // episode
  std::size_t way = 5, shot = 1, query = 4;
  // model
  std::size_t encoder_depth = 1, encoder_heads = 8, ff_mult = 4;
  std::size_t mfe_reduction = 4, pg_depth = 2;
  double gamma = 0.1;
  bool bidirectional = true;
  FusionStrategy fusion = FusionStrategy::gate;
  bool gate_pre_encoder = false;
  bool hsmr_pre_fusion_target = false;
  bool transductive = true;
  bool use_hsmr = true, use_spm = true, use_padm = true;
  ConstraintMode constraint = ConstraintMode::both;
  // loss
  double lambda1 = 1.0, lambda2 = 0.5, lambda3 = 0.001, lambda4 = 0.001;
  // optim
  double lr = 1e-5, weight_decay = 5e-5;
  std::size_t accumulation = 16;
  // run
  std::size_t train_episodes = 2000, eval_episodes = 500;
  std::uint64_t model_seed = 1, train_seed = 2, eval_seed = 3;
  std::string precision = "float";

  SeqDisOptions seq_dis() const { return {gamma, bidirectional}; }
  DistanceWeights weights() const { return {lambda1, lambda2}; }
  AdamOptions adam() const {
    AdamOptions a;
    a.lr = lr;
    a.weight_decay = weight_decay;
    return a;
  }
  SfOptions sf() const { return {fusion, gate_pre_encoder}; }

  void validate() const {
    auto need = [](bool ok, const std::string& msg) {
      if (!ok) throw ConfigError(msg);
    };
    need(T >= 2, "data.T must be >= 2");
    need(C >= 1 && R >= 1, "data.C and data.R must be positive");
    need(way >= 1 && shot >= 1 && query >= 1, "episode.way, episode.shot and episode.query must be positive");
    need(encoder_heads >= 1 && C % encoder_heads == 0, "model.encoder_heads must divide data.C");
    need(encoder_depth >= 1, "model.encoder_depth must be >= 1");
    need(ff_mult >= 1, "model.ff_mult must be >= 1");
    need(mfe_reduction >= 1 && C % mfe_reduction == 0, "model.mfe_reduction must divide data.C");
    need(pg_depth >= 1, "model.pg_depth must be >= 1");
    need(gamma > 0.0, "model.gamma must be positive");
    need(lambda1 >= 0 && lambda2 >= 0 && lambda3 >= 0 && lambda4 >= 0, "loss.lambda1..4 must be non-negative");
    need(lr > 0.0 && weight_decay >= 0.0, "optim.lr must be positive and optim.weight_decay non-negative");
    need(accumulation >= 1, "optim.accumulation must be >= 1");
    need(precision == "float" || precision == "double", "run.precision must be float or double");
  }

  nlohmann::json to_json() const {
    return {
        {"data", {{"T", T}, {"C", C}, {"R", R}}},
        {"episode", {{"way", way}, {"shot", shot}, {"query", query}}},
        {"model",
         {{"encoder_depth", encoder_depth},
          {"encoder_heads", encoder_heads},
          {"ff_mult", ff_mult},
          {"mfe_reduction", mfe_reduction},
          {"pg_depth", pg_depth},
          {"gamma", gamma},
          {"bidirectional", bidirectional},
          {"fusion", fusion_name(fusion)},
          {"gate_pre_encoder", gate_pre_encoder},
          {"hsmr_pre_fusion_target", hsmr_pre_fusion_target},
          {"transductive", transductive},
          {"hsmr", use_hsmr},
          {"spm", use_spm},
          {"padm", use_padm},
          {"constraint", constraint_name(constraint)}}},
        {"loss", {{"lambda1", lambda1}, {"lambda2", lambda2}, {"lambda3", lambda3}, {"lambda4", lambda4}}},
        {"optim", {{"lr", lr}, {"weight_decay", weight_decay}, {"accumulation", accumulation}}},
        {"run",
         {{"train_episodes", train_episodes},
          {"eval_episodes", eval_episodes},
          {"model_seed", model_seed},
          {"train_seed", train_seed},
          {"eval_seed", eval_seed},
          {"precision", precision}}},
    };
  }

  /// Reads any subset of keys; unknown sections or keys are rejected.
  static ModelConfig from_json(const nlohmann::json& j) { return from_json(j, ModelConfig{}); }

  static ModelConfig from_json(const nlohmann::json& j, const ModelConfig& base) {
    const nlohmann::json known = base.to_json();
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    for (const auto& [section, body] : j.items()) {
      if (!known.contains(section)) throw ConfigError("unknown config section '" + section + "'");
      if (!body.is_object()) throw ConfigError("config section '" + section + "' must be an object");
      for (const auto& [key, value] : body.items()) {
        if (!known[section].contains(key)) throw ConfigError("unknown config key '" + section + "." + key + "'");
      }
    }
    nlohmann::json merged = known;
    merged.merge_patch(j);
    ModelConfig c;
    std::string where;
    try {
      auto get = [&](const char* s, const char* k, auto& dst) {
        where = std::string(s) + "." + k;
        dst = merged.at(s).at(k).get<std::decay_t<decltype(dst)>>();
      };
      get("data", "T", c.T);
      get("data", "C", c.C);
      get("data", "R", c.R);
      get("episode", "way", c.way);
      get("episode", "shot", c.shot);
      get("episode", "query", c.query);
      get("model", "encoder_depth", c.encoder_depth);
      get("model", "encoder_heads", c.encoder_heads);
      get("model", "ff_mult", c.ff_mult);
      get("model", "mfe_reduction", c.mfe_reduction);
      get("model", "pg_depth", c.pg_depth);
      get("model", "gamma", c.gamma);
      get("model", "bidirectional", c.bidirectional);
      std::string fusion, constraint;
      get("model", "fusion", fusion);
      c.fusion = parse_fusion(fusion);
      get("model", "gate_pre_encoder", c.gate_pre_encoder);
      get("model", "hsmr_pre_fusion_target", c.hsmr_pre_fusion_target);
      get("model", "transductive", c.transductive);
      get("model", "hsmr", c.use_hsmr);
      get("model", "spm", c.use_spm);
      get("model", "padm", c.use_padm);
      get("model", "constraint", constraint);
      c.constraint = parse_constraint(constraint);
      get("loss", "lambda1", c.lambda1);
      get("loss", "lambda2", c.lambda2);
      get("loss", "lambda3", c.lambda3);
      get("loss", "lambda4", c.lambda4);
      get("optim", "lr", c.lr);
      get("optim", "weight_decay", c.weight_decay);
      get("optim", "accumulation", c.accumulation);
      get("run", "train_episodes", c.train_episodes);
      get("run", "eval_episodes", c.eval_episodes);
      get("run", "model_seed", c.model_seed);
      get("run", "train_seed", c.train_seed);
      get("run", "eval_seed", c.eval_seed);
      get("run", "precision", c.precision);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config key '" + where + "' has the wrong type: " + e.what());
    }
    c.validate();
    return c;
  }

  /// Applies "section.key=value"; value is parsed as JSON, falling back to a string.
  ModelConfig with_override(const std::string& assignment) const {
    const auto eq = assignment.find('=');
    const auto dot = assignment.find('.');
    if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
      throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
    }
    const std::string section = assignment.substr(0, dot);
    const std::string key = assignment.substr(dot + 1, eq - dot - 1);
    const std::string text = assignment.substr(eq + 1);
    nlohmann::json value = nlohmann::json::parse(text, nullptr, false);
    if (value.is_discarded()) value = text;
    return from_json({{section, {{key, value}}}}, *this);
  }

  /// FNV-1a over the architecture-defining sections.
  std::uint64_t architecture_hash() const {
    const auto j = to_json();
    const std::string text = j["data"].dump() + j["model"].dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char ch : text) {
      h ^= ch;
      h *= 1099511628211ull;
    }
    return h;
  }
};

inline ModelConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config '" + path + "' is not valid JSON");
  return ModelConfig::from_json(j);
}

}  // namespace fsar
