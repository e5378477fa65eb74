#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <nlohmann/json.hpp>

#include "mgn/model.hpp"

namespace mgn {

struct LossWeights {
  double alpha_g = 0.01;
  double alpha_l = 0.05;
};

struct TrainConfig {
  int batch_size = 8;
  int crop = 64;
  double lr0 = 5e-4;
  int total_steps = 2000;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  // Synthetic data.
  int train_pairs = 200;
  int val_pairs = 32;
  int image_size = 64;
  int val_every = 250;
  // 0 disables clipping.
  double clip_grad_norm = 0.0;

  void validate() const {
    if (batch_size < 1) throw ConfigError("batch_size must be at least 1");
    if (total_steps < 1) throw ConfigError("total_steps must be at least 1");
    if (crop < 8 || crop % 4 != 0) throw ConfigError("crop must be at least 8 and divisible by 4, got " + std::to_string(crop));
    if (image_size < crop) throw ConfigError("image_size must be at least crop");
    if (image_size % 4 != 0) throw ConfigError("image_size must be divisible by 4");
    if (train_pairs < 1) throw ConfigError("train_pairs must be at least 1");
    if (val_pairs < 1) throw ConfigError("val_pairs must be at least 1");
    if (val_every < 1) throw ConfigError("val_every must be at least 1");
    if (!(lr0 >= 0.0)) throw ConfigError("lr0 must be non-negative");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("adam betas must lie in [0, 1)");
    if (!(adam_eps > 0.0)) throw ConfigError("adam_eps must be positive");
    if (!(clip_grad_norm >= 0.0)) throw ConfigError("clip_grad_norm must be non-negative");
  }
};

/// Everything one JSON config file describes.
struct RunConfig {
  ModelConfig model;
  TrainConfig train;
  LossWeights loss;
  std::optional<std::size_t> expected_params;

  void validate() const {
    model.validate();
    train.validate();
    if (!(loss.alpha_g >= 0.0) || !(loss.alpha_l >= 0.0)) throw ConfigError("loss weights must be non-negative");
  }
};

namespace detail {

template <class V>
void read_key(const nlohmann::json& j, const char* key, V& out) {
  const auto& v = j.at(key);
  auto bad = [&](const char* want) {
    return ConfigError(std::string("config key '") + key + "' must be " + want + ", got " + v.dump());
  };
  if constexpr (std::is_same_v<V, bool>) {
    if (!v.is_boolean()) throw bad("a boolean");
    out = v.get<bool>();
  } else if constexpr (std::is_integral_v<V>) {
    if (!v.is_number_integer()) throw bad("an integer");
    if constexpr (std::is_unsigned_v<V>) {
      if (v.is_number_unsigned() || v.get<std::int64_t>() >= 0) {
        out = v.get<V>();
      } else {
        throw bad("a non-negative integer");
      }
    } else {
      out = v.get<V>();
    }
  } else if constexpr (std::is_floating_point_v<V>) {
    if (!v.is_number()) throw bad("a number");
    out = v.get<V>();
  } else {
    if (!v.is_string()) throw bad("a string");
    out = v.get<std::string>();
  }
}

}  // namespace detail

inline RunConfig config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  RunConfig c;
  auto& m = c.model;
  auto& t = c.train;
  for (const auto& [key, value] : j.items()) {
    const char* k = key.c_str();
    if (key == "base_channels") detail::read_key(j, k, m.base_channels);
    else if (key == "token_grid") detail::read_key(j, k, m.token_grid);
    else if (key == "stages") detail::read_key(j, k, m.stages);
    else if (key == "partitions") detail::read_key(j, k, m.partitions);
    else if (key == "eps") detail::read_key(j, k, m.eps);
    else if (key == "fusion_mode") {
      std::string s;
      detail::read_key(j, k, s);
      m.fusion_mode = parse_fusion_mode(s);
    } else if (key == "residual_mode") {
      std::string s;
      detail::read_key(j, k, s);
      m.residual_mode = parse_residual_mode(s);
    } else if (key == "block_mask") {
      if (!value.is_array() || value.size() != kStages) throw ConfigError("block_mask must be an array of 5 booleans");
      for (std::size_t i = 0; i < kStages; ++i) {
        if (!value[i].is_boolean()) throw ConfigError("block_mask must be an array of 5 booleans");
        m.block_mask[i] = value[i].get<bool>();
      }
    }
    else if (key == "aux_supervision") detail::read_key(j, k, m.aux_supervision);
    else if (key == "vit_dim") detail::read_key(j, k, m.vit_dim);
    else if (key == "vit_heads") detail::read_key(j, k, m.vit_heads);
    else if (key == "vit_mlp_ratio") detail::read_key(j, k, m.vit_mlp_ratio);
    else if (key == "rcab_reduction") detail::read_key(j, k, m.rcab_reduction);
    else if (key == "batch_size") detail::read_key(j, k, t.batch_size);
    else if (key == "crop") detail::read_key(j, k, t.crop);
    else if (key == "lr0") detail::read_key(j, k, t.lr0);
    else if (key == "total_steps") detail::read_key(j, k, t.total_steps);
    else if (key == "beta1") detail::read_key(j, k, t.beta1);
    else if (key == "beta2") detail::read_key(j, k, t.beta2);
    else if (key == "adam_eps") detail::read_key(j, k, t.adam_eps);
    else if (key == "seed") detail::read_key(j, k, t.seed);
    else if (key == "train_pairs") detail::read_key(j, k, t.train_pairs);
    else if (key == "val_pairs") detail::read_key(j, k, t.val_pairs);
    else if (key == "image_size") detail::read_key(j, k, t.image_size);
    else if (key == "val_every") detail::read_key(j, k, t.val_every);
    else if (key == "clip_grad_norm") detail::read_key(j, k, t.clip_grad_norm);
    else if (key == "alpha_g") detail::read_key(j, k, c.loss.alpha_g);
    else if (key == "alpha_l") detail::read_key(j, k, c.loss.alpha_l);
    else if (key == "expected_params") {
      std::size_t n = 0;
      detail::read_key(j, k, n);
      c.expected_params = n;
    } else {
      throw ConfigError("unknown config key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

/// Every field spelled out, keys sorted; the form stored in checkpoints.
inline nlohmann::json config_to_json(const RunConfig& c) {
  const auto& m = c.model;
  const auto& t = c.train;
  nlohmann::json j;
  j["base_channels"] = m.base_channels;
  j["token_grid"] = m.token_grid;
  j["stages"] = m.stages;
  j["partitions"] = m.partitions;
  j["eps"] = m.eps;
  j["fusion_mode"] = to_string(m.fusion_mode);
  j["residual_mode"] = to_string(m.residual_mode);
  j["block_mask"] = nlohmann::json::array();
  for (bool b : m.block_mask) j["block_mask"].push_back(b);
  j["aux_supervision"] = m.aux_supervision;
  j["vit_dim"] = m.vit_dim;
  j["vit_heads"] = m.vit_heads;
  j["vit_mlp_ratio"] = m.vit_mlp_ratio;
  j["rcab_reduction"] = m.rcab_reduction;
  j["batch_size"] = t.batch_size;
  j["crop"] = t.crop;
  j["lr0"] = t.lr0;
  j["total_steps"] = t.total_steps;
  j["beta1"] = t.beta1;
  j["beta2"] = t.beta2;
  j["adam_eps"] = t.adam_eps;
  j["seed"] = t.seed;
  j["train_pairs"] = t.train_pairs;
  j["val_pairs"] = t.val_pairs;
  j["image_size"] = t.image_size;
  j["val_every"] = t.val_every;
  j["clip_grad_norm"] = t.clip_grad_norm;
  j["alpha_g"] = c.loss.alpha_g;
  j["alpha_l"] = c.loss.alpha_l;
  if (c.expected_params) j["expected_params"] = *c.expected_params;
  return j;
}

inline RunConfig parse_config(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

/// Throws when the config pins a parameter count the built model misses.
inline void check_expected_params(const RunConfig& c, std::size_t actual) {
  if (c.expected_params && *c.expected_params != actual)
    throw ConfigError("expected_params is " + std::to_string(*c.expected_params) + " but the model has " +
                      std::to_string(actual));
}

}  // namespace mgn
