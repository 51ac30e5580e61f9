// Copyright 2026 The FedKLPR Simulator Authors
// SPDX-License-Identifier: Apache-2.0
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

// JSON run configuration.
//
// Every ExperimentConfig field is reachable under a fixed key path such as
// "agg.gamma_agg". Omitted keys keep their defaults; unknown keys, wrong
// types and failed validation are reported with the offending key. The
// network and data seeds are derived from the top-level "seed".

#pragma once

#include <array>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <type_traits>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "fedklpr/error.hpp"
#include "fedklpr/fed.hpp"

namespace fedklpr {

namespace config_detail {

using nlohmann::ordered_json;

template <class E>
struct EnumNames;

template <>
struct EnumNames<Activation> {
  static constexpr std::array<std::pair<Activation, std::string_view>, 2> values{
      {{Activation::kRelu, "relu"}, {Activation::kTanh, "tanh"}}};
};

template <>
struct EnumNames<AggStrategy> {
  static constexpr std::array<std::pair<AggStrategy, std::string_view>, 3> values{
      {{AggStrategy::kFedAvg, "fedavg"},
       {AggStrategy::kCosine, "cosine"},
       {AggStrategy::kKlpwa, "klpwa"}}};
};

template <>
struct EnumNames<EmptyCoordinatePolicy> {
  static constexpr std::array<std::pair<EmptyCoordinatePolicy, std::string_view>, 2>
      values{{{EmptyCoordinatePolicy::kRetain, "retain"},
              {EmptyCoordinatePolicy::kZero, "zero"}}};
};

[[noreturn]] inline void bad(const std::string& key, const std::string& what) {
  throw Error(ErrorCode::kInvalidConfig, key + ": " + what);
}

template <class T>
ordered_json to_value(const T& v) {
  if constexpr (std::is_enum_v<T>) {
    for (const auto& [e, name] : EnumNames<T>::values)
      if (e == v) return std::string(name);
    return nullptr;
  } else {
    return v;
  }
}

template <class T>
void from_value(const ordered_json& j, T& out, const std::string& key) {
  if constexpr (std::is_same_v<T, bool>) {
    if (!j.is_boolean()) bad(key, "expected true or false");
    out = j.get<bool>();
  } else if constexpr (std::is_enum_v<T>) {
    if (!j.is_string()) bad(key, "expected a string");
    const auto s = j.get<std::string>();
    for (const auto& [e, name] : EnumNames<T>::values)
      if (s == name) {
        out = e;
        return;
      }
    std::string choices;
    for (const auto& [e, name] : EnumNames<T>::values)
      choices += (choices.empty() ? "" : ", ") + std::string(name);
    bad(key, "unknown value \"" + s + "\" (expected one of " + choices + ")");
  } else if constexpr (std::is_integral_v<T>) {
    if (!j.is_number_unsigned()) bad(key, "expected a non-negative integer");
    out = j.get<T>();
  } else if constexpr (std::is_floating_point_v<T>) {
    if (!j.is_number()) bad(key, "expected a number");
    out = j.get<T>();
  } else {
    // std::vector<std::size_t>
    if (!j.is_array()) bad(key, "expected an array");
    T v;
    for (std::size_t i = 0; i < j.size(); ++i) {
      typename T::value_type x{};
      from_value(j[i], x, key + "[" + std::to_string(i) + "]");
      v.push_back(x);
    }
    out = std::move(v);
  }
}

// Calls f(section, key, field) for every configurable field; section is
// empty for top-level keys.
template <class Config, class F>
void visit_fields(Config& c, F&& f) {
  f("", "seed", c.seed);
  f("", "num_clients", c.num_clients);
  f("", "rounds", c.rounds);
  f("", "local_epochs", c.local_epochs);
  f("", "batch_size", c.batch_size);
  f("", "learning_rate", c.learning_rate);
  f("", "pruning_enabled", c.pruning_enabled);
  f("", "identical_clients", c.identical_clients);
  f("", "parallel_clients", c.parallel_clients);

  f("net", "input_dim", c.net.input_dim);
  f("net", "hidden_dims", c.net.hidden_dims);
  f("net", "embed_dim", c.net.embed_dim);
  f("net", "activation", c.net.activation);

  f("loss", "alpha", c.loss.alpha);
  f("loss", "beta", c.loss.beta);
  f("loss", "gamma_ca", c.loss.gamma_ca);
  f("loss", "delta_kl", c.loss.delta_kl);
  f("loss", "k_hard", c.loss.k_hard);
  f("loss", "tau", c.tau);
  f("loss", "memory_momentum", c.memory_momentum);

  f("dbscan", "eps", c.dbscan_eps);
  f("dbscan", "min_pts", c.dbscan_min_pts);

  f("agg", "strategy", c.agg.strategy);
  f("agg", "gamma_agg", c.agg.gamma_agg);
  f("agg", "delta_agg", c.agg.delta_agg);
  f("agg", "sas_enabled", c.agg.sas_enabled);
  f("agg", "empty_policy", c.agg.empty_policy);

  f("prune", "target_ratio", c.prune.target_ratio);
  f("prune", "per_event_cap", c.prune.per_event_cap);
  f("prune", "increment", c.prune.current_increment);
  f("prune", "min_increment", c.prune.min_increment);
  f("prune", "eval_epochs_max", c.prune.eval_epochs_max);
  f("prune", "rejects_for_saturation", c.prune.rejects_for_saturation);

  f("crr", "acc_threshold", c.crr.acc_threshold);
  f("crr", "delta_rd", c.crr.delta_rd);
  f("crr", "delta_ep", c.crr.delta_ep);
  f("crr", "window", c.crr.window);

  f("data", "input_dim", c.data.input_dim);
  f("data", "latent_dim", c.data.latent_dim);
  f("data", "identities_min", c.data.identities_min);
  f("data", "identities_max", c.data.identities_max);
  f("data", "test_identities", c.data.test_identities);
  f("data", "images_min", c.data.images_min);
  f("data", "images_max", c.data.images_max);
  f("data", "cameras_min", c.data.cameras_min);
  f("data", "cameras_max", c.data.cameras_max);
  f("data", "camera_presence", c.data.camera_presence);
  f("data", "camera_shift", c.data.camera_shift);
  f("data", "noise", c.data.noise);
  f("data", "holdout_fraction", c.data.holdout_fraction);
  f("data", "validation_batch", c.data.validation_batch);
  f("data", "single_camera", c.data.single_camera);
}

inline std::string key_path(std::string_view section, std::string_view key) {
  return section.empty() ? std::string(key)
                         : std::string(section) + "." + std::string(key);
}

}  // namespace config_detail

inline nlohmann::ordered_json config_to_json(const ExperimentConfig& cfg) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  ExperimentConfig copy = cfg;
  config_detail::visit_fields(copy, [&](std::string_view section, std::string_view key,
                                        const auto& field) {
    auto v = config_detail::to_value(field);
    if (section.empty())
      j[std::string(key)] = std::move(v);
    else
      j[std::string(section)][std::string(key)] = std::move(v);
  });
  return j;
}

// Overlays `j` on the defaults and validates the result.
inline ExperimentConfig config_from_json(const nlohmann::ordered_json& j) {
  using config_detail::bad;
  if (!j.is_object()) bad("<root>", "configuration must be a JSON object");
  ExperimentConfig cfg;

  // Reject anything the visitor does not know about.
  const nlohmann::ordered_json known = config_to_json(cfg);
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) bad(key, "unknown key");
    if (known[key].is_object()) {
      if (!value.is_object()) bad(key, "expected an object");
      for (const auto& [sub, unused] : value.items())
        if (!known[key].contains(sub)) bad(key + "." + sub, "unknown key");
    }
  }

  config_detail::visit_fields(cfg, [&](std::string_view section, std::string_view key,
                                       auto& field) {
    const nlohmann::ordered_json* node = &j;
    if (!section.empty()) {
      auto it = j.find(std::string(section));
      if (it == j.end()) return;
      node = &*it;
    }
    auto it = node->find(std::string(key));
    if (it == node->end()) return;
    config_detail::from_value(*it, field, config_detail::key_path(section, key));
  });
  cfg.validate();
  return cfg;
}

inline ExperimentConfig parse_config(std::string_view text) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw Error(ErrorCode::kInvalidConfig, std::string("config is not valid JSON: ") + e.what());
  }
  return config_from_json(j);
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIo, "cannot open config file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const Error& e) {
    throw Error(e.code(), path + ": " + e.detail());
  }
}

inline std::string default_config_text() {
  return config_to_json(ExperimentConfig{}).dump(2) + "\n";
}

// Parses a FEDKLPR_SEED style value: a full 64-bit unsigned decimal.
inline std::uint64_t parse_seed(std::string_view text) {
  std::uint64_t v = 0;
  const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (text.empty() || ec != std::errc{} || end != text.data() + text.size())
    throw Error(ErrorCode::kInvalidConfig,
                "FEDKLPR_SEED must be an unsigned 64-bit decimal integer");
  return v;
}

}  // namespace fedklpr
