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

// Named-layer flat parameter storage and aligned binary masks.
//
// A ParamVector is the unit every other module exchanges: the network reads
// its weights from one, the optimizer updates one, the pruner masks one and
// the server aggregates a list of them. Values are stored as 32-bit floats;
// anything that sums over many terms accumulates in double.

#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "fedklpr/error.hpp"

namespace fedklpr {

using Shape = std::vector<std::uint32_t>;

inline std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

struct ParamLayer {
  std::string name;
  Shape shape;
  std::vector<float> values;
  bool prunable = false;

  std::size_t size() const { return values.size(); }
  bool operator==(const ParamLayer&) const = default;
};

struct ParamVector {
  std::vector<ParamLayer> layers;

  std::size_t total_size() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.size();
    return n;
  }

  std::size_t prunable_size() const {
    std::size_t n = 0;
    for (const auto& l : layers)
      if (l.prunable) n += l.size();
    return n;
  }

  // Appends a zero-initialised layer and returns it.
  ParamLayer& add_layer(std::string name, Shape shape, bool prunable) {
    ParamLayer layer{std::move(name), std::move(shape), {}, prunable};
    layer.values.assign(shape_size(layer.shape), 0.0f);
    layers.push_back(std::move(layer));
    return layers.back();
  }

  bool operator==(const ParamVector&) const = default;
};

struct MaskLayer {
  std::string name;
  std::vector<std::uint8_t> bits;  // 1 = kept, 0 = pruned
  bool prunable = false;

  bool operator==(const MaskLayer&) const = default;
};

struct PruneMask {
  std::vector<MaskLayer> layers;

  bool operator==(const PruneMask&) const = default;
};

// -- structural checks -------------------------------------------------------

inline bool same_structure(const ParamVector& a, const ParamVector& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& la = a.layers[i];
    const auto& lb = b.layers[i];
    if (la.name != lb.name || la.shape != lb.shape ||
        la.values.size() != lb.values.size() || la.prunable != lb.prunable)
      return false;
  }
  return true;
}

inline bool same_structure(const ParamVector& p, const PruneMask& m) {
  if (p.layers.size() != m.layers.size()) return false;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    if (p.layers[i].name != m.layers[i].name ||
        p.layers[i].values.size() != m.layers[i].bits.size() ||
        p.layers[i].prunable != m.layers[i].prunable)
      return false;
  }
  return true;
}

template <typename A, typename B>
void require_same_structure(const A& a, const B& b, const char* where) {
  if (!same_structure(a, b))
    throw Error(ErrorCode::kStructuralMismatch,
                std::string(where) + ": operands differ in layer structure");
}

// -- construction ------------------------------------------------------------

inline ParamVector zeros_like(const ParamVector& p) {
  ParamVector out = p;
  for (auto& l : out.layers) std::fill(l.values.begin(), l.values.end(), 0.0f);
  return out;
}

// All-ones mask aligned with p.
inline PruneMask full_mask(const ParamVector& p) {
  PruneMask m;
  m.layers.reserve(p.layers.size());
  for (const auto& l : p.layers)
    m.layers.push_back({l.name, std::vector<std::uint8_t>(l.size(), 1),
                        l.prunable});
  return m;
}

// -- operations --------------------------------------------------------------

inline ParamVector apply_mask(ParamVector p, const PruneMask& m) {
  require_same_structure(p, m, "apply_mask");
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    auto& values = p.layers[i].values;
    const auto& bits = m.layers[i].bits;
    for (std::size_t j = 0; j < values.size(); ++j)
      if (!bits[j]) values[j] = 0.0f;
  }
  return p;
}

inline std::size_t prunable_count(const PruneMask& m) {
  std::size_t n = 0;
  for (const auto& l : m.layers)
    if (l.prunable) n += l.bits.size();
  return n;
}

inline std::size_t pruned_count(const PruneMask& m) {
  std::size_t n = 0;
  for (const auto& l : m.layers) {
    if (!l.prunable) continue;
    for (auto b : l.bits) n += (b == 0);
  }
  return n;
}

inline double pruning_ratio(const PruneMask& m) {
  const std::size_t total = prunable_count(m);
  if (total == 0)
    throw Error(ErrorCode::kDegenerateModel,
                "pruning_ratio: mask has no prunable coordinates");
  return static_cast<double>(pruned_count(m)) / static_cast<double>(total);
}

struct WeightedParams {
  double weight;
  const ParamVector* params;
};

// Coordinatewise sum of weight_i * p_i, accumulated in double.
inline ParamVector linear_combine(const std::vector<WeightedParams>& terms) {
  if (terms.empty())
    throw Error(ErrorCode::kEmptyInput, "linear_combine: no terms");
  const ParamVector& first = *terms.front().params;
  for (const auto& t : terms)
    require_same_structure(first, *t.params, "linear_combine");

  ParamVector out = first;
  std::vector<double> acc;
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    acc.assign(out.layers[li].size(), 0.0);
    for (const auto& t : terms) {
      const auto& v = t.params->layers[li].values;
      for (std::size_t j = 0; j < v.size(); ++j) acc[j] += t.weight * v[j];
    }
    auto& dst = out.layers[li].values;
    for (std::size_t j = 0; j < dst.size(); ++j)
      dst[j] = static_cast<float>(acc[j]);
  }
  return out;
}

// FNV-1a over the raw value bytes; used as a cheap model fingerprint in logs.
inline std::uint64_t checksum(const ParamVector& p) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const auto& l : p.layers) {
    mix(l.name.data(), l.name.size());
    mix(l.values.data(), l.values.size() * sizeof(float));
  }
  return h;
}

}  // namespace fedklpr
