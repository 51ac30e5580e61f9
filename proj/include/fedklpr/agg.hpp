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

// Server-side aggregation.
//
// Client weights come from one of three strategies:
//   fedavg  - n_k / sum n
//   cosine  - proportional to the cosine distance between a client's mean
//             validation embedding before and after local training
//   klpwa   - gamma * KL-based weight + delta * squared-pruning-ratio weight
//
// The weighted models are then combined either densely or with sparse
// activation skipping (SAS): each coordinate is averaged only over the
// clients whose mask keeps it, renormalised by their total weight.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedklpr/error.hpp"
#include "fedklpr/losses.hpp"
#include "fedklpr/matrix.hpp"
#include "fedklpr/nnet.hpp"
#include "fedklpr/params.hpp"

namespace fedklpr {

// One client's upload for a round.
struct ClientReport {
  std::uint16_t client_id = 0;
  std::uint16_t round = 0;
  ParamVector model;  // dense layout; pruned coordinates hold 0
  PruneMask mask;
  float pruning_ratio = 0.0f;
  float klaw_raw = 0.0f;
  std::uint64_t dataset_size = 0;  // not carried on the wire

  bool operator==(const ClientReport&) const = default;
};

enum class AggStrategy { kFedAvg, kCosine, kKlpwa };

// What SAS writes where no client keeps a coordinate.
enum class EmptyCoordinatePolicy { kRetain, kZero };

struct AggConfig {
  double gamma_agg = 0.5;
  double delta_agg = 0.5;
  AggStrategy strategy = AggStrategy::kKlpwa;
  bool sas_enabled = true;
  EmptyCoordinatePolicy empty_policy = EmptyCoordinatePolicy::kRetain;

  void validate() const {
    if (!(gamma_agg >= 0.0) || !(delta_agg >= 0.0) ||
        std::fabs(gamma_agg + delta_agg - 1.0) > 1e-9)
      throw Error(ErrorCode::kInvalidConfig,
                  "agg.gamma_agg + agg.delta_agg must equal 1 (got " +
                      std::to_string(gamma_agg) + " + " +
                      std::to_string(delta_agg) + ")");
  }
};

inline constexpr double kWeightFallbackThreshold = 1e-12;

namespace detail {

inline std::vector<double> normalize_or_uniform(std::vector<double> raw,
                                                const char* where) {
  if (raw.empty())
    throw Error(ErrorCode::kEmptyInput, std::string(where) + ": no clients");
  double sum = 0.0;
  for (double v : raw) {
    if (!(v >= 0.0) || !std::isfinite(v))
      throw Error(ErrorCode::kInvalidParameter,
                  std::string(where) + ": raw weights must be finite and >= 0");
    sum += v;
  }
  if (sum < kWeightFallbackThreshold) {
    std::fill(raw.begin(), raw.end(), 1.0 / static_cast<double>(raw.size()));
    return raw;
  }
  for (auto& v : raw) v /= sum;
  return raw;
}

inline void check_weight_sum(std::span<const double> w, const char* where) {
  double sum = 0.0;
  for (double v : w) sum += v;
  if (std::fabs(sum - 1.0) > 1e-6)
    throw Error(ErrorCode::kInvalidParameter,
                std::string(where) + ": weights do not sum to 1");
}

}  // namespace detail

inline std::vector<double> feature_distribution(const ParamVector& model,
                                                const NetConfig& cfg,
                                                const Matrix& batch) {
  return feature_distribution(forward(model, cfg, batch));
}

// f_k^t = KL(dist(new) || dist(prev)) on the client's frozen validation batch.
inline double klaw_raw(const ParamVector& prev_model, const ParamVector& new_model,
                       const NetConfig& cfg, const Matrix& batch) {
  require_same_structure(prev_model, new_model, "klaw_raw");
  return kl_divergence(feature_distribution(new_model, cfg, batch),
                       feature_distribution(prev_model, cfg, batch));
}

inline std::vector<double> klaw_weights(std::vector<double> raw) {
  return detail::normalize_or_uniform(std::move(raw), "klaw_weights");
}

inline std::vector<double> praw_weights(const std::vector<double>& ratios) {
  std::vector<double> sq;
  sq.reserve(ratios.size());
  for (double p : ratios) {
    if (!(p >= 0.0 && p <= 1.0))
      throw Error(ErrorCode::kInvalidParameter,
                  "praw_weights: pruning ratio outside [0, 1]");
    sq.push_back(p * p);
  }
  return detail::normalize_or_uniform(std::move(sq), "praw_weights");
}

inline std::vector<double> klpwa_client_weights(const std::vector<double>& klaw,
                                                const std::vector<double>& praw,
                                                const AggConfig& cfg) {
  cfg.validate();
  if (klaw.size() != praw.size())
    throw Error(ErrorCode::kStructuralMismatch,
                "klpwa_client_weights: weight lists differ in length");
  if (klaw.empty())
    throw Error(ErrorCode::kEmptyInput, "klpwa_client_weights: no clients");
  std::vector<double> a(klaw.size());
  for (std::size_t k = 0; k < a.size(); ++k)
    a[k] = cfg.gamma_agg * klaw[k] + cfg.delta_agg * praw[k];
  return a;
}

// Simplified cosine-distance baseline over per-client mean embeddings.
inline std::vector<double> cosine_weights(
    const std::vector<std::vector<double>>& prev,
    const std::vector<std::vector<double>>& next) {
  if (prev.size() != next.size())
    throw Error(ErrorCode::kStructuralMismatch,
                "cosine_weights: feature lists differ in length");
  std::vector<double> dist;
  for (std::size_t k = 0; k < prev.size(); ++k) {
    if (prev[k].size() != next[k].size())
      throw Error(ErrorCode::kStructuralMismatch,
                  "cosine_weights: feature dimensions differ");
    const double denom = l2_norm(prev[k]) * l2_norm(next[k]);
    const double cos = denom > 0.0 ? dot(prev[k], next[k]) / denom : 1.0;
    dist.push_back(std::max(0.0, 1.0 - cos));
  }
  return detail::normalize_or_uniform(std::move(dist), "cosine_weights");
}

namespace detail {
inline void check_reports(const std::vector<ClientReport>& reports,
                          const char* where) {
  if (reports.empty())
    throw Error(ErrorCode::kEmptyInput, std::string(where) + ": no reports");
  for (const auto& r : reports) {
    require_same_structure(reports.front().model, r.model, where);
    require_same_structure(r.model, r.mask, where);
  }
}
}  // namespace detail

// Per coordinate: weighted mean over the clients whose mask keeps it,
// renormalised by their summed weight. Coordinates nobody keeps (or whose
// keepers all carry zero weight) follow the empty-coordinate policy.
inline ParamVector sas_aggregate(
    const std::vector<ClientReport>& reports, std::span<const double> weights,
    const ParamVector& prev_global,
    EmptyCoordinatePolicy policy = EmptyCoordinatePolicy::kRetain) {
  detail::check_reports(reports, "sas_aggregate");
  require_same_structure(reports.front().model, prev_global, "sas_aggregate");
  if (weights.size() != reports.size())
    throw Error(ErrorCode::kStructuralMismatch,
                "sas_aggregate: one weight per report required");
  detail::check_weight_sum(weights, "sas_aggregate");

  ParamVector out = prev_global;
  std::vector<double> num, den;
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    auto& dst = out.layers[li].values;
    num.assign(dst.size(), 0.0);
    den.assign(dst.size(), 0.0);
    for (std::size_t k = 0; k < reports.size(); ++k) {
      const auto& v = reports[k].model.layers[li].values;
      const auto& bits = reports[k].mask.layers[li].bits;
      const double a = weights[k];
      for (std::size_t j = 0; j < dst.size(); ++j) {
        if (!bits[j]) continue;
        num[j] += a * v[j];
        den[j] += a;
      }
    }
    for (std::size_t j = 0; j < dst.size(); ++j) {
      if (den[j] > 0.0)
        dst[j] = static_cast<float>(num[j] / den[j]);
      else if (policy == EmptyCoordinatePolicy::kZero)
        dst[j] = 0.0f;
    }
  }
  return out;
}

// Dense weighted average without masks.
inline ParamVector dense_aggregate(const std::vector<ClientReport>& reports,
                                   std::span<const double> weights) {
  detail::check_reports(reports, "dense_aggregate");
  if (weights.size() != reports.size())
    throw Error(ErrorCode::kStructuralMismatch,
                "dense_aggregate: one weight per report required");
  std::vector<WeightedParams> terms;
  for (std::size_t k = 0; k < reports.size(); ++k)
    terms.push_back({weights[k], &reports[k].model});
  return linear_combine(terms);
}

inline std::vector<double> fedavg_weights(const std::vector<ClientReport>& reports) {
  std::vector<double> n;
  for (const auto& r : reports) {
    if (r.dataset_size == 0)
      throw Error(ErrorCode::kInvalidParameter,
                  "fedavg: report without a dataset size");
    n.push_back(static_cast<double>(r.dataset_size));
  }
  return detail::normalize_or_uniform(std::move(n), "fedavg_weights");
}

inline ParamVector fedavg_aggregate(const std::vector<ClientReport>& reports) {
  detail::check_reports(reports, "fedavg_aggregate");
  return dense_aggregate(reports, fedavg_weights(reports));
}

}  // namespace fedklpr
