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

// Random instance generators and small helpers shared by the test suites.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedklpr.hpp"

namespace fedklpr::testing {

using Rng = std::mt19937_64;

inline double uniform(Rng& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

inline std::size_t pick(Rng& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

// A few layers of random shape; rank-2 layers are prunable, rank-1 not.
inline ParamVector random_params(Rng& rng, std::size_t max_layers = 4,
                                 std::size_t max_dim = 12) {
  ParamVector p;
  const std::size_t layers = pick(rng, 1, max_layers);
  for (std::size_t l = 0; l < layers; ++l) {
    const bool matrix = l % 2 == 0;
    Shape shape{static_cast<std::uint32_t>(pick(rng, 1, max_dim))};
    if (matrix) shape.push_back(static_cast<std::uint32_t>(pick(rng, 1, max_dim)));
    auto& layer = p.add_layer("layer" + std::to_string(l) + (matrix ? ".weight" : ".bias"),
                              shape, matrix);
    for (auto& v : layer.values) v = static_cast<float>(uniform(rng, -2.0, 2.0));
  }
  return p;
}

inline ParamVector random_like(Rng& rng, const ParamVector& structure) {
  ParamVector p = structure;
  for (auto& l : p.layers)
    for (auto& v : l.values) v = static_cast<float>(uniform(rng, -2.0, 2.0));
  return p;
}

// Random mask with the given keep probability on prunable layers.
inline PruneMask random_mask(Rng& rng, const ParamVector& p, double keep) {
  PruneMask m = full_mask(p);
  std::bernoulli_distribution kept(keep);
  for (auto& l : m.layers)
    if (l.prunable)
      for (auto& b : l.bits) b = kept(rng) ? 1 : 0;
  return m;
}

inline std::vector<double> random_simplex(Rng& rng, std::size_t n) {
  std::vector<double> w(n);
  double sum = 0.0;
  for (auto& v : w) sum += (v = uniform(rng, 0.01, 1.0));
  for (auto& v : w) v /= sum;
  return w;
}

inline Matrix random_matrix(Rng& rng, std::size_t rows, std::size_t cols,
                            double scale = 1.0) {
  Matrix m(rows, cols);
  std::normal_distribution<double> g(0.0, scale);
  for (auto& v : m.data()) v = g(rng);
  return m;
}

inline Matrix random_unit_rows(Rng& rng, std::size_t rows, std::size_t cols) {
  Matrix m = random_matrix(rng, rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto row = m.row(r);
    const double n = l2_norm(row);
    for (auto& v : row) v /= n;
  }
  return m;
}

// ||a - b|| / max(||a||, ||b||, floor).
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b,
                             double floor = 1e-12) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nb), floor});
}

// Reports with random models over `structure`; keep = 1 gives all-ones masks.
inline std::vector<ClientReport> reports_for(Rng& rng, const ParamVector& structure, std::size_t k,
                                      double keep) {
  std::vector<ClientReport> out;
  for (std::size_t i = 0; i < k; ++i) {
    ClientReport r;
    r.client_id = static_cast<std::uint16_t>(i);
    r.mask = keep >= 1.0 ? full_mask(structure) : random_mask(rng, structure, keep);
    r.model = apply_mask(random_like(rng, structure), r.mask);
    r.pruning_ratio = static_cast<float>(pruning_ratio(r.mask));
    r.dataset_size = pick(rng, 1, 100);
    out.push_back(std::move(r));
  }
  return out;
}

// Random sparse report with a consistent header ratio.
inline ClientReport random_report(Rng& rng) {
  ClientReport r;
  r.client_id = static_cast<std::uint16_t>(pick(rng, 0, 0xFFFF));
  r.round = static_cast<std::uint16_t>(pick(rng, 0, 0xFFFF));
  const ParamVector p = random_params(rng, 6, 20);
  r.mask = random_mask(rng, p, uniform(rng, 0.0, 1.0));
  r.model = apply_mask(p, r.mask);
  r.pruning_ratio = static_cast<float>(pruning_ratio(r.mask));
  r.klaw_raw = static_cast<float>(uniform(rng, 0.0, 3.0));
  return r;
}

// Gaussian blobs plus uniform clutter, the usual DBSCAN stress shape.
inline Matrix blobs(Rng& rng, std::size_t n, std::size_t dim) {
  Matrix x(n, dim);
  const std::size_t centers = pick(rng, 1, 4);
  std::vector<std::vector<double>> c(centers, std::vector<double>(dim));
  for (auto& v : c)
    for (auto& e : v) e = uniform(rng, -3, 3);
  std::normal_distribution<double> g(0.0, 0.35);
  for (std::size_t i = 0; i < n; ++i) {
    const bool clutter = uniform(rng, 0, 1) < 0.2;
    const auto& center = c[i % centers];
    for (std::size_t d = 0; d < dim; ++d)
      x(i, d) = clutter ? uniform(rng, -4, 4) : center[d] + g(rng);
  }
  return x;
}

// Retrieval instance with coarse embeddings so similarity ties are common.
struct RetrievalInstance {
  Matrix emb;
  std::vector<int> ids, cams;
  std::vector<char> is_query;
};

inline RetrievalInstance random_retrieval(Rng& rng) {
  RetrievalInstance r;
  const std::size_t queries = pick(rng, 1, 50);
  const std::size_t gallery = pick(rng, 1, 200);
  const int num_ids = static_cast<int>(pick(rng, 1, 15));
  const int num_cams = static_cast<int>(pick(rng, 1, 4));
  const std::size_t dim = pick(rng, 1, 4);
  // Low-resolution embeddings make exact similarity ties common.
  r.emb = Matrix(queries + gallery, dim);
  for (auto& v : r.emb.data()) v = static_cast<double>(pick(rng, 0, 4)) - 2.0;
  for (std::size_t i = 0; i < queries + gallery; ++i) {
    r.ids.push_back(static_cast<int>(pick(rng, 0, static_cast<std::size_t>(num_ids - 1))));
    r.cams.push_back(static_cast<int>(pick(rng, 0, static_cast<std::size_t>(num_cams - 1))));
    r.is_query.push_back(i < queries ? 1 : 0);
  }
  std::shuffle(r.is_query.begin(), r.is_query.end(), rng);
  return r;
}

// Fast, still realistic experiment settings for tests.
inline ExperimentConfig small_experiment() {
  ExperimentConfig cfg;
  cfg.num_clients = 3;
  cfg.rounds = 3;
  cfg.local_epochs = 1;
  cfg.data.identities_min = 10;
  cfg.data.identities_max = 14;
  cfg.data.test_identities = 6;
  cfg.data.cameras_max = 3;
  cfg.net.hidden_dims = {24};
  cfg.net.embed_dim = 8;
  return cfg;
}

}  // namespace fedklpr::testing
