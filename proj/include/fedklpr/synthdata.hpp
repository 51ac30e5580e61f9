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

// Synthetic non-IID re-identification data and retrieval metrics.
//
// Every client owns a disjoint set of identities. An identity is a latent
// Gaussian vector; an image of it under camera c of client k is
//
//   x = (B + s * R_kc) z + s * o_kc + noise * eps
//
// where B is a projection shared by all clients, R_kc / o_kc are the
// camera's private affine distortion (feature skew of magnitude s) and eps
// is isotropic Gaussian noise. Clients differ in identity count (quantity
// skew), camera count and which identities each camera sees (label skew).

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <utility>
#include <vector>

#include "fedklpr/error.hpp"
#include "fedklpr/matrix.hpp"

namespace fedklpr {

struct SkewSpec {
  std::size_t input_dim = 32;
  std::size_t latent_dim = 8;
  std::size_t identities_min = 24;  // training identities per client
  std::size_t identities_max = 48;
  std::size_t test_identities = 12;
  std::size_t images_min = 2;       // per identity per camera
  std::size_t images_max = 4;
  std::size_t cameras_min = 2;
  std::size_t cameras_max = 6;
  double camera_presence = 0.8;     // chance an identity is seen by a camera
  double camera_shift = 0.3;
  double noise = 0.2;
  double holdout_fraction = 0.1;
  std::size_t validation_batch = 32;
  bool single_camera = false;
  std::uint64_t seed = 7;

  void validate() const {
    auto fail = [](const char* what) {
      throw Error(ErrorCode::kInvalidConfig, what);
    };
    if (input_dim == 0 || latent_dim == 0) fail("data dims must be positive");
    if (identities_min == 0 || identities_max < identities_min)
      fail("data.identities_min must be >= 1 and <= identities_max");
    if (test_identities == 0) fail("data.test_identities must be >= 1");
    if (images_min == 0 || images_max < images_min)
      fail("data.images_min must be >= 1 and <= images_max");
    if (!single_camera && (cameras_min < 2 || cameras_max < cameras_min))
      fail("data.cameras_min must be >= 2 and <= cameras_max");
    if (!(camera_presence > 0.0 && camera_presence <= 1.0))
      fail("data.camera_presence must be in (0, 1]");
    if (!(camera_shift >= 0.0) || !(noise >= 0.0))
      fail("data.camera_shift and data.noise must be >= 0");
    if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
      fail("data.holdout_fraction must be in (0, 1)");
    if (validation_batch == 0) fail("data.validation_batch must be >= 1");
  }
};

// Labelled samples; is_query marks the query side of a retrieval split.
struct SampleSet {
  Matrix x;
  std::vector<int> identity;
  std::vector<int> camera;
  std::vector<char> is_query;

  std::size_t size() const { return identity.size(); }
};

struct ClientDataset {
  int client_id = 0;
  std::size_t num_cameras = 0;
  SampleSet train;    // training pool; its labels are never read by training
  SampleSet holdout;  // local held-out split driving the pruning gate
  SampleSet test;     // disjoint identities for reported metrics
  std::vector<std::size_t> validation_rows;  // frozen rows of train.x
};

namespace detail {

inline std::mt19937_64 stream(std::uint64_t seed, std::uint64_t a,
                              std::uint64_t b = 0) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed),
                    static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(a), static_cast<std::uint32_t>(b)};
  return std::mt19937_64(seq);
}

struct CameraModel {
  Matrix transform;  // input_dim x latent_dim
  std::vector<double> offset;
};

inline void append_identity(SampleSet& set, std::vector<std::vector<double>>& rows,
                            int identity, const std::vector<double>& latent,
                            const std::vector<CameraModel>& cams,
                            const std::vector<char>& seen, const SkewSpec& spec,
                            std::mt19937_64& rng) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> count(spec.images_min, spec.images_max);
  for (std::size_t c = 0; c < cams.size(); ++c) {
    if (!seen[c]) continue;
    const std::size_t n = count(rng);
    for (std::size_t k = 0; k < n; ++k) {
      std::vector<double> x(spec.input_dim);
      for (std::size_t r = 0; r < spec.input_dim; ++r) {
        double v = cams[c].offset[r];
        for (std::size_t l = 0; l < spec.latent_dim; ++l)
          v += cams[c].transform(r, l) * latent[l];
        x[r] = v + spec.noise * gauss(rng);
      }
      rows.push_back(std::move(x));
      set.identity.push_back(identity);
      set.camera.push_back(static_cast<int>(c));
      set.is_query.push_back(k == 0 ? 1 : 0);
    }
  }
}

inline void finish(SampleSet& set, std::vector<std::vector<double>>& rows,
                   std::size_t dim) {
  set.x = Matrix(rows.size(), dim);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy(rows[i].begin(), rows[i].end(), set.x.row(i).begin());
}

}  // namespace detail

inline std::vector<ClientDataset> generate_clients(const SkewSpec& spec,
                                                   std::size_t num_clients) {
  spec.validate();
  if (num_clients == 0)
    throw Error(ErrorCode::kInvalidParameter, "generate_clients: zero clients");

  std::normal_distribution<double> gauss(0.0, 1.0);
  auto shared = detail::stream(spec.seed, 0xB0);
  Matrix base(spec.input_dim, spec.latent_dim);
  const double base_scale = 1.0 / std::sqrt(static_cast<double>(spec.latent_dim));
  for (auto& v : base.data()) v = base_scale * gauss(shared);

  std::vector<ClientDataset> clients;
  for (std::size_t k = 0; k < num_clients; ++k) {
    auto rng = detail::stream(spec.seed, 0xC1, k);
    ClientDataset ds;
    ds.client_id = static_cast<int>(k);
    ds.num_cameras = spec.single_camera
                         ? 1
                         : std::uniform_int_distribution<std::size_t>(
                               spec.cameras_min, spec.cameras_max)(rng);
    std::vector<detail::CameraModel> cams(ds.num_cameras);
    for (auto& cam : cams) {
      cam.transform = base;
      for (auto& v : cam.transform.data())
        v += spec.camera_shift * base_scale * gauss(rng);
      cam.offset.resize(spec.input_dim);
      for (auto& v : cam.offset) v = spec.camera_shift * gauss(rng);
    }

    const std::size_t train_ids = std::uniform_int_distribution<std::size_t>(
        spec.identities_min, spec.identities_max)(rng);
    const std::size_t holdout_ids = std::max<std::size_t>(
        2, static_cast<std::size_t>(std::lround(spec.holdout_fraction *
                                                static_cast<double>(train_ids))));
    const std::size_t total_ids = train_ids + holdout_ids + spec.test_identities;

    std::vector<std::vector<double>> train_rows, holdout_rows, test_rows;
    std::bernoulli_distribution present(spec.camera_presence);
    for (std::size_t id = 0; id < total_ids; ++id) {
      std::vector<double> latent(spec.latent_dim);
      for (auto& v : latent) v = gauss(rng);
      std::vector<char> seen(ds.num_cameras);
      std::size_t num_seen = 0;
      for (auto& s : seen) num_seen += (s = present(rng) ? 1 : 0);
      // Every identity is visible to at least two cameras when two exist.
      const std::size_t need = std::min<std::size_t>(2, ds.num_cameras);
      std::uniform_int_distribution<std::size_t> any_camera(0, ds.num_cameras - 1);
      while (num_seen < need) {
        const std::size_t pick = any_camera(rng);
        if (!seen[pick]) {
          seen[pick] = 1;
          ++num_seen;
        }
      }
      // Identity ids are globally unique: no two clients share one.
      const int gid = static_cast<int>(k * 100000 + id);
      if (id < train_ids)
        detail::append_identity(ds.train, train_rows, gid, latent, cams, seen, spec, rng);
      else if (id < train_ids + holdout_ids)
        detail::append_identity(ds.holdout, holdout_rows, gid, latent, cams, seen, spec, rng);
      else
        detail::append_identity(ds.test, test_rows, gid, latent, cams, seen, spec, rng);
    }
    detail::finish(ds.train, train_rows, spec.input_dim);
    detail::finish(ds.holdout, holdout_rows, spec.input_dim);
    detail::finish(ds.test, test_rows, spec.input_dim);

    auto vrng = detail::stream(spec.seed, 0xA1, k);
    std::vector<std::size_t> rows(ds.train.size());
    std::iota(rows.begin(), rows.end(), std::size_t{0});
    std::shuffle(rows.begin(), rows.end(), vrng);
    rows.resize(std::min(rows.size(), spec.validation_batch));
    ds.validation_rows = std::move(rows);
    clients.push_back(std::move(ds));
  }
  return clients;
}

// -- retrieval metrics -------------------------------------------------------

struct RetrievalMetrics {
  double rank1 = 0.0;
  double mean_ap = 0.0;
  std::vector<double> cmc;  // cmc[k] = P(first match within top k+1)
  std::size_t valid_queries = 0;
};

// Cosine-similarity ranking; for every query the gallery drops entries with
// the same identity and camera, and queries left with no true match are
// ignored. Ties go to the lower gallery index.
inline RetrievalMetrics evaluate_retrieval(const Matrix& embeddings,
                                           const std::vector<int>& identities,
                                           const std::vector<int>& cameras,
                                           const std::vector<char>& is_query) {
  const std::size_t n = embeddings.rows();
  if (identities.size() != n || cameras.size() != n || is_query.size() != n)
    throw Error(ErrorCode::kStructuralMismatch,
                "evaluate_retrieval: label vectors differ from embedding count");
  std::vector<std::size_t> gallery;
  std::vector<double> norms(n);
  for (std::size_t i = 0; i < n; ++i) {
    norms[i] = l2_norm(embeddings.row(i));
    if (!is_query[i]) gallery.push_back(i);
  }

  RetrievalMetrics out;
  out.cmc.assign(gallery.size(), 0.0);
  std::vector<std::pair<double, std::size_t>> ranked;
  for (std::size_t q = 0; q < n; ++q) {
    if (!is_query[q]) continue;
    ranked.clear();
    std::size_t relevant = 0;
    for (std::size_t gi = 0; gi < gallery.size(); ++gi) {
      const std::size_t g = gallery[gi];
      if (identities[g] == identities[q] && cameras[g] == cameras[q]) continue;
      const double denom = norms[q] * norms[g];
      const double sim =
          denom > 0.0 ? dot(embeddings.row(q), embeddings.row(g)) / denom : 0.0;
      ranked.emplace_back(sim, gi);
      relevant += identities[g] == identities[q];
    }
    if (relevant == 0) continue;
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
      return a.first > b.first || (a.first == b.first && a.second < b.second);
    });
    double ap = 0.0;
    std::size_t hits = 0, first_hit = 0;
    for (std::size_t r = 0; r < ranked.size(); ++r) {
      if (identities[gallery[ranked[r].second]] != identities[q]) continue;
      if (hits == 0) first_hit = r;
      ++hits;
      ap += static_cast<double>(hits) / static_cast<double>(r + 1);
    }
    out.mean_ap += ap / static_cast<double>(relevant);
    for (std::size_t k = first_hit; k < out.cmc.size(); ++k) out.cmc[k] += 1.0;
    ++out.valid_queries;
  }
  if (out.valid_queries == 0)
    throw Error(ErrorCode::kUndefinedMetric,
                "evaluate_retrieval: no query has a valid cross-camera match");
  const double nq = static_cast<double>(out.valid_queries);
  out.mean_ap /= nq;
  for (auto& v : out.cmc) v /= nq;
  out.rank1 = out.cmc.front();
  return out;
}

inline RetrievalMetrics evaluate_retrieval(const Matrix& embeddings,
                                           const SampleSet& set) {
  return evaluate_retrieval(embeddings, set.identity, set.camera, set.is_query);
}

}  // namespace fedklpr
