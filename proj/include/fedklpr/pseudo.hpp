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

// Unsupervised pseudo-labelling: DBSCAN over embeddings, then one proxy per
// (camera, pseudo-identity) subcluster.

#pragma once

#include <algorithm>
#include <cstddef>
#include <deque>
#include <utility>
#include <vector>

#include "fedklpr/error.hpp"
#include "fedklpr/matrix.hpp"

namespace fedklpr {

inline constexpr int kNoise = -1;

// Classic DBSCAN with Euclidean distance. A point is core when at least
// min_pts points (itself included) lie within eps. Clusters are numbered in
// discovery order; a border point belongs to whichever cluster reaches it
// first when seeds are expanded in index order.
inline std::vector<int> dbscan(const Matrix& points, double eps,
                               std::size_t min_pts) {
  if (!(eps > 0.0) || min_pts == 0)
    throw Error(ErrorCode::kInvalidParameter,
                "dbscan: eps must be > 0 and min_pts >= 1");
  if (points.rows() == 0)
    throw Error(ErrorCode::kEmptyInput, "dbscan: no points");

  const std::size_t n = points.rows();
  const double eps2 = eps * eps;
  std::vector<std::vector<std::size_t>> neighbors(n);
  for (std::size_t i = 0; i < n; ++i) neighbors[i].push_back(i);
  for (std::size_t i = 0; i < n; ++i) {
    auto pi = points.row(i);
    for (std::size_t j = i + 1; j < n; ++j) {
      auto pj = points.row(j);
      double d2 = 0.0;
      for (std::size_t c = 0; c < pi.size(); ++c) {
        const double diff = pi[c] - pj[c];
        d2 += diff * diff;
      }
      if (d2 <= eps2) {
        neighbors[i].push_back(j);
        neighbors[j].push_back(i);
      }
    }
  }
  for (auto& nb : neighbors) std::sort(nb.begin(), nb.end());

  constexpr int kUnvisited = -2;
  std::vector<int> label(n, kUnvisited);
  int cluster = 0;
  std::deque<std::size_t> queue;
  for (std::size_t i = 0; i < n; ++i) {
    if (label[i] != kUnvisited) continue;
    if (neighbors[i].size() < min_pts) {
      label[i] = kNoise;
      continue;
    }
    label[i] = cluster;
    queue.assign(neighbors[i].begin(), neighbors[i].end());
    while (!queue.empty()) {
      const std::size_t q = queue.front();
      queue.pop_front();
      if (label[q] == kNoise) label[q] = cluster;  // border point
      if (label[q] != kUnvisited) continue;
      label[q] = cluster;
      if (neighbors[q].size() >= min_pts)
        queue.insert(queue.end(), neighbors[q].begin(), neighbors[q].end());
    }
    ++cluster;
  }
  return label;
}

struct PseudoLabeling {
  std::vector<int> pid;      // per sample, kNoise for outliers
  std::vector<int> proxy;    // per sample, kNoise for outliers
  std::vector<int> camera;   // per sample
  std::vector<int> proxy_pid;     // per proxy
  std::vector<int> proxy_camera;  // per proxy
  std::vector<int> camera_proxy_count;   // Z_c, indexed by camera id
  std::vector<int> camera_proxy_offset;  // sum of Z_c' for c' < c

  std::size_t num_proxies() const { return proxy_pid.size(); }

  std::vector<std::size_t> inlier_indices() const {
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < proxy.size(); ++i)
      if (proxy[i] != kNoise) idx.push_back(i);
    return idx;
  }

  // Restricts per-sample fields to the given samples; proxies are kept.
  PseudoLabeling select(const std::vector<std::size_t>& idx) const {
    PseudoLabeling out = *this;
    out.pid.clear();
    out.proxy.clear();
    out.camera.clear();
    for (auto i : idx) {
      out.pid.push_back(pid[i]);
      out.proxy.push_back(proxy[i]);
      out.camera.push_back(camera[i]);
    }
    return out;
  }
};

// Enumerates proxies as the distinct (camera, pid) pairs of non-outlier
// samples, ordered by camera then pid. Throws kEmptyEpoch when every sample
// is an outlier.
inline PseudoLabeling assign_proxies(const std::vector<int>& pids,
                                     const std::vector<int>& cameras) {
  if (pids.size() != cameras.size())
    throw Error(ErrorCode::kStructuralMismatch,
                "assign_proxies: pids and cameras differ in length");
  std::vector<std::pair<int, int>> keys;  // (camera, pid)
  int max_camera = -1;
  for (std::size_t i = 0; i < pids.size(); ++i) {
    if (cameras[i] < 0)
      throw Error(ErrorCode::kInvalidParameter,
                  "assign_proxies: negative camera id");
    max_camera = std::max(max_camera, cameras[i]);
    if (pids[i] != kNoise) keys.emplace_back(cameras[i], pids[i]);
  }
  if (keys.empty())
    throw Error(ErrorCode::kEmptyEpoch,
                "assign_proxies: every sample is an outlier");
  std::sort(keys.begin(), keys.end());
  keys.erase(std::unique(keys.begin(), keys.end()), keys.end());

  PseudoLabeling out;
  out.pid = pids;
  out.camera = cameras;
  out.proxy.assign(pids.size(), kNoise);
  out.camera_proxy_count.assign(static_cast<std::size_t>(max_camera) + 1, 0);
  for (const auto& [cam, pid] : keys) {
    out.proxy_camera.push_back(cam);
    out.proxy_pid.push_back(pid);
    ++out.camera_proxy_count[static_cast<std::size_t>(cam)];
  }
  out.camera_proxy_offset.assign(out.camera_proxy_count.size(), 0);
  for (std::size_t c = 1; c < out.camera_proxy_count.size(); ++c)
    out.camera_proxy_offset[c] =
        out.camera_proxy_offset[c - 1] + out.camera_proxy_count[c - 1];
  for (std::size_t i = 0; i < pids.size(); ++i) {
    if (pids[i] == kNoise) continue;
    auto it = std::lower_bound(keys.begin(), keys.end(),
                               std::make_pair(cameras[i], pids[i]));
    out.proxy[i] = static_cast<int>(it - keys.begin());
  }
  return out;
}

}  // namespace fedklpr
