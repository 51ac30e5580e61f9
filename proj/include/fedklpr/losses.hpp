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

// Proxy memory bank and the local training objective.
//
// All contrastive terms share one shape: for a sample embedding f and a set
// U = P u Q of memory rows,
//
//   term(f) = -(1/|P|) sum_{p in P} log( exp(s_p) / sum_{u in U} exp(s_u) ),
//   s_u     = <M[u], f> / tau,
//
// and differ only in how P (positives) and Q (hard negatives) are chosen.
// Every loss returns its value together with the exact gradient with respect
// to the batch embeddings; the network's backward pass takes it from there.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedklpr/error.hpp"
#include "fedklpr/matrix.hpp"
#include "fedklpr/pseudo.hpp"

namespace fedklpr {

struct MemoryBank {
  Matrix rows;       // Z x d, one unit-norm proxy feature per row
  double mu = 0.2;   // momentum kept from the old entry
  double tau = 0.05;

  std::size_t num_proxies() const { return rows.rows(); }
  std::size_t dim() const { return rows.cols(); }
};

struct LossWeights {
  double alpha = 1.0;     // intra-camera
  double beta = 1.0;      // inter-camera
  double gamma_ca = 0.5;  // camera-aware
  double delta_kl = 0.13; // KL regulariser
  std::size_t k_hard = 50;

  void validate() const {
    const std::pair<const char*, double> weights[] = {
        {"alpha", alpha}, {"beta", beta}, {"gamma_ca", gamma_ca}, {"delta_kl", delta_kl}};
    for (const auto& [key, w] : weights)
      if (!std::isfinite(w) || w < 0.0)
        throw Error(ErrorCode::kInvalidConfig,
                    std::string("loss.") + key + " must be finite and non-negative");
    if (k_hard == 0)
      throw Error(ErrorCode::kInvalidConfig, "loss.k_hard must be >= 1");
  }
};

struct LossResult {
  double value = 0.0;
  Matrix grad;  // same shape as the embeddings
};

namespace detail {

inline void normalize_in_place(std::span<double> v) {
  const double n = l2_norm(v);
  if (n < 1e-12) {
    std::fill(v.begin(), v.end(), 0.0);
    v[0] = 1.0;
    return;
  }
  for (auto& x : v) x /= n;
}

}  // namespace detail

// Each proxy row starts as the normalised mean embedding of its subcluster.
inline MemoryBank build_memory_bank(const Matrix& embeddings,
                                    const PseudoLabeling& labels, double mu,
                                    double tau) {
  MemoryBank bank{Matrix(labels.num_proxies(), embeddings.cols()), mu, tau};
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    if (labels.proxy[i] == kNoise) continue;
    auto dst = bank.rows.row(static_cast<std::size_t>(labels.proxy[i]));
    auto src = embeddings.row(i);
    for (std::size_t c = 0; c < dst.size(); ++c) dst[c] += src[c];
  }
  for (std::size_t z = 0; z < bank.num_proxies(); ++z)
    detail::normalize_in_place(bank.rows.row(z));
  return bank;
}

// M[z] <- mu * M[z] + (1 - mu) * feature, renormalised to unit length.
inline void memory_update(MemoryBank& bank, std::size_t proxy,
                          std::span<const double> feature) {
  if (proxy >= bank.num_proxies())
    throw Error(ErrorCode::kInvalidParameter,
                "memory_update: proxy index out of range");
  if (feature.size() != bank.dim())
    throw Error(ErrorCode::kStructuralMismatch,
                "memory_update: feature dimension differs from bank");
  auto row = bank.rows.row(proxy);
  for (std::size_t c = 0; c < row.size(); ++c)
    row[c] = bank.mu * row[c] + (1.0 - bank.mu) * feature[c];
  detail::normalize_in_place(row);
}

namespace detail {

inline void check_loss_inputs(const MemoryBank& bank, const Matrix& emb,
                              const PseudoLabeling& labels) {
  if (emb.cols() != bank.dim())
    throw Error(ErrorCode::kStructuralMismatch,
                "loss: embedding dimension differs from memory bank");
  if (labels.proxy.size() != emb.rows() || labels.pid.size() != emb.rows() ||
      labels.camera.size() != emb.rows())
    throw Error(ErrorCode::kStructuralMismatch,
                "loss: labelling does not match batch size");
  if (labels.num_proxies() != bank.num_proxies())
    throw Error(ErrorCode::kStructuralMismatch,
                "loss: labelling proxy count differs from memory bank");
  for (auto z : labels.proxy)
    if (z == kNoise || static_cast<std::size_t>(z) >= bank.num_proxies())
      throw Error(ErrorCode::kInvalidParameter,
                  "loss: batch sample without a valid proxy");
}

inline std::vector<double> logits(const MemoryBank& bank,
                                   std::span<const double> f) {
  std::vector<double> s(bank.num_proxies());
  for (std::size_t z = 0; z < s.size(); ++z)
    s[z] = dot(bank.rows.row(z), f) / bank.tau;
  return s;
}

// Adds scale * d term / d f to grad_row and returns the term value. `set`
// must start with the positives (the first num_pos entries).
inline double contrastive_term(const MemoryBank& bank,
                               const std::vector<double>& s,
                               const std::vector<std::size_t>& set,
                               std::size_t num_pos, double scale,
                               std::span<double> grad_row) {
  double mx = -INFINITY;
  for (auto u : set) mx = std::max(mx, s[u]);
  double denom = 0.0;
  for (auto u : set) denom += std::exp(s[u] - mx);
  const double lse = mx + std::log(denom);
  double pos_mean = 0.0;
  for (std::size_t k = 0; k < num_pos; ++k) pos_mean += s[set[k]];
  pos_mean /= static_cast<double>(num_pos);

  for (std::size_t k = 0; k < set.size(); ++k) {
    const std::size_t u = set[k];
    double ds = std::exp(s[u] - lse);
    if (k < num_pos) ds -= 1.0 / static_cast<double>(num_pos);
    const double coef = scale * ds / bank.tau;
    if (coef == 0.0) continue;
    auto m = bank.rows.row(u);
    for (std::size_t c = 0; c < grad_row.size(); ++c) grad_row[c] += coef * m[c];
  }
  return lse - pos_mean;
}

// The k most similar candidates, ties broken by lower proxy index.
inline std::vector<std::size_t> top_k(const std::vector<double>& s,
                                      std::vector<std::size_t> candidates,
                                      std::size_t k) {
  k = std::min(k, candidates.size());
  std::partial_sort(candidates.begin(), candidates.begin() + static_cast<long>(k),
                    candidates.end(), [&](std::size_t a, std::size_t b) {
                      return s[a] > s[b] || (s[a] == s[b] && a < b);
                    });
  candidates.resize(k);
  return candidates;
}

}  // namespace detail

// Softmax over the sample's own camera's proxies, averaged per camera and
// summed across cameras.
inline LossResult intra_loss(const MemoryBank& bank, const Matrix& emb,
                             const PseudoLabeling& labels) {
  detail::check_loss_inputs(bank, emb, labels);
  LossResult out{0.0, Matrix(emb.rows(), emb.cols())};
  std::vector<double> per_camera(labels.camera_proxy_count.size(), 0.0);
  for (auto c : labels.camera) per_camera[static_cast<std::size_t>(c)] += 1.0;

  std::vector<std::size_t> set;
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    const auto cam = static_cast<std::size_t>(labels.camera[i]);
    const int count = labels.camera_proxy_count[cam];
    if (count == 0)
      throw Error(ErrorCode::kInvalidParameter,
                  "intra_loss: camera has no proxies");
    const auto own = static_cast<std::size_t>(labels.proxy[i]);
    const auto offset = static_cast<std::size_t>(labels.camera_proxy_offset[cam]);
    set.assign(1, own);
    for (std::size_t z = offset; z < offset + static_cast<std::size_t>(count); ++z)
      if (z != own) set.push_back(z);
    const double scale = 1.0 / per_camera[cam];
    const auto s = detail::logits(bank, emb.row(i));
    out.value += scale * detail::contrastive_term(bank, s, set, 1, scale,
                                                  out.grad.row(i));
  }
  return out;
}

// Positives: every proxy carrying the sample's pid. Negatives: the k_hard
// most similar proxies of other pids. Averaged over the batch.
inline LossResult inter_loss(const MemoryBank& bank, const Matrix& emb,
                             const PseudoLabeling& labels, std::size_t k_hard) {
  detail::check_loss_inputs(bank, emb, labels);
  LossResult out{0.0, Matrix(emb.rows(), emb.cols())};
  if (emb.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(emb.rows());
  std::vector<std::size_t> set, negatives;
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    const auto s = detail::logits(bank, emb.row(i));
    set.clear();
    negatives.clear();
    for (std::size_t z = 0; z < bank.num_proxies(); ++z)
      (labels.proxy_pid[z] == labels.pid[i] ? set : negatives).push_back(z);
    const std::size_t num_pos = set.size();
    for (auto q : detail::top_k(s, negatives, k_hard)) set.push_back(q);
    out.value += scale * detail::contrastive_term(bank, s, set, num_pos, scale,
                                                  out.grad.row(i));
  }
  return out;
}

// Positives: the sample's own proxy plus the most similar proxy of every
// other camera. Negatives: the k_hard most similar of the rest.
inline LossResult camera_aware_loss(const MemoryBank& bank, const Matrix& emb,
                                    const PseudoLabeling& labels,
                                    std::size_t k_hard) {
  detail::check_loss_inputs(bank, emb, labels);
  LossResult out{0.0, Matrix(emb.rows(), emb.cols())};
  if (emb.rows() == 0) return out;
  const double scale = 1.0 / static_cast<double>(emb.rows());
  const std::size_t num_cameras = labels.camera_proxy_count.size();
  std::vector<std::size_t> set, rest;
  std::vector<char> in_pos(bank.num_proxies());
  for (std::size_t i = 0; i < emb.rows(); ++i) {
    const auto s = detail::logits(bank, emb.row(i));
    const auto own = static_cast<std::size_t>(labels.proxy[i]);
    const auto own_cam = static_cast<std::size_t>(labels.camera[i]);
    set.assign(1, own);
    for (std::size_t c = 0; c < num_cameras; ++c) {
      if (c == own_cam || labels.camera_proxy_count[c] == 0) continue;
      const auto begin = static_cast<std::size_t>(labels.camera_proxy_offset[c]);
      const auto end = begin + static_cast<std::size_t>(labels.camera_proxy_count[c]);
      std::size_t best = begin;
      for (std::size_t z = begin + 1; z < end; ++z)
        if (s[z] > s[best]) best = z;
      set.push_back(best);
    }
    const std::size_t num_pos = set.size();
    std::fill(in_pos.begin(), in_pos.end(), 0);
    for (auto p : set) in_pos[p] = 1;
    rest.clear();
    for (std::size_t z = 0; z < bank.num_proxies(); ++z)
      if (!in_pos[z]) rest.push_back(z);
    for (auto q : detail::top_k(s, rest, k_hard)) set.push_back(q);
    out.value += scale * detail::contrastive_term(bank, s, set, num_pos, scale,
                                                  out.grad.row(i));
  }
  return out;
}

// -- KL divergence -----------------------------------------------------------

inline constexpr double kProbabilityFloor = 1e-8;

// Clamps to the probability floor and renormalises.
inline std::vector<double> clamp_distribution(std::span<const double> p) {
  std::vector<double> out(p.begin(), p.end());
  double sum = 0.0;
  for (auto& x : out) {
    x = std::max(x, kProbabilityFloor);
    sum += x;
  }
  for (auto& x : out) x /= sum;
  return out;
}

// D(P || Q) in nats, after flooring both inputs.
inline double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size())
    throw Error(ErrorCode::kStructuralMismatch,
                "kl_divergence: distributions differ in length");
  if (p.empty())
    throw Error(ErrorCode::kEmptyInput, "kl_divergence: empty distribution");
  const auto pc = clamp_distribution(p);
  const auto qc = clamp_distribution(q);
  double d = 0.0;
  for (std::size_t i = 0; i < pc.size(); ++i) d += pc[i] * std::log(pc[i] / qc[i]);
  return std::max(d, 0.0);
}

namespace detail {

inline void row_softmax(std::span<const double> x, std::span<double> out) {
  const double mx = *std::max_element(x.begin(), x.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < x.size(); ++k) {
    out[k] = std::exp(x[k] - mx);
    sum += out[k];
  }
  for (auto& v : out) v /= sum;
}

}  // namespace detail

// Batch mean of the per-sample softmax over embedding coordinates, floored
// and renormalised.
inline std::vector<double> feature_distribution(const Matrix& embeddings) {
  if (embeddings.rows() == 0 || embeddings.cols() == 0)
    throw Error(ErrorCode::kEmptyInput, "feature_distribution: empty batch");
  std::vector<double> mean(embeddings.cols(), 0.0), sm(embeddings.cols());
  for (std::size_t i = 0; i < embeddings.rows(); ++i) {
    detail::row_softmax(embeddings.row(i), sm);
    for (std::size_t k = 0; k < sm.size(); ++k) mean[k] += sm[k];
  }
  for (auto& v : mean) v /= static_cast<double>(embeddings.rows());
  return clamp_distribution(mean);
}

// KL(dist(local) || dist(reference)); the reference side is a constant.
inline LossResult kll_term(const Matrix& local, const Matrix& reference) {
  if (local.rows() != reference.rows() || local.cols() != reference.cols())
    throw Error(ErrorCode::kStructuralMismatch,
                "kll_term: local and reference embeddings differ in shape");
  const std::size_t n = local.rows(), d = local.cols();
  LossResult out{0.0, Matrix(n, d)};
  if (n == 0) return out;

  Matrix soft(n, d);
  std::vector<double> raw(d, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    detail::row_softmax(local.row(i), soft.row(i));
    for (std::size_t k = 0; k < d; ++k) raw[k] += soft(i, k);
  }
  for (auto& v : raw) v /= static_cast<double>(n);
  const auto q = feature_distribution(reference);

  double clamped_sum = 0.0;
  for (auto v : raw) clamped_sum += std::max(v, kProbabilityFloor);
  std::vector<double> p(d), g(d);
  double pg = 0.0;
  for (std::size_t k = 0; k < d; ++k) {
    p[k] = std::max(raw[k], kProbabilityFloor) / clamped_sum;
    out.value += p[k] * std::log(p[k] / q[k]);
    g[k] = std::log(p[k] / q[k]) + 1.0;
    pg += p[k] * g[k];
  }
  // h = dL / d(raw mean); zero where the floor is active.
  std::vector<double> h(d);
  for (std::size_t k = 0; k < d; ++k)
    h[k] = raw[k] > kProbabilityFloor ? (g[k] - pg) / clamped_sum : 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    double sh = 0.0;
    for (std::size_t k = 0; k < d; ++k) sh += soft(i, k) * h[k];
    for (std::size_t l = 0; l < d; ++l)
      out.grad(i, l) = soft(i, l) * (h[l] - sh) / static_cast<double>(n);
  }
  return out;
}

struct LossTerms {
  LossResult intra, inter, camera_aware, kl;
};

// alpha*intra + beta*inter + gamma_ca*ca + delta_kl*kl, gradient likewise.
inline LossResult total_loss(const LossTerms& t, const LossWeights& w) {
  const std::pair<double, const LossResult*> parts[] = {
      {w.alpha, &t.intra},
      {w.beta, &t.inter},
      {w.gamma_ca, &t.camera_aware},
      {w.delta_kl, &t.kl}};
  LossResult out;
  for (const auto& [weight, r] : parts) {
    if (out.grad.empty()) out.grad = Matrix(r->grad.rows(), r->grad.cols());
    if (r->grad.rows() != out.grad.rows() || r->grad.cols() != out.grad.cols())
      throw Error(ErrorCode::kStructuralMismatch,
                  "total_loss: component gradients differ in shape");
    out.value += weight * r->value;
    for (std::size_t k = 0; k < out.grad.data().size(); ++k)
      out.grad.data()[k] += weight * r->grad.data()[k];
  }
  return out;
}

}  // namespace fedklpr
