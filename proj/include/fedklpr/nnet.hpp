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

// Embedding MLP with exact analytic gradients and an Adam optimizer.
//
// The network is a stack of fully connected layers, an elementwise
// activation after every hidden layer, and a final L2 normalisation so each
// embedding row lies on the unit sphere. Parameters live in a ParamVector with
// layers "fc<i>.weight" (shape {out, in}, prunable) and "fc<i>.bias"
// (shape {out}, never pruned).

#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedklpr/error.hpp"
#include "fedklpr/matrix.hpp"
#include "fedklpr/params.hpp"

namespace fedklpr {

enum class Activation { kRelu, kTanh };

struct NetConfig {
  std::size_t input_dim = 32;
  std::vector<std::size_t> hidden_dims{64};
  std::size_t embed_dim = 16;
  Activation activation = Activation::kRelu;
  std::uint64_t seed = 1;

  void validate() const {
    if (input_dim == 0)
      throw Error(ErrorCode::kInvalidConfig, "net.input_dim must be positive");
    if (hidden_dims.empty())
      throw Error(ErrorCode::kInvalidConfig,
                  "net.hidden_dims needs at least one hidden layer");
    for (auto h : hidden_dims)
      if (h == 0)
        throw Error(ErrorCode::kInvalidConfig,
                    "net.hidden_dims entries must be positive");
    if (embed_dim < 2)
      throw Error(ErrorCode::kInvalidConfig, "net.embed_dim must be >= 2");
  }

  std::size_t num_layers() const { return hidden_dims.size() + 1; }
  std::size_t layer_in(std::size_t l) const {
    return l == 0 ? input_dim : hidden_dims[l - 1];
  }
  std::size_t layer_out(std::size_t l) const {
    return l + 1 == num_layers() ? embed_dim : hidden_dims[l];
  }
};

// Glorot-uniform weights, zero biases.
inline ParamVector init_params(const NetConfig& cfg) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  ParamVector p;
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    const auto in = static_cast<std::uint32_t>(cfg.layer_in(l));
    const auto out = static_cast<std::uint32_t>(cfg.layer_out(l));
    auto& w = p.add_layer("fc" + std::to_string(l) + ".weight", {out, in}, true);
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> dist(-a, a);
    for (auto& v : w.values) v = static_cast<float>(dist(rng));
    p.add_layer("fc" + std::to_string(l) + ".bias", {out}, false);
  }
  return p;
}

namespace detail {

inline void check_net_params(const ParamVector& p, const NetConfig& cfg) {
  if (p.layers.size() != 2 * cfg.num_layers())
    throw Error(ErrorCode::kStructuralMismatch,
                "network parameters do not match NetConfig layer count");
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    if (p.layers[2 * l].size() != cfg.layer_in(l) * cfg.layer_out(l) ||
        p.layers[2 * l + 1].size() != cfg.layer_out(l))
      throw Error(ErrorCode::kStructuralMismatch,
                  "network parameter shapes do not match NetConfig");
  }
}

inline double activate(Activation a, double x) {
  return a == Activation::kRelu ? (x > 0.0 ? x : 0.0) : std::tanh(x);
}

// Derivative expressed through the pre-activation and the activation output.
inline double activate_grad(Activation a, double pre, double post) {
  return a == Activation::kRelu ? (pre > 0.0 ? 1.0 : 0.0) : 1.0 - post * post;
}

}  // namespace detail

// Intermediate values of one forward pass; inputs[l] is the input to layer l,
// pre[l] its affine output. pre.back() is the unnormalised embedding.
struct ForwardCache {
  std::vector<Matrix> inputs;
  std::vector<Matrix> pre;
  Matrix embeddings;
  std::vector<double> norms;
};

// Norms below this are replaced by the first basis vector.
inline constexpr double kZeroEmbeddingNorm = 1e-12;

inline ForwardCache forward_cached(const ParamVector& params,
                                   const NetConfig& cfg, const Matrix& batch) {
  detail::check_net_params(params, cfg);
  if (batch.cols() != cfg.input_dim)
    throw Error(ErrorCode::kStructuralMismatch,
                "forward: batch has " + std::to_string(batch.cols()) +
                    " columns, network expects " +
                    std::to_string(cfg.input_dim));
  ForwardCache cache;
  const std::size_t n = batch.rows();
  Matrix x = batch;
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    const std::size_t in = cfg.layer_in(l), out = cfg.layer_out(l);
    const auto& w = params.layers[2 * l].values;
    const auto& b = params.layers[2 * l + 1].values;
    Matrix y(n, out);
    for (std::size_t r = 0; r < n; ++r) {
      auto xr = x.row(r);
      for (std::size_t o = 0; o < out; ++o) {
        const float* wo = w.data() + o * in;
        double s = b[o];
        for (std::size_t i = 0; i < in; ++i) s += wo[i] * xr[i];
        y(r, o) = s;
      }
    }
    cache.inputs.push_back(std::move(x));
    if (l + 1 < cfg.num_layers()) {
      Matrix act(n, out);
      for (std::size_t k = 0; k < act.data().size(); ++k)
        act.data()[k] = detail::activate(cfg.activation, y.data()[k]);
      cache.pre.push_back(std::move(y));
      x = std::move(act);
    } else {
      cache.pre.push_back(std::move(y));
    }
  }

  const Matrix& z = cache.pre.back();
  cache.embeddings = Matrix(n, cfg.embed_dim);
  cache.norms.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    const double norm = l2_norm(z.row(r));
    cache.norms[r] = norm;
    auto e = cache.embeddings.row(r);
    if (norm < kZeroEmbeddingNorm) {
      e[0] = 1.0;
    } else {
      for (std::size_t c = 0; c < e.size(); ++c) e[c] = z(r, c) / norm;
    }
  }
  return cache;
}

inline Matrix forward(const ParamVector& params, const NetConfig& cfg,
                      const Matrix& batch) {
  return forward_cached(params, cfg, batch).embeddings;
}

// Gradient of sum(upstream .* forward(batch)) with respect to every parameter.
inline ParamVector backward(const ParamVector& params, const NetConfig& cfg,
                            const ForwardCache& cache, const Matrix& upstream) {
  const Matrix& emb = cache.embeddings;
  if (upstream.rows() != emb.rows() || upstream.cols() != emb.cols())
    throw Error(ErrorCode::kStructuralMismatch,
                "backward: upstream gradient shape differs from embeddings");
  const std::size_t n = emb.rows();

  // Through the L2 normalisation: dz = (dy - y (y.dy)) / |z|.
  Matrix delta(n, cfg.embed_dim);
  for (std::size_t r = 0; r < n; ++r) {
    if (cache.norms[r] < kZeroEmbeddingNorm) continue;
    auto y = emb.row(r);
    auto dy = upstream.row(r);
    const double proj = dot(y, dy);
    for (std::size_t c = 0; c < y.size(); ++c)
      delta(r, c) = (dy[c] - y[c] * proj) / cache.norms[r];
  }

  ParamVector grad = zeros_like(params);
  for (std::size_t l = cfg.num_layers(); l-- > 0;) {
    const std::size_t in = cfg.layer_in(l), out = cfg.layer_out(l);
    const Matrix& x = cache.inputs[l];
    auto& gw = grad.layers[2 * l].values;
    auto& gb = grad.layers[2 * l + 1].values;
    std::vector<double> acc_w(in * out, 0.0), acc_b(out, 0.0);
    for (std::size_t r = 0; r < n; ++r) {
      auto xr = x.row(r);
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta(r, o);
        if (d == 0.0) continue;
        acc_b[o] += d;
        double* row = acc_w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) row[i] += d * xr[i];
      }
    }
    for (std::size_t k = 0; k < gw.size(); ++k) gw[k] = static_cast<float>(acc_w[k]);
    for (std::size_t k = 0; k < gb.size(); ++k) gb[k] = static_cast<float>(acc_b[k]);
    if (l == 0) break;

    const auto& w = params.layers[2 * l].values;
    const Matrix& pre_prev = cache.pre[l - 1];
    Matrix next(n, in);
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        const double d = delta(r, o);
        if (d == 0.0) continue;
        const float* wo = w.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) next(r, i) += d * wo[i];
      }
      for (std::size_t i = 0; i < in; ++i)
        next(r, i) *= detail::activate_grad(cfg.activation, pre_prev(r, i),
                                            x(r, i));
    }
    delta = std::move(next);
  }
  return grad;
}

inline ParamVector backward(const ParamVector& params, const NetConfig& cfg,
                            const Matrix& batch, const Matrix& upstream) {
  return backward(params, cfg, forward_cached(params, cfg, batch), upstream);
}

struct AdamState {
  double lr = 3.5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first;   // aligned with model layers
  std::vector<std::vector<double>> second;

  static AdamState for_model(const ParamVector& model, double lr = 3.5e-4) {
    AdamState s;
    s.lr = lr;
    for (const auto& l : model.layers) {
      s.first.emplace_back(l.size(), 0.0);
      s.second.emplace_back(l.size(), 0.0);
    }
    return s;
  }

  bool aligned_with(const ParamVector& model) const {
    if (first.size() != model.layers.size() || second.size() != first.size())
      return false;
    for (std::size_t i = 0; i < first.size(); ++i)
      if (first[i].size() != model.layers[i].size() ||
          second[i].size() != model.layers[i].size())
        return false;
    return true;
  }
};

// One bias-corrected Adam update, then re-masking so pruned weights stay 0.
inline void adam_step(AdamState& state, ParamVector& model,
                      const ParamVector& grad, const PruneMask& mask) {
  require_same_structure(model, grad, "adam_step");
  require_same_structure(model, mask, "adam_step");
  if (!state.aligned_with(model))
    throw Error(ErrorCode::kStructuralMismatch,
                "adam_step: optimizer moments not aligned with model");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(state.beta1, t);
  const double c2 = 1.0 - std::pow(state.beta2, t);
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    auto& w = model.layers[li].values;
    const auto& g = grad.layers[li].values;
    const auto& bits = mask.layers[li].bits;
    auto& m = state.first[li];
    auto& v = state.second[li];
    for (std::size_t j = 0; j < w.size(); ++j) {
      const double gj = g[j];
      m[j] = state.beta1 * m[j] + (1.0 - state.beta1) * gj;
      v[j] = state.beta2 * v[j] + (1.0 - state.beta2) * gj * gj;
      const double update = state.lr * (m[j] / c1) / (std::sqrt(v[j] / c2) + state.eps);
      w[j] = bits[j] ? static_cast<float>(w[j] - update) : 0.0f;
    }
  }
}

}  // namespace fedklpr
