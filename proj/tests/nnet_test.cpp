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

#include <gtest/gtest.h>

#include "support.hpp"

namespace fedklpr {
namespace {

using testing::Rng;

NetConfig tiny(Activation act = Activation::kTanh) {
  NetConfig cfg;
  cfg.input_dim = 5;
  cfg.hidden_dims = {7, 6};
  cfg.embed_dim = 4;
  cfg.activation = act;
  cfg.seed = 9;
  return cfg;
}

double weighted_output(const ParamVector& p, const NetConfig& cfg, const Matrix& x,
                       const Matrix& upstream) {
  const Matrix y = forward(p, cfg, x);
  double s = 0.0;
  for (std::size_t k = 0; k < y.data().size(); ++k) s += y.data()[k] * upstream.data()[k];
  return s;
}

// Central differences on the float parameters, dividing by the step that was
// actually stored.
std::vector<double> numeric_param_grad(ParamVector p, const NetConfig& cfg, const Matrix& x,
                                       const Matrix& upstream, double h) {
  std::vector<double> g;
  for (auto& layer : p.layers)
    for (auto& w : layer.values) {
      const float orig = w;
      const float up = static_cast<float>(orig + h);
      const float down = static_cast<float>(orig - h);
      w = up;
      const double fu = weighted_output(p, cfg, x, upstream);
      w = down;
      const double fd = weighted_output(p, cfg, x, upstream);
      w = orig;
      g.push_back((fu - fd) / (static_cast<double>(up) - static_cast<double>(down)));
    }
  return g;
}

std::vector<double> flatten(const ParamVector& p) {
  std::vector<double> out;
  for (const auto& l : p.layers) out.insert(out.end(), l.values.begin(), l.values.end());
  return out;
}

TEST(Nnet, InitIsDeterministicAndBounded) {
  const NetConfig cfg = tiny();
  const ParamVector a = init_params(cfg);
  EXPECT_EQ(a, init_params(cfg));
  ASSERT_EQ(a.layers.size(), 6u);
  for (std::size_t l = 0; l < cfg.num_layers(); ++l) {
    const auto& w = a.layers[2 * l];
    EXPECT_TRUE(w.prunable);
    EXPECT_EQ(w.shape, (Shape{static_cast<std::uint32_t>(cfg.layer_out(l)),
                              static_cast<std::uint32_t>(cfg.layer_in(l))}));
    const double bound = std::sqrt(6.0 / static_cast<double>(cfg.layer_in(l) + cfg.layer_out(l)));
    for (float v : w.values) EXPECT_LE(std::fabs(v), bound);
    EXPECT_FALSE(a.layers[2 * l + 1].prunable);
    for (float v : a.layers[2 * l + 1].values) EXPECT_EQ(v, 0.0f);
  }
}

TEST(Nnet, EmbeddingsHaveUnitNorm) {
  Rng rng(1);
  const NetConfig cfg = tiny(Activation::kRelu);
  const ParamVector p = init_params(cfg);
  const Matrix y = forward(p, cfg, testing::random_matrix(rng, 10, cfg.input_dim));
  for (std::size_t r = 0; r < y.rows(); ++r) EXPECT_NEAR(l2_norm(y.row(r)), 1.0, 1e-12);
}

TEST(Nnet, ZeroOutputMapsToFirstBasisVector) {
  Rng rng(2);
  const NetConfig cfg = tiny();
  const ParamVector p = zeros_like(init_params(cfg));
  const Matrix x = testing::random_matrix(rng, 3, cfg.input_dim);
  const Matrix y = forward(p, cfg, x);
  for (std::size_t r = 0; r < y.rows(); ++r) {
    EXPECT_EQ(y(r, 0), 1.0);
    for (std::size_t c = 1; c < y.cols(); ++c) EXPECT_EQ(y(r, c), 0.0);
  }
  const ParamVector g = backward(p, cfg, x, testing::random_matrix(rng, 3, cfg.embed_dim));
  for (const auto& l : g.layers)
    for (float v : l.values) EXPECT_EQ(v, 0.0f);
}

TEST(Nnet, RejectsWrongInputWidth) {
  const NetConfig cfg = tiny();
  const ParamVector p = init_params(cfg);
  EXPECT_THROW(forward(p, cfg, Matrix(2, cfg.input_dim + 1)), Error);
  NetConfig other = cfg;
  other.hidden_dims = {3};
  EXPECT_THROW(forward(init_params(other), cfg, Matrix(2, cfg.input_dim)), Error);
}

// Random batch away from activation kinks and the zero-norm guard, where
// central differences are meaningless.
Matrix smooth_batch(Rng& rng, const ParamVector& p, const NetConfig& cfg, std::size_t rows) {
  for (;;) {
    Matrix x = testing::random_matrix(rng, rows, cfg.input_dim);
    const ForwardCache c = forward_cached(p, cfg, x);
    bool ok = true;
    for (double n : c.norms) ok = ok && n > 0.05;
    for (std::size_t l = 0; ok && l + 1 < c.pre.size(); ++l)
      for (double v : c.pre[l].data()) ok = ok && std::fabs(v) > 0.01;
    if (ok) return x;
  }
}

TEST(Nnet, BackwardMatchesFiniteDifferences) {
  for (Activation act : {Activation::kTanh, Activation::kRelu}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(100 + seed);
      NetConfig cfg = tiny(act);
      cfg.seed = seed;
      const ParamVector p = init_params(cfg);
      const Matrix x = smooth_batch(rng, p, cfg, 4);
      const Matrix u = testing::random_matrix(rng, 4, cfg.embed_dim);
      const auto analytic = flatten(backward(p, cfg, x, u));
      const auto numeric = numeric_param_grad(p, cfg, x, u, 1e-3);
      EXPECT_LT(testing::relative_error(analytic, numeric), 1e-4)
          << "activation " << static_cast<int>(act) << " seed " << seed;
    }
  }
}

TEST(Nnet, AdamFirstStepMovesByLearningRate) {
  NetConfig cfg = tiny();
  ParamVector p = init_params(cfg);
  const ParamVector before = p;
  ParamVector g = zeros_like(p);
  for (auto& l : g.layers)
    for (std::size_t j = 0; j < l.size(); ++j) l.values[j] = (j % 3 == 0) ? 0.0f : (j % 2 ? 2.0f : -0.5f);
  AdamState adam = AdamState::for_model(p, 1e-2);
  adam_step(adam, p, g, full_mask(p));
  for (std::size_t l = 0; l < p.layers.size(); ++l)
    for (std::size_t j = 0; j < p.layers[l].size(); ++j) {
      const double gj = g.layers[l].values[j];
      const double expect = gj == 0.0 ? 0.0 : -1e-2 * gj / (std::fabs(gj) + 1e-8);
      EXPECT_NEAR(p.layers[l].values[j] - before.layers[l].values[j], expect, 1e-6);
    }
  EXPECT_EQ(adam.step, 1u);
}

TEST(Nnet, AdamKeepsPrunedCoordinatesAtZero) {
  Rng rng(5);
  NetConfig cfg = tiny();
  ParamVector p = init_params(cfg);
  const PruneMask m = testing::random_mask(rng, p, 0.5);
  p = apply_mask(p, m);
  AdamState adam = AdamState::for_model(p);
  for (int step = 0; step < 5; ++step) {
    const Matrix x = testing::random_matrix(rng, 4, cfg.input_dim);
    const Matrix u = testing::random_matrix(rng, 4, cfg.embed_dim);
    adam_step(adam, p, backward(p, cfg, x, u), m);
  }
  EXPECT_EQ(apply_mask(p, m), p);
}

TEST(Nnet, AdamRejectsMisalignedState) {
  NetConfig cfg = tiny();
  ParamVector p = init_params(cfg);
  AdamState adam;
  EXPECT_THROW(adam_step(adam, p, zeros_like(p), full_mask(p)), Error);
}

TEST(Nnet, ConfigValidation) {
  NetConfig cfg = tiny();
  cfg.hidden_dims.clear();
  EXPECT_THROW(cfg.validate(), Error);
  cfg = tiny();
  cfg.embed_dim = 1;
  EXPECT_THROW(cfg.validate(), Error);
}

}  // namespace
}  // namespace fedklpr
