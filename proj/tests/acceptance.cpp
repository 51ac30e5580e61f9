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

// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any
// failure. Every tolerance and time budget is fixed below.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "crr_cases.hpp"
#include "gradient_check.hpp"
#include "oracles.hpp"
#include "support.hpp"

namespace fedklpr {
namespace {

using testing::Rng;

constexpr double kSasTolerance = 1e-9;
constexpr double kSimplexTolerance = 1e-9;
constexpr double kHandTolerance = 1e-12;
constexpr double kGradTolerance = 1e-4;
constexpr double kMetricTolerance = 1e-12;
constexpr double kApHandTolerance = 1e-9;
constexpr std::size_t kMinClientsPruned = 6;
constexpr double kMinClientRatio = 0.60;
constexpr double kMaxRank1Drop = 0.02;
constexpr double kMinUploadReduction = 0.20;

struct Verdict {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok && pass) detail = what;
    pass = pass && ok;
  }
};

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

Verdict sas_dense_equivalence() {
  Verdict v;
  Rng rng(101);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const ParamVector structure = testing::random_params(rng);
    const auto reports = testing::reports_for(rng, structure, testing::pick(rng, 1, 6), 1.0);
    const auto w = testing::random_simplex(rng, reports.size());
    std::vector<WeightedParams> terms;
    for (std::size_t k = 0; k < reports.size(); ++k) terms.push_back({w[k], &reports[k].model});
    const ParamVector sas = sas_aggregate(reports, w, testing::random_like(rng, structure));
    const ParamVector dense = linear_combine(terms);
    for (std::size_t l = 0; l < sas.layers.size(); ++l)
      for (std::size_t j = 0; j < sas.layers[l].size(); ++j)
        worst = std::max(worst, std::fabs(static_cast<double>(sas.layers[l].values[j]) -
                                          dense.layers[l].values[j]));
  }
  v.require(worst <= kSasTolerance, fmt("max deviation %.3g", worst));
  if (v.pass) v.detail = fmt("100 instances, max deviation %.3g", worst);
  return v;
}

Verdict aggregation_weights_suite() {
  Verdict v;
  Rng rng(102);
  AggConfig cfg;
  auto on_simplex = [](const std::vector<double>& w) {
    double s = 0.0;
    for (double x : w) {
      if (!(x >= 0.0)) return false;
      s += x;
    }
    return std::fabs(s - 1.0) <= kSimplexTolerance;
  };
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = testing::pick(rng, 1, 10);
    const bool zero = trial % 10 == 0;
    std::vector<double> kl(k), ratios(k);
    std::vector<std::vector<double>> prev(k), next(k);
    for (std::size_t i = 0; i < k; ++i) {
      kl[i] = zero ? 0.0 : testing::uniform(rng, 0, 2);
      ratios[i] = zero ? 0.0 : testing::uniform(rng, 0, 1);
      prev[i] = {testing::uniform(rng, -1, 1), testing::uniform(rng, -1, 1)};
      next[i] = zero ? prev[i]
                     : std::vector<double>{testing::uniform(rng, -1, 1),
                                           testing::uniform(rng, -1, 1)};
    }
    cfg.gamma_agg = testing::uniform(rng, 0, 1);
    cfg.delta_agg = 1.0 - cfg.gamma_agg;
    const auto kw = klaw_weights(kl);
    const auto pw = praw_weights(ratios);
    const auto aw = klpwa_client_weights(kw, pw, cfg);
    const auto cw = cosine_weights(prev, next);
    v.require(on_simplex(kw) && on_simplex(pw) && on_simplex(aw) && on_simplex(cw),
              fmt("trial %d left the simplex", trial));
    if (zero) {
      const std::vector<double> uniform(k, 1.0 / static_cast<double>(k));
      for (const auto* w : {&kw, &pw, &cw})
        for (std::size_t i = 0; i < k; ++i)
          v.require(std::fabs((*w)[i] - uniform[i]) <= kSimplexTolerance,
                    fmt("trial %d: degenerate input not uniform", trial));
    }
  }
  const auto hand = praw_weights({0.3, 0.6});
  v.require(std::fabs(hand[0] - 0.2) <= kHandTolerance && std::fabs(hand[1] - 0.8) <= kHandTolerance,
            fmt("ratio hand case gave [%.17g, %.17g]", hand[0], hand[1]));
  if (v.pass) v.detail = "1000 inputs, ratio hand case [0.3, 0.6] -> [0.2, 0.8]";
  return v;
}

Verdict gradient_suite() {
  Verdict v;
  Rng rng(103);
  LossWeights w;
  w.delta_kl = 0.13;
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const auto inst =
        testing::random_loss_instance(rng, testing::pick(rng, 2, 16), testing::pick(rng, 1, 8));
    for (const auto& [name, f] : testing::loss_terms(inst, w)) {
      const double err = testing::embedding_grad_error(f, inst.emb);
      worst = std::max(worst, err);
      v.require(err < kGradTolerance, fmt("%s trial %d: relative error %.3g", name, trial, err));
    }
  }
  for (std::uint64_t seed = 1; seed <= 3; ++seed) {
    const double err = testing::network_grad_error(rng, seed);
    worst = std::max(worst, err);
    v.require(err < kGradTolerance, fmt("network seed %llu: relative error %.3g",
                                        static_cast<unsigned long long>(seed), err));
  }
  if (v.pass) v.detail = fmt("20 instances x 5 terms + 3 networks, worst %.3g", worst);
  return v;
}

Verdict dbscan_oracle() {
  Verdict v;
  Rng rng(104);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = testing::pick(rng, 1, 64);
    const Matrix x = testing::blobs(rng, n, testing::pick(rng, 1, 3));
    const double eps = testing::uniform(rng, 0.1, 1.2);
    const std::size_t min_pts = testing::pick(rng, 1, 6);
    v.require(dbscan(x, eps, min_pts) == oracle::dbscan(x, eps, min_pts),
              fmt("trial %d (n %zu, eps %.3f, min_pts %zu) differs", trial, n, eps, min_pts));
  }
  if (v.pass) v.detail = "200 instances";
  return v;
}

Verdict crr_truth_table() {
  Verdict v;
  const auto cases = testing::gate_cases();
  for (const auto& c : cases) {
    const auto got = testing::replay(c);
    if (got != c.expected) {
      std::string seq;
      for (const auto& t : got) seq += t + " ";
      v.require(false, std::string(c.name) + " replayed as: " + seq);
    }
  }
  v.require(cases.size() >= 12, "fewer than 12 cases");
  if (v.pass) v.detail = fmt("%zu scripted traces", cases.size());
  return v;
}

Verdict wire_format() {
  Verdict v;
  Rng rng(106);
  for (int trial = 0; trial < 1000; ++trial) {
    const ClientReport r = testing::random_report(rng);
    const auto bytes = wire::encode(r);
    v.require(wire::decode(bytes) == r && bytes.size() == wire::encoded_size(r.model, r.mask),
              fmt("round trip %d differs", trial));
  }

  ClientReport layer;
  auto& w = layer.model.add_layer("w", {100, 10}, true);
  for (std::size_t j = 0; j < 1000; ++j) w.values[j] = static_cast<float>(j + 1);
  layer.mask = magnitude_prune(layer.model, full_mask(layer.model), 0.7);
  layer.model = apply_mask(layer.model, layer.mask);
  layer.pruning_ratio = static_cast<float>(pruning_ratio(layer.mask));
  const std::size_t body = wire::encode(layer).size() - wire::kHeaderBytes -
                           wire::layer_meta_bytes(layer.model.layers[0]);
  v.require(body == 1325, fmt("70%% layer body is %zu bytes", body));

  std::size_t rejected = 0;
  for (int trial = 0; trial < 2000; ++trial) {
    auto bytes = wire::encode(testing::random_report(rng));
    if (trial % 2 == 0) {
      for (std::size_t f = testing::pick(rng, 1, 4); f > 0; --f)
        bytes[testing::pick(rng, 0, bytes.size() - 1)] ^=
            static_cast<std::uint8_t>(1u << testing::pick(rng, 0, 7));
    } else {
      bytes.resize(testing::pick(rng, 0, bytes.size() - 1));
    }
    try {
      wire::decode(bytes);
    } catch (const Error&) {
      ++rejected;
    } catch (const std::exception& e) {
      v.require(false, fmt("corrupted input %d raised %s", trial, e.what()));
    }
  }
  if (v.pass)
    v.detail = fmt("1000 round trips, 1325-byte body, 2000 corrupted inputs (%zu rejected)",
                   rejected);
  return v;
}

Verdict metrics_oracle() {
  Verdict v;
  Rng rng(107);
  std::size_t evaluated = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const auto inst = testing::random_retrieval(rng);
    const auto expect = oracle::retrieval(inst.emb, inst.ids, inst.cams, inst.is_query);
    if (expect.valid == 0) continue;
    ++evaluated;
    const auto got = evaluate_retrieval(inst.emb, inst.ids, inst.cams, inst.is_query);
    bool same = got.valid_queries == expect.valid &&
                std::fabs(got.rank1 - expect.rank1) <= kMetricTolerance &&
                std::fabs(got.mean_ap - expect.mean_ap) <= kMetricTolerance &&
                got.cmc.size() == expect.cmc.size();
    for (std::size_t k = 0; same && k < got.cmc.size(); ++k)
      same = std::fabs(got.cmc[k] - expect.cmc[k]) <= kMetricTolerance;
    v.require(same, fmt("instance %d differs from brute force", trial));
  }
  v.require(evaluated >= 50, fmt("only %zu instances had valid queries", evaluated));

  Matrix emb(5, 2);
  const double angle[] = {0.0, 0.0, 0.45, 0.64, 1.5};
  for (std::size_t i = 0; i < 5; ++i) {
    emb(i, 0) = std::cos(angle[i]);
    emb(i, 1) = std::sin(angle[i]);
  }
  const double ap =
      evaluate_retrieval(emb, {0, 0, 1, 0, 2}, {0, 1, 1, 1, 1}, {1, 0, 0, 0, 0}).mean_ap;
  v.require(std::fabs(ap - 5.0 / 6.0) <= kApHandTolerance, fmt("hand AP %.12f", ap));
  if (v.pass) v.detail = fmt("%zu instances, hand AP %.4f", evaluated, ap);
  return v;
}

// -- end to end ---------------------------------------------------------------

ExperimentConfig desk_config() {
  ExperimentConfig cfg;
  cfg.num_clients = 8;
  cfg.rounds = 20;
  cfg.local_epochs = 5;
  cfg.loss.delta_kl = 0.13;
  cfg.prune.target_ratio = 0.70;
  cfg.prune.per_event_cap = 0.09;
  cfg.prune.current_increment = 0.09;
  cfg.prune.eval_epochs_max = 10;
  return cfg;
}

std::string csv_of(const ExperimentResult& r) {
  std::ostringstream out;
  write_rounds_csv(out, r.rounds);
  return out.str();
}

struct DeskRuns {
  ExperimentResult pruned, dense;
};

const DeskRuns& desk_runs() {
  static const DeskRuns runs = [] {
    ExperimentConfig cfg = desk_config();
    DeskRuns r;
    r.pruned = run_experiment(cfg);
    cfg.pruning_enabled = false;
    r.dense = run_experiment(cfg);
    return r;
  }();
  return runs;
}

Verdict desk_experiment() {
  Verdict v;
  const auto& runs = desk_runs();
  const auto& last_pruned = runs.pruned.rounds.back().clients;
  const auto& last_dense = runs.dense.rounds.back().clients;
  std::size_t reached = 0;
  double rank1_pruned = 0.0, rank1_dense = 0.0;
  for (const auto& c : last_pruned) {
    reached += c.pruning_ratio >= kMinClientRatio;
    rank1_pruned += c.rank1;
  }
  for (const auto& c : last_dense) rank1_dense += c.rank1;
  const double n = static_cast<double>(last_pruned.size());
  const double drop = (rank1_dense - rank1_pruned) / n;
  std::uint64_t up_pruned = 0, up_dense = 0;
  for (const auto& r : runs.pruned.rounds)
    for (const auto& c : r.clients) up_pruned += c.upload_bytes;
  for (const auto& r : runs.dense.rounds)
    for (const auto& c : r.clients) up_dense += c.upload_bytes;
  const double saved = wire::reduction(up_pruned, up_dense);
  v.require(reached >= kMinClientsPruned,
            fmt("(a) %zu of 8 clients reached ratio %.2f", reached, kMinClientRatio));
  v.require(drop <= kMaxRank1Drop, fmt("(b) Rank-1 drop %.4f (pruned %.4f, dense %.4f)", drop,
                                       rank1_pruned / n, rank1_dense / n));
  v.require(saved >= kMinUploadReduction, fmt("(c) upload reduction %.4f", saved));
  const std::string numbers =
      fmt("(a) %zu/8 clients >= %.2f, (b) Rank-1 %.4f vs dense %.4f, drop %.4f, "
          "(c) upload reduction %.4f",
          reached, kMinClientRatio, rank1_pruned / n, rank1_dense / n, drop, saved);
  v.detail = v.pass ? numbers : v.detail + "; " + numbers;
  return v;
}

Verdict determinism() {
  Verdict v;
  ExperimentConfig cfg = desk_config();
  const std::string first = csv_of(desk_runs().pruned);
  const ExperimentResult again = run_experiment(cfg);
  v.require(csv_of(again) == first, "rerun CSV differs");
  v.require(again.last_messages == desk_runs().pruned.last_messages, "rerun messages differ");
  cfg.parallel_clients = true;
  const ExperimentResult par = run_experiment(cfg);
  v.require(csv_of(par) == first, "parallel CSV differs from sequential");
  v.require(par.final_global == again.final_global, "parallel global model differs");
  for (std::size_t t = 0; t < par.rounds.size(); ++t)
    v.require(par.rounds[t].global_checksum == again.rounds[t].global_checksum,
              fmt("parallel checksum differs at round %zu", t + 1));
  if (v.pass) v.detail = fmt("CSV %zu bytes identical across reruns and parallel mode", first.size());
  return v;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;
  std::function<Verdict()> run;
};

}  // namespace
}  // namespace fedklpr

int main() {
  using namespace fedklpr;
  const std::vector<Criterion> criteria{
      {1, "sas-dense-equivalence", 5, sas_dense_equivalence},
      {2, "aggregation-weights", 60, aggregation_weights_suite},
      {3, "loss-gradients", 60, gradient_suite},
      {4, "dbscan-oracle", 30, dbscan_oracle},
      {5, "crr-truth-table", 60, crr_truth_table},
      {6, "wire-format", 60, wire_format},
      {7, "retrieval-metrics-oracle", 60, metrics_oracle},
      {8, "desk-experiment", 600, desk_experiment},
      {9, "determinism", 600, determinism},
  };
  int failures = 0;
  for (const auto& c : criteria) {
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v.pass = false;
      v.detail = std::string("exception: ") + e.what();
    }
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (secs > c.budget_seconds) {
      v.detail += fmt(" (over the %.0f s budget)", c.budget_seconds);
      v.pass = false;
    }
    failures += !v.pass;
    std::printf("[%s] %d %-26s %7.2fs  %s\n", v.pass ? "PASS" : "FAIL", c.id, c.name, secs,
                v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria passed\n", static_cast<int>(criteria.size()) - failures,
              criteria.size());
  return failures == 0 ? 0 : 1;
}
