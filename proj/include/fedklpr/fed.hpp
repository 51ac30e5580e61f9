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

// Round orchestration.
//
// Each round the server broadcasts the dense global model; every client
// masks it with its own pruning mask, trains locally, optionally prunes
// under the recovery gate, measures how far its feature distribution moved
// and uploads a sparse report. The server turns the reports into weights,
// aggregates and records per-client metrics of the next personalised models.

#pragma once

#include <cstdint>
#include <exception>
#include <functional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include "fedklpr/agg.hpp"
#include "fedklpr/error.hpp"
#include "fedklpr/losses.hpp"
#include "fedklpr/matrix.hpp"
#include "fedklpr/nnet.hpp"
#include "fedklpr/params.hpp"
#include "fedklpr/prune.hpp"
#include "fedklpr/pseudo.hpp"
#include "fedklpr/synthdata.hpp"
#include "fedklpr/wire.hpp"

namespace fedklpr {

struct ExperimentConfig {
  std::size_t num_clients = 8;
  std::size_t rounds = 20;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 16;
  std::uint64_t seed = 2025;
  double learning_rate = 3.5e-4;

  NetConfig net;          // net.seed is derived from `seed`
  LossWeights loss;
  double tau = 0.05;
  double memory_momentum = 0.2;
  double dbscan_eps = 0.3;
  std::size_t dbscan_min_pts = 3;

  AggConfig agg;
  bool pruning_enabled = true;
  PruneControllerState prune;
  CrrState crr;

  SkewSpec data;          // data.seed is derived from `seed`
  bool identical_clients = false;  // every client gets client 0's data

  bool parallel_clients = false;

  void validate() const {
    if (num_clients == 0 || num_clients > 0xFFFF)
      throw Error(ErrorCode::kInvalidConfig, "num_clients must be in [1, 65535]");
    if (rounds == 0 || rounds > 0xFFFF)
      throw Error(ErrorCode::kInvalidConfig, "rounds must be in [1, 65535]");
    if (local_epochs == 0)
      throw Error(ErrorCode::kInvalidConfig, "local_epochs must be >= 1");
    if (batch_size == 0)
      throw Error(ErrorCode::kInvalidConfig, "batch_size must be >= 1");
    if (!(learning_rate > 0.0))
      throw Error(ErrorCode::kInvalidConfig, "learning_rate must be positive");
    if (!(tau > 0.0))
      throw Error(ErrorCode::kInvalidConfig, "loss.tau must be positive");
    if (!(memory_momentum >= 0.0 && memory_momentum <= 1.0))
      throw Error(ErrorCode::kInvalidConfig, "loss.memory_momentum must be in [0, 1]");
    if (!(dbscan_eps > 0.0) || dbscan_min_pts == 0)
      throw Error(ErrorCode::kInvalidConfig,
                  "dbscan.eps must be > 0 and dbscan.min_pts >= 1");
    if (net.input_dim != data.input_dim)
      throw Error(ErrorCode::kInvalidConfig,
                  "net.input_dim must equal data.input_dim");
    net.validate();
    loss.validate();
    agg.validate();
    prune.validate();
    crr.validate();
    data.validate();
  }

  NetConfig derived_net() const {
    NetConfig n = net;
    n.seed = seed * 0x9E3779B97F4A7C15ull + 0x51;
    return n;
  }
  SkewSpec derived_data() const {
    SkewSpec d = data;
    d.seed = seed * 0x9E3779B97F4A7C15ull + 0xDA7A;
    return d;
  }
};

// What happened in the pruning phase of one local round.
enum class PruneEvent { kDisabled, kHalted, kSkipped, kCommitted, kRolledBack };

inline const char* to_string(PruneEvent e) {
  switch (e) {
    case PruneEvent::kDisabled: return "disabled";
    case PruneEvent::kHalted: return "halted";
    case PruneEvent::kSkipped: return "skipped";
    case PruneEvent::kCommitted: return "commit";
    case PruneEvent::kRolledBack: return "rollback";
  }
  return "unknown";
}

struct ClientState {
  ClientDataset data;
  PruneMask mask;
  PruneControllerState controller;
  CrrState crr;
  std::mt19937_64 rng;
  Matrix validation_batch;
};

struct LocalRoundResult {
  ClientReport report;
  std::vector<double> prev_mean_embedding;  // for the cosine baseline
  std::vector<double> new_mean_embedding;
  double holdout_acc = 0.0;
  PruneEvent prune_event = PruneEvent::kDisabled;
  std::size_t skipped_epochs = 0;
};

namespace detail {

inline std::vector<double> mean_embedding(const ParamVector& model,
                                          const NetConfig& cfg, const Matrix& batch) {
  const Matrix emb = forward(model, cfg, batch);
  std::vector<double> mean(emb.cols(), 0.0);
  for (std::size_t i = 0; i < emb.rows(); ++i)
    for (std::size_t c = 0; c < emb.cols(); ++c) mean[c] += emb(i, c);
  normalize_in_place(mean);
  return mean;
}

inline double holdout_accuracy(const ParamVector& model, const NetConfig& cfg,
                               const SampleSet& holdout) {
  return evaluate_retrieval(forward(model, cfg, holdout.x), holdout).rank1;
}

}  // namespace detail

// One local epoch: re-cluster, rebuild the memory bank and run minibatch
// Adam steps on the full objective. Returns false when clustering left no
// inliers and the epoch was skipped.
inline bool train_epoch(ParamVector& model, const ParamVector& reference,
                        ClientState& client, AdamState& adam,
                        const ExperimentConfig& cfg, const NetConfig& net) {
  const SampleSet& train = client.data.train;
  const Matrix all = forward(model, net, train.x);
  const auto pids = dbscan(all, cfg.dbscan_eps, cfg.dbscan_min_pts);
  PseudoLabeling labels;
  try {
    labels = assign_proxies(pids, train.camera);
  } catch (const Error& e) {
    if (e.code() == ErrorCode::kEmptyEpoch) return false;
    throw;
  }
  MemoryBank bank = build_memory_bank(all, labels, cfg.memory_momentum, cfg.tau);

  std::vector<std::size_t> order = labels.inlier_indices();
  std::shuffle(order.begin(), order.end(), client.rng);
  for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
    const std::size_t end = std::min(order.size(), start + cfg.batch_size);
    const std::vector<std::size_t> idx(order.begin() + static_cast<long>(start),
                                       order.begin() + static_cast<long>(end));
    const Matrix xb = train.x.select_rows(idx);
    const PseudoLabeling lb = labels.select(idx);
    const ForwardCache cache = forward_cached(model, net, xb);
    const Matrix& emb = cache.embeddings;

    LossTerms terms;
    terms.intra = intra_loss(bank, emb, lb);
    terms.inter = inter_loss(bank, emb, lb, cfg.loss.k_hard);
    terms.camera_aware = camera_aware_loss(bank, emb, lb, cfg.loss.k_hard);
    terms.kl = cfg.loss.delta_kl > 0.0
                   ? kll_term(emb, forward(reference, net, xb))
                   : LossResult{0.0, Matrix(emb.rows(), emb.cols())};
    const LossResult total = total_loss(terms, cfg.loss);
    const ParamVector grad = backward(model, net, cache, total.grad);
    adam_step(adam, model, grad, client.mask);
    for (std::size_t i = 0; i < idx.size(); ++i)
      memory_update(bank, static_cast<std::size_t>(lb.proxy[i]), emb.row(i));
  }
  return true;
}

inline ClientState make_client_state(ClientDataset data, const ParamVector& structure,
                                     const ExperimentConfig& cfg) {
  ClientState s;
  s.mask = full_mask(structure);
  s.controller = cfg.prune;
  s.crr = cfg.crr;
  // Seeded by the dataset's client id so identical datasets train identically.
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed),
                    static_cast<std::uint32_t>(cfg.seed >> 32), 0xD0u,
                    static_cast<std::uint32_t>(data.client_id)};
  s.rng = std::mt19937_64(seq);
  s.validation_batch = data.train.x.select_rows(data.validation_rows);
  s.data = std::move(data);
  return s;
}

inline ParamVector personalize(const ParamVector& global, const PruneMask& mask) {
  return apply_mask(global, mask);
}

// Local training, gated pruning, KL weight and report for one round.
inline LocalRoundResult local_round(ClientState& client,
                                    const ParamVector& personalized,
                                    const ExperimentConfig& cfg,
                                    std::uint16_t client_id, std::uint16_t round) {
  const NetConfig net = cfg.derived_net();
  LocalRoundResult out;
  ParamVector model = personalized;
  AdamState adam = AdamState::for_model(model, cfg.learning_rate);

  for (std::size_t e = 0; e < cfg.local_epochs; ++e)
    if (!train_epoch(model, personalized, client, adam, cfg, net)) ++out.skipped_epochs;

  out.holdout_acc = detail::holdout_accuracy(model, net, client.data.holdout);
  if (!cfg.pruning_enabled) {
    out.prune_event = PruneEvent::kDisabled;
  } else if (client.crr.pruning_halted) {
    out.prune_event = PruneEvent::kHalted;
  } else if (crr_stage1(client.crr, out.holdout_acc) == Stage1Decision::kSkip) {
    out.prune_event = PruneEvent::kSkipped;
  } else {
    const double ratio = pruning_ratio(client.mask);
    const ControllerDecision plan =
        controller_step(client.controller, ratio, PruneOutcome::kNone);
    if (plan.halt) {
      client.crr.pruning_halted = true;
      client.crr.pre_prune_acc.reset();
      out.prune_event = PruneEvent::kHalted;
    } else {
      const ParamVector saved_model = model;
      const PruneMask saved_mask = client.mask;
      const AdamState saved_adam = adam;
      client.mask = magnitude_prune(model, client.mask, plan.next_target);
      model = apply_mask(std::move(model), client.mask);
      if (!train_epoch(model, personalized, client, adam, cfg, net)) ++out.skipped_epochs;
      const double post = detail::holdout_accuracy(model, net, client.data.holdout);
      const Stage2Decision verdict = crr_stage2(client.crr, post);
      if (verdict == Stage2Decision::kRollback) {
        model = saved_model;
        client.mask = saved_mask;
        adam = saved_adam;
        out.prune_event = PruneEvent::kRolledBack;
      } else {
        out.prune_event = PruneEvent::kCommitted;
      }
      const ControllerDecision next = controller_step(
          client.controller, pruning_ratio(client.mask), to_outcome(verdict));
      if (next.halt) client.crr.pruning_halted = true;
    }
  }

  out.report.client_id = client_id;
  out.report.round = round;
  out.report.mask = client.mask;
  out.report.pruning_ratio = static_cast<float>(pruning_ratio(client.mask));
  out.report.klaw_raw = static_cast<float>(
      klaw_raw(personalized, model, net, client.validation_batch));
  out.report.dataset_size = client.data.train.size();
  out.prev_mean_embedding =
      detail::mean_embedding(personalized, net, client.validation_batch);
  out.new_mean_embedding = detail::mean_embedding(model, net, client.validation_batch);
  out.report.model = std::move(model);
  return out;
}

// Aggregation weights for one round under the configured strategy.
inline std::vector<double> aggregation_weights(
    const std::vector<LocalRoundResult>& results, const AggConfig& agg) {
  std::vector<double> klaw, ratios;
  std::vector<std::vector<double>> prev, next;
  for (const auto& r : results) {
    klaw.push_back(r.report.klaw_raw);
    ratios.push_back(r.report.pruning_ratio);
    prev.push_back(r.prev_mean_embedding);
    next.push_back(r.new_mean_embedding);
  }
  switch (agg.strategy) {
    case AggStrategy::kFedAvg: {
      std::vector<double> n;
      for (const auto& r : results)
        n.push_back(static_cast<double>(r.report.dataset_size));
      return detail::normalize_or_uniform(std::move(n), "fedavg_weights");
    }
    case AggStrategy::kCosine:
      return cosine_weights(prev, next);
    case AggStrategy::kKlpwa:
      return klpwa_client_weights(klaw_weights(klaw), praw_weights(ratios), agg);
  }
  throw Error(ErrorCode::kInvalidConfig, "unknown aggregation strategy");
}

struct ClientRoundStats {
  std::size_t client = 0;
  double rank1 = 0.0;
  double mean_ap = 0.0;
  double pruning_ratio = 0.0;
  double klaw = 0.0;
  double weight = 0.0;
  std::uint64_t upload_bytes = 0;
  std::uint64_t download_bytes = 0;
  double holdout_acc = 0.0;
  PruneEvent prune_event = PruneEvent::kDisabled;
  std::size_t skipped_epochs = 0;
};

struct RoundRecord {
  std::size_t round = 0;  // 1-based
  std::vector<ClientRoundStats> clients;
  std::uint64_t global_checksum = 0;
};

struct ExperimentResult {
  std::vector<RoundRecord> rounds;
  ParamVector final_global;
  std::vector<std::vector<std::uint8_t>> last_messages;  // per client
  std::uint64_t dense_message_bytes = 0;
};

using RoundCallback = std::function<void(const RoundRecord&)>;

// The client datasets of an experiment, in client order.
inline std::vector<ClientDataset> make_datasets(const ExperimentConfig& cfg) {
  std::vector<ClientDataset> datasets =
      generate_clients(cfg.derived_data(), cfg.identical_clients ? 1 : cfg.num_clients);
  if (cfg.identical_clients) datasets.resize(cfg.num_clients, datasets.front());
  return datasets;
}

inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       const RoundCallback& on_round = {}) {
  cfg.validate();
  const NetConfig net = cfg.derived_net();
  std::vector<ClientDataset> datasets = make_datasets(cfg);

  ParamVector global = init_params(net);
  std::vector<ClientState> clients;
  for (auto& ds : datasets) clients.push_back(make_client_state(std::move(ds), global, cfg));

  ExperimentResult result;
  result.dense_message_bytes = wire::dense_message_bytes(global);
  result.last_messages.resize(cfg.num_clients);
  std::vector<LocalRoundResult> local(cfg.num_clients);

  for (std::size_t t = 1; t <= cfg.rounds; ++t) {
    auto run_client = [&](std::size_t k) {
      local[k] = local_round(clients[k], personalize(global, clients[k].mask), cfg,
                             static_cast<std::uint16_t>(k),
                             static_cast<std::uint16_t>(t));
    };
    if (cfg.parallel_clients) {
      std::vector<std::exception_ptr> failures(cfg.num_clients);
      {
        std::vector<std::jthread> workers;
        for (std::size_t k = 0; k < cfg.num_clients; ++k)
          workers.emplace_back([&, k] {
            try {
              run_client(k);
            } catch (...) {
              failures[k] = std::current_exception();
            }
          });
      }
      for (auto& f : failures)
        if (f) std::rethrow_exception(f);
    } else {
      for (std::size_t k = 0; k < cfg.num_clients; ++k) run_client(k);
    }

    const std::vector<double> weights = aggregation_weights(local, cfg.agg);
    std::vector<ClientReport> reports;
    reports.reserve(local.size());
    for (auto& r : local) reports.push_back(r.report);
    global = cfg.agg.sas_enabled
                 ? sas_aggregate(reports, weights, global, cfg.agg.empty_policy)
                 : dense_aggregate(reports, weights);

    RoundRecord record;
    record.round = t;
    record.global_checksum = checksum(global);
    for (std::size_t k = 0; k < cfg.num_clients; ++k) {
      const auto& r = local[k];
      auto message = wire::encode(r.report);
      ClientRoundStats s;
      s.client = k;
      const SampleSet& test = clients[k].data.test;
      const auto metrics = evaluate_retrieval(
          forward(personalize(global, clients[k].mask), net, test.x), test);
      s.rank1 = metrics.rank1;
      s.mean_ap = metrics.mean_ap;
      s.pruning_ratio = r.report.pruning_ratio;
      s.klaw = r.report.klaw_raw;
      s.weight = weights[k];
      s.upload_bytes = message.size();
      s.download_bytes = result.dense_message_bytes;
      s.holdout_acc = r.holdout_acc;
      s.prune_event = r.prune_event;
      s.skipped_epochs = r.skipped_epochs;
      record.clients.push_back(s);
      result.last_messages[k] = std::move(message);
    }
    if (on_round) on_round(record);
    result.rounds.push_back(std::move(record));
  }
  result.final_global = std::move(global);
  return result;
}

}  // namespace fedklpr
