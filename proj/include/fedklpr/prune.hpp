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

// Unstructured magnitude pruning, the per-client pruning-ratio controller
// and the two-stage cross-round recovery gate.
//
// A pruning event in one local round runs:
//
//   crr_stage1(acc)            -> skip | proceed (records pre-prune acc)
//   controller_step(.., kNone) -> halt | next target
//   magnitude_prune + fine-tune
//   crr_stage2(post acc)       -> commit | rollback
//   controller_step(.., decision)
//
// All state machines here are pure functions of their inputs so a scripted
// accuracy trace replays to the same decisions.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <utility>
#include <tuple>
#include <vector>

#include "fedklpr/error.hpp"
#include "fedklpr/params.hpp"

namespace fedklpr {

// Slack used when converting a requested ratio into a coordinate count, so
// 0.7 * 10 lands on 7 rather than 8.
inline constexpr double kRatioSlack = 1e-9;

inline std::size_t target_pruned_count(double target, std::size_t prunable) {
  return static_cast<std::size_t>(
      std::ceil(target * static_cast<double>(prunable) - kRatioSlack));
}

// Clears the smallest-magnitude kept prunable coordinates until the global
// prunable ratio reaches `target`. Existing cleared bits are preserved; ties
// go to the lower (layer, coordinate) position.
inline PruneMask magnitude_prune(const ParamVector& p, const PruneMask& m,
                                 double target) {
  require_same_structure(p, m, "magnitude_prune");
  const std::size_t total = prunable_count(m);
  if (total == 0)
    throw Error(ErrorCode::kDegenerateModel,
                "magnitude_prune: no prunable coordinates");
  const std::size_t already = pruned_count(m);
  if (!(target <= 1.0) || target_pruned_count(target, total) < already)
    throw Error(ErrorCode::kInvalidTarget,
                "magnitude_prune: target below current ratio or above 1");
  const std::size_t want = target_pruned_count(target, total);

  struct Candidate {
    float magnitude;
    std::size_t layer;
    std::size_t index;
  };
  std::vector<Candidate> kept;
  for (std::size_t li = 0; li < p.layers.size(); ++li) {
    if (!p.layers[li].prunable) continue;
    const auto& v = p.layers[li].values;
    const auto& bits = m.layers[li].bits;
    for (std::size_t j = 0; j < v.size(); ++j)
      if (bits[j]) kept.push_back({std::fabs(v[j]), li, j});
  }
  const std::size_t extra = want - already;
  auto order = [](const Candidate& a, const Candidate& b) {
    return std::tie(a.magnitude, a.layer, a.index) <
           std::tie(b.magnitude, b.layer, b.index);
  };
  std::nth_element(kept.begin(), kept.begin() + static_cast<long>(extra),
                   kept.end(), order);

  PruneMask out = m;
  for (std::size_t k = 0; k < extra; ++k)
    out.layers[kept[k].layer].bits[kept[k].index] = 0;
  return out;
}

// -- cross-round recovery ----------------------------------------------------

struct CrrState {
  double acc_threshold = 0.55;
  double delta_rd = 0.01;
  double delta_ep = 0.03;
  std::size_t window = 3;
  std::deque<double> recent_accs;
  std::optional<double> pre_prune_acc;
  bool pruning_halted = false;

  void validate() const {
    if (window < 2)
      throw Error(ErrorCode::kInvalidConfig, "crr.window must be >= 2");
    const std::pair<const char*, double> thresholds[] = {
        {"acc_threshold", acc_threshold}, {"delta_rd", delta_rd}, {"delta_ep", delta_ep}};
    for (const auto& [key, v] : thresholds)
      if (!std::isfinite(v))
        throw Error(ErrorCode::kInvalidConfig, std::string("crr.") + key + " must be finite");
  }
};

enum class Stage1Decision { kSkip, kProceed };
enum class Stage2Decision { kCommit, kRollback };

namespace detail {
inline void check_accuracy(double acc) {
  if (!(acc >= 0.0 && acc <= 1.0))
    throw Error(ErrorCode::kInvalidParameter, "accuracy outside [0, 1]");
}
}  // namespace detail

// Proceed iff acc exceeds the threshold and the window (this round plus the
// previous window-1 rounds) shows no step-to-step gain of delta_rd or more.
inline Stage1Decision crr_stage1(CrrState& state, double train_acc) {
  detail::check_accuracy(train_acc);
  state.recent_accs.push_back(train_acc);
  while (state.recent_accs.size() > state.window) state.recent_accs.pop_front();
  state.pre_prune_acc.reset();
  if (state.pruning_halted || !(train_acc > state.acc_threshold) ||
      state.recent_accs.size() < state.window)
    return Stage1Decision::kSkip;
  double max_gain = -INFINITY;
  for (std::size_t i = 1; i < state.recent_accs.size(); ++i)
    max_gain = std::max(max_gain, state.recent_accs[i] - state.recent_accs[i - 1]);
  if (!(max_gain < state.delta_rd)) return Stage1Decision::kSkip;
  state.pre_prune_acc = train_acc;
  return Stage1Decision::kProceed;
}

// Commit iff the accuracy drop caused by pruning stays below delta_ep.
inline Stage2Decision crr_stage2(CrrState& state, double post_prune_acc) {
  detail::check_accuracy(post_prune_acc);
  if (!state.pre_prune_acc)
    throw Error(ErrorCode::kProtocolOrder,
                "crr_stage2 called without a preceding stage-1 proceed");
  const double drop = *state.pre_prune_acc - post_prune_acc;
  state.pre_prune_acc.reset();
  return drop < state.delta_ep ? Stage2Decision::kCommit
                               : Stage2Decision::kRollback;
}

// -- pruning-ratio controller ------------------------------------------------

struct PruneControllerState {
  double target_ratio = 0.70;
  double per_event_cap = 0.09;
  double current_increment = 0.09;
  double min_increment = 0.01;
  std::size_t eval_epochs_used = 0;
  std::size_t eval_epochs_max = 10;
  std::size_t consecutive_rejects = 0;
  std::size_t rejects_for_saturation = 2;

  void validate() const {
    if (!(target_ratio > 0.0 && target_ratio <= 1.0))
      throw Error(ErrorCode::kInvalidConfig, "prune.target_ratio must be in (0, 1]");
    if (!(current_increment > 0.0 && current_increment <= per_event_cap))
      throw Error(ErrorCode::kInvalidConfig,
                  "prune.increment must be in (0, prune.per_event_cap]");
    if (!(min_increment > 0.0))
      throw Error(ErrorCode::kInvalidConfig, "prune.min_increment must be positive");
    if (eval_epochs_used > eval_epochs_max)
      throw Error(ErrorCode::kInvalidConfig, "prune.eval_epochs_max is below the epochs already used");
    if (rejects_for_saturation == 0)
      throw Error(ErrorCode::kInvalidConfig,
                  "prune.rejects_for_saturation must be >= 1");
  }
};

enum class PruneOutcome { kNone, kCommit, kRollback };

struct ControllerDecision {
  bool halt = false;
  double next_target = 0.0;

  bool operator==(const ControllerDecision&) const = default;
};

inline PruneOutcome to_outcome(Stage2Decision d) {
  return d == Stage2Decision::kCommit ? PruneOutcome::kCommit
                                      : PruneOutcome::kRollback;
}

// Books the last stage-2 result (each one costs an evaluation epoch and
// rollbacks feed the saturation rule) and proposes the next target.
inline ControllerDecision controller_step(PruneControllerState& state,
                                          double current_ratio,
                                          PruneOutcome last) {
  if (last != PruneOutcome::kNone) {
    state.eval_epochs_used =
        std::min(state.eval_epochs_used + 1, state.eval_epochs_max);
    if (last == PruneOutcome::kRollback) {
      if (++state.consecutive_rejects >= state.rejects_for_saturation) {
        state.current_increment =
            std::max(state.min_increment, state.current_increment / 2.0);
        state.consecutive_rejects = 0;
      }
    } else {
      state.consecutive_rejects = 0;
    }
  }
  if (current_ratio >= state.target_ratio - kRatioSlack ||
      state.eval_epochs_used >= state.eval_epochs_max)
    return {true, current_ratio};
  return {false,
          std::min(state.target_ratio, current_ratio + state.current_increment)};
}

}  // namespace fedklpr
