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

// Scripted accuracy traces for the recovery gate and pruning controller,
// with the decision sequence each must produce.

#pragma once

#include <cstdio>
#include <string>
#include <vector>

#include "fedklpr.hpp"

namespace fedklpr::testing {

struct GateStep {
  double acc;        // held-out accuracy after local training
  double post = 0;   // accuracy after prune + fine-tune, when pruning runs
};

struct GateCase {
  const char* name;
  CrrState crr;
  PruneControllerState controller;
  std::vector<GateStep> trace;
  std::vector<std::string> expected;
};

// Replays a trace in the same order a local round uses and returns one
// token per round: skip, halt, halted, commit@r or rollback@r (r = the
// attempted target), with "+halt" when the controller stops afterwards.
inline std::vector<std::string> replay(GateCase c) {
  std::vector<std::string> out;
  double ratio = 0.0;
  char buf[64];
  for (const auto& step : c.trace) {
    if (c.crr.pruning_halted) {
      out.push_back("halted");
      continue;
    }
    if (crr_stage1(c.crr, step.acc) == Stage1Decision::kSkip) {
      out.push_back("skip");
      continue;
    }
    const ControllerDecision plan = controller_step(c.controller, ratio, PruneOutcome::kNone);
    if (plan.halt) {
      c.crr.pruning_halted = true;
      out.push_back("halt");
      continue;
    }
    const Stage2Decision verdict = crr_stage2(c.crr, step.post);
    if (verdict == Stage2Decision::kCommit) ratio = plan.next_target;
    std::snprintf(buf, sizeof buf, "%s@%.3f",
                  verdict == Stage2Decision::kCommit ? "commit" : "rollback", plan.next_target);
    std::string token = buf;
    if (controller_step(c.controller, ratio, to_outcome(verdict)).halt) {
      c.crr.pruning_halted = true;
      token += "+halt";
    }
    out.push_back(token);
  }
  return out;
}

inline std::vector<GateStep> steady(double acc, std::size_t n, double post) {
  return std::vector<GateStep>(n, GateStep{acc, post});
}

inline std::vector<GateCase> gate_cases() {
  std::vector<GateCase> cases;
  const CrrState crr;
  const PruneControllerState ctl;

  cases.push_back({"below threshold", crr, ctl, steady(0.5, 4, 0.5),
                   {"skip", "skip", "skip", "skip"}});
  cases.push_back({"threshold is strict", crr, ctl, steady(0.55, 4, 0.55),
                   {"skip", "skip", "skip", "skip"}});
  cases.push_back({"window must fill", crr, ctl, steady(0.8, 3, 0.8),
                   {"skip", "skip", "commit@0.090"}});
  cases.push_back({"still improving", crr, ctl,
                   {{0.6}, {0.7}, {0.8}, {0.85}, {0.9}},
                   {"skip", "skip", "skip", "skip", "skip"}});
  {
    CrrState c = crr;
    c.delta_rd = 0.25;
    cases.push_back({"gain equal to delta_rd blocks", c, ctl,
                     {{0.6}, {0.6}, {0.85}, {0.85}, {0.85, 0.85}},
                     {"skip", "skip", "skip", "skip", "commit@0.090"}});
  }
  cases.push_back({"declining accuracy proceeds", crr, ctl,
                   {{0.9}, {0.85}, {0.8, 0.79}},
                   {"skip", "skip", "commit@0.090"}});
  cases.push_back({"large drop rolls back", crr, ctl,
                   {{0.8}, {0.8}, {0.8, 0.76}, {0.8, 0.8}},
                   {"skip", "skip", "rollback@0.090", "commit@0.090"}});
  cases.push_back({"small drop commits", crr, ctl,
                   {{0.8}, {0.8}, {0.8, 0.78}, {0.8, 0.8}},
                   {"skip", "skip", "commit@0.090", "commit@0.180"}});
  {
    CrrState c = crr;
    c.delta_ep = 0.25;
    cases.push_back({"drop equal to delta_ep rolls back", c, ctl,
                     {{0.85}, {0.85}, {0.85, 0.6}, {0.85, 0.61}},
                     {"skip", "skip", "rollback@0.090", "commit@0.090"}});
  }
  cases.push_back({"two rollbacks halve the increment", crr, ctl,
                   {{0.8}, {0.8}, {0.8, 0.7}, {0.8, 0.7}, {0.8, 0.8}, {0.8, 0.8}},
                   {"skip", "skip", "rollback@0.090", "rollback@0.090", "commit@0.045",
                    "commit@0.090"}});
  cases.push_back({"a commit resets the rejection count", crr, ctl,
                   {{0.8}, {0.8}, {0.8, 0.7}, {0.8, 0.8}, {0.8, 0.7}, {0.8, 0.8}},
                   {"skip", "skip", "rollback@0.090", "commit@0.090", "rollback@0.180",
                    "commit@0.180"}});
  {
    PruneControllerState p = ctl;
    p.current_increment = 0.02;
    cases.push_back({"increment never drops below the floor", crr, p,
                     {{0.8}, {0.8}, {0.8, 0.7}, {0.8, 0.7}, {0.8, 0.7}, {0.8, 0.7},
                      {0.8, 0.8}},
                     {"skip", "skip", "rollback@0.020", "rollback@0.020", "rollback@0.010",
                      "rollback@0.010", "commit@0.010"}});
  }
  {
    PruneControllerState p = ctl;
    p.eval_epochs_max = 3;
    cases.push_back({"evaluation budget runs out", crr, p, steady(0.8, 7, 0.8),
                     {"skip", "skip", "commit@0.090", "commit@0.180", "commit@0.270+halt",
                      "halted", "halted"}});
  }
  {
    PruneControllerState p = ctl;
    p.eval_epochs_max = 2;
    cases.push_back({"rollbacks also spend the budget", crr, p,
                     {{0.8}, {0.8}, {0.8, 0.7}, {0.8, 0.7}, {0.8, 0.8}},
                     {"skip", "skip", "rollback@0.090", "rollback@0.090+halt", "halted"}});
  }
  cases.push_back({"stops at the 70 percent target", crr, ctl, steady(0.8, 12, 0.8),
                   {"skip", "skip", "commit@0.090", "commit@0.180", "commit@0.270",
                    "commit@0.360", "commit@0.450", "commit@0.540", "commit@0.630",
                    "commit@0.700+halt", "halted", "halted"}});
  {
    PruneControllerState p = ctl;
    p.target_ratio = 0.05;
    cases.push_back({"first step capped by the target", crr, p, steady(0.8, 4, 0.8),
                     {"skip", "skip", "commit@0.050+halt", "halted"}});
  }
  {
    CrrState c = crr;
    c.pruning_halted = true;
    cases.push_back({"halted client never prunes", c, ctl, steady(0.9, 3, 0.9),
                     {"halted", "halted", "halted"}});
  }
  return cases;
}

}  // namespace fedklpr::testing
