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

// Umbrella header for the FedKLPR simulator.

#pragma once

#include "fedklpr/agg.hpp"
#include "fedklpr/config.hpp"
#include "fedklpr/error.hpp"
#include "fedklpr/fed.hpp"
#include "fedklpr/losses.hpp"
#include "fedklpr/matrix.hpp"
#include "fedklpr/nnet.hpp"
#include "fedklpr/params.hpp"
#include "fedklpr/prune.hpp"
#include "fedklpr/pseudo.hpp"
#include "fedklpr/report.hpp"
#include "fedklpr/synthdata.hpp"
#include "fedklpr/wire.hpp"
