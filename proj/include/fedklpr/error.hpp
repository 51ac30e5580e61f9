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

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace fedklpr {

// Every failure raised by the library carries one of these codes so callers
// (and the CLI) can branch on the kind of error without parsing messages.
enum class ErrorCode {
  kStructuralMismatch,
  kDegenerateModel,
  kEmptyInput,
  kInvalidParameter,
  kInvalidTarget,
  kProtocolOrder,
  kEmptyEpoch,
  kUndefinedMetric,
  kInvalidConfig,
  kIo,
  // wire codec
  kBadMagic,
  kVersionMismatch,
  kTruncated,
  kPopcountMismatch,
  kMalformed,
  kRatioMaskInconsistent,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kStructuralMismatch: return "structural-mismatch";
    case ErrorCode::kDegenerateModel: return "degenerate-model";
    case ErrorCode::kEmptyInput: return "empty-input";
    case ErrorCode::kInvalidParameter: return "invalid-parameter";
    case ErrorCode::kInvalidTarget: return "invalid-target";
    case ErrorCode::kProtocolOrder: return "protocol-order";
    case ErrorCode::kEmptyEpoch: return "empty-epoch";
    case ErrorCode::kUndefinedMetric: return "undefined-metric";
    case ErrorCode::kInvalidConfig: return "invalid-config";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kBadMagic: return "bad-magic";
    case ErrorCode::kVersionMismatch: return "version-mismatch";
    case ErrorCode::kTruncated: return "truncated";
    case ErrorCode::kPopcountMismatch: return "popcount-mismatch";
    case ErrorCode::kMalformed: return "malformed";
    case ErrorCode::kRatioMaskInconsistent: return "ratio-mask-inconsistent";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        detail_(what) {}

  ErrorCode code() const noexcept { return code_; }
  // The message without the code prefix.
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace fedklpr
