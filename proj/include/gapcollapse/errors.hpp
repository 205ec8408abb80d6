// Copyright 2026 The gapcollapse Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//    http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#ifndef GAPCOLLAPSE_ERRORS_HPP
#define GAPCOLLAPSE_ERRORS_HPP

#include <stdexcept>
#include <string>
#include <string_view>

namespace gapcollapse {

enum class ErrorCode {
  InvalidArgument,
  NotHermitian,
  NotPositive,
  TraceNotOne,
  NotUnitNorm,
  DecompositionFailure,
  DegenerateDraw,
  NotProjector,
  NotOrthogonal,
  NotComplete,
  ZeroBranch,
  StepTooLarge,
  NonFinite,
  DegenerateWeight,
  EmptySample,
  ConfigInvalid,
  ExperimentFailed,
  IoFailure,
};

constexpr std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::NotHermitian: return "NotHermitian";
    case ErrorCode::NotPositive: return "NotPositive";
    case ErrorCode::TraceNotOne: return "TraceNotOne";
    case ErrorCode::NotUnitNorm: return "NotUnitNorm";
    case ErrorCode::DecompositionFailure: return "DecompositionFailure";
    case ErrorCode::DegenerateDraw: return "DegenerateDraw";
    case ErrorCode::NotProjector: return "NotProjector";
    case ErrorCode::NotOrthogonal: return "NotOrthogonal";
    case ErrorCode::NotComplete: return "NotComplete";
    case ErrorCode::ZeroBranch: return "ZeroBranch";
    case ErrorCode::StepTooLarge: return "StepTooLarge";
    case ErrorCode::NonFinite: return "NonFinite";
    case ErrorCode::DegenerateWeight: return "DegenerateWeight";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::ConfigInvalid: return "ConfigInvalid";
    case ErrorCode::ExperimentFailed: return "ExperimentFailed";
    case ErrorCode::IoFailure: return "IoFailure";
  }
  return "Unknown";
}

// Every failure raised by the library. `violation()` carries the size of the
// offending quantity where one exists (e.g. the trace error for TraceNotOne).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what, double violation = 0.0)
      : std::runtime_error(std::string(to_string(code)) + ": " + what),
        code_(code),
        violation_(violation) {}

  ErrorCode code() const noexcept { return code_; }
  double violation() const noexcept { return violation_; }

 private:
  ErrorCode code_;
  double violation_;
};

}  // namespace gapcollapse

#endif  // GAPCOLLAPSE_ERRORS_HPP
