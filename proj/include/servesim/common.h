/* Copyright 2026 The ServeSim Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

namespace servesim {

// Simulated time and durations, integer microseconds.
using Micros = std::int64_t;
using Bytes = std::int64_t;

using RequestId = std::uint64_t;
using InstanceId = std::int32_t;
using DeviceId = std::int32_t;

// Serving role of an instance.
enum class Role { kUnified, kPrefill, kDecode };

const char* role_name(Role role);
Role parse_role(const std::string& text);

enum class ErrorCode {
  kSchedulingInPast,
  kLivelockGuard,
  kParseError,
  kDuplicateKey,
  kEmptyTable,
  kNoDataForOperator,
  kUnreachable,
  kInsufficientMemory,
  kCannotSatisfy,
  kRoleMismatch,
  kDeadlock,
  kTraceExhausted,
  kNoEligibleInstance,
  kDuplicateId,
  kTokenCountMismatch,
  kUnknownRequest,
  kNonMonotoneTime,
  kIncompleteRun,
  kSchemaError,
  kCrossRefError,
  kInvalidArgument,
  kIoError,
};

const char* error_code_name(ErrorCode code);

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(error_code_name(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, message);
}

// Round half-up to the next integer microsecond.
inline Micros round_half_up(double us) {
  return static_cast<Micros>(std::floor(us + 0.5));
}

// bytes / (bytes per second), in microseconds, rounded half-up.
inline Micros transfer_micros(Bytes bytes, double bytes_per_second) {
  if (bytes <= 0) return 0;
  return round_half_up(static_cast<double>(bytes) * 1e6 / bytes_per_second);
}

inline std::int64_t ceil_div(std::int64_t a, std::int64_t b) {
  return (a + b - 1) / b;
}

}  // namespace servesim
