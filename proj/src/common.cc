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

#include "servesim/common.h"

namespace servesim {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSchedulingInPast: return "SchedulingInPast";
    case ErrorCode::kLivelockGuard: return "LivelockGuard";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kDuplicateKey: return "DuplicateKey";
    case ErrorCode::kEmptyTable: return "EmptyTable";
    case ErrorCode::kNoDataForOperator: return "NoDataForOperator";
    case ErrorCode::kUnreachable: return "Unreachable";
    case ErrorCode::kInsufficientMemory: return "InsufficientMemory";
    case ErrorCode::kCannotSatisfy: return "CannotSatisfy";
    case ErrorCode::kRoleMismatch: return "RoleMismatch";
    case ErrorCode::kDeadlock: return "Deadlock";
    case ErrorCode::kTraceExhausted: return "TraceExhausted";
    case ErrorCode::kNoEligibleInstance: return "NoEligibleInstance";
    case ErrorCode::kDuplicateId: return "DuplicateId";
    case ErrorCode::kTokenCountMismatch: return "TokenCountMismatch";
    case ErrorCode::kUnknownRequest: return "UnknownRequest";
    case ErrorCode::kNonMonotoneTime: return "NonMonotoneTime";
    case ErrorCode::kIncompleteRun: return "IncompleteRun";
    case ErrorCode::kSchemaError: return "SchemaError";
    case ErrorCode::kCrossRefError: return "CrossRefError";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

const char* role_name(Role role) {
  switch (role) {
    case Role::kUnified: return "unified";
    case Role::kPrefill: return "prefill";
    case Role::kDecode: return "decode";
  }
  return "?";
}

Role parse_role(const std::string& text) {
  if (text == "unified") return Role::kUnified;
  if (text == "prefill") return Role::kPrefill;
  if (text == "decode") return Role::kDecode;
  fail(ErrorCode::kInvalidArgument, "unknown role '" + text + "'");
}

}  // namespace servesim
