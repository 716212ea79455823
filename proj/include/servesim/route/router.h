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

#include <cstdint>
#include <map>
#include <span>
#include <string>

#include "servesim/common.h"

namespace servesim::route {

enum class Policy { kRoundRobin, kLeastOutstandingTokens, kPrefixAware };

const char* policy_name(Policy policy);
// "round_robin", "least_tokens" or "prefix_aware".
Policy parse_policy(const std::string& text);

// Load and cache view of one instance at decision time.
struct InstanceSnapshot {
  InstanceId id = 0;
  Role role = Role::kUnified;
  std::string model_id;
  std::int64_t outstanding_tokens = 0;  // remaining prefill + remaining output tokens
  std::int64_t prefix_match_tokens = 0;  // cached prefix of the request being routed
};

struct RouterState {
  std::uint64_t round_robin = 0;
};

// Chooses among instances serving `model_id` with role `role`. Throws
// NoEligibleInstance.
InstanceId dispatch(const std::string& model_id, Role role, std::span<const InstanceSnapshot> cluster,
                    Policy policy, RouterState& state);

enum class PairingKind { kLeastOutstandingTokens, kStatic };

struct Pairing {
  PairingKind kind = PairingKind::kLeastOutstandingTokens;
  std::map<InstanceId, InstanceId> fixed;  // prefill -> decode, for kStatic
};

// Decode instance for a request prefilled on `prefill_id`.
InstanceId select_decode(const std::string& model_id, InstanceId prefill_id,
                         std::span<const InstanceSnapshot> cluster, const Pairing& pairing);

struct PdChoice {
  InstanceId prefill = 0;
  InstanceId decode = 0;
};

PdChoice dispatch_pd(const std::string& model_id, std::span<const InstanceSnapshot> cluster, Policy policy,
                     const Pairing& pairing, RouterState& state);

}  // namespace servesim::route
