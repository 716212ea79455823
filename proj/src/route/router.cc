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

#include "servesim/route/router.h"

#include <vector>

#include <fmt/format.h>

namespace servesim::route {

const char* policy_name(Policy policy) {
  switch (policy) {
    case Policy::kRoundRobin: return "round_robin";
    case Policy::kLeastOutstandingTokens: return "least_tokens";
    case Policy::kPrefixAware: return "prefix_aware";
  }
  return "?";
}

Policy parse_policy(const std::string& text) {
  if (text == "round_robin") return Policy::kRoundRobin;
  if (text == "least_tokens") return Policy::kLeastOutstandingTokens;
  if (text == "prefix_aware") return Policy::kPrefixAware;
  fail(ErrorCode::kInvalidArgument, fmt::format("unknown router policy '{}'", text));
}

namespace {

std::vector<const InstanceSnapshot*> eligible(const std::string& model_id, Role role,
                                              std::span<const InstanceSnapshot> cluster) {
  std::vector<const InstanceSnapshot*> out;
  for (const auto& s : cluster) {
    if (s.model_id == model_id && s.role == role) out.push_back(&s);
  }
  if (out.empty()) {
    fail(ErrorCode::kNoEligibleInstance,
         fmt::format("no {} instance serves model '{}'", role_name(role), model_id));
  }
  return out;
}

const InstanceSnapshot* least_loaded(const std::vector<const InstanceSnapshot*>& candidates) {
  const InstanceSnapshot* best = nullptr;
  for (const auto* s : candidates) {
    if (best == nullptr || s->outstanding_tokens < best->outstanding_tokens ||
        (s->outstanding_tokens == best->outstanding_tokens && s->id < best->id)) {
      best = s;
    }
  }
  return best;
}

}  // namespace

InstanceId dispatch(const std::string& model_id, Role role, std::span<const InstanceSnapshot> cluster,
                    Policy policy, RouterState& state) {
  auto candidates = eligible(model_id, role, cluster);
  switch (policy) {
    case Policy::kRoundRobin:
      return candidates[state.round_robin++ % candidates.size()]->id;
    case Policy::kLeastOutstandingTokens:
      return least_loaded(candidates)->id;
    case Policy::kPrefixAware: {
      std::int64_t longest = -1;
      std::vector<const InstanceSnapshot*> best;
      for (const auto* s : candidates) {
        if (s->prefix_match_tokens > longest) {
          longest = s->prefix_match_tokens;
          best.clear();
        }
        if (s->prefix_match_tokens == longest) best.push_back(s);
      }
      return least_loaded(best)->id;
    }
  }
  fail(ErrorCode::kInvalidArgument, "unknown router policy");
}

InstanceId select_decode(const std::string& model_id, InstanceId prefill_id,
                         std::span<const InstanceSnapshot> cluster, const Pairing& pairing) {
  auto candidates = eligible(model_id, Role::kDecode, cluster);
  if (pairing.kind == PairingKind::kStatic) {
    auto it = pairing.fixed.find(prefill_id);
    if (it == pairing.fixed.end()) {
      fail(ErrorCode::kNoEligibleInstance, fmt::format("no decode pairing for prefill instance {}", prefill_id));
    }
    for (const auto* s : candidates) {
      if (s->id == it->second) return s->id;
    }
    fail(ErrorCode::kNoEligibleInstance,
         fmt::format("paired decode instance {} does not serve model '{}'", it->second, model_id));
  }
  return least_loaded(candidates)->id;
}

PdChoice dispatch_pd(const std::string& model_id, std::span<const InstanceSnapshot> cluster, Policy policy,
                     const Pairing& pairing, RouterState& state) {
  PdChoice choice;
  choice.prefill = dispatch(model_id, Role::kPrefill, cluster, policy, state);
  choice.decode = select_decode(model_id, choice.prefill, cluster, pairing);
  return choice;
}

}  // namespace servesim::route
