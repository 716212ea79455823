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

#include <map>
#include <random>

#include <gtest/gtest.h>

#include "servesim/route/router.h"

namespace servesim::route {
namespace {

InstanceSnapshot snap(InstanceId id, Role role = Role::kUnified, std::int64_t load = 0, std::int64_t prefix = 0,
                      std::string model = "m") {
  return InstanceSnapshot{id, role, std::move(model), load, prefix};
}

TEST(RouterTest, SingleEligibleInstanceWinsUnderEveryPolicy) {
  std::vector<InstanceSnapshot> cluster{snap(4, Role::kUnified, 99), snap(5, Role::kUnified, 0, 0, "other")};
  for (Policy p : {Policy::kRoundRobin, Policy::kLeastOutstandingTokens, Policy::kPrefixAware}) {
    RouterState state;
    EXPECT_EQ(dispatch("m", Role::kUnified, cluster, p, state), 4);
  }
}

TEST(RouterTest, RoundRobinSplitsHundredRequestsEvenly) {
  std::vector<InstanceSnapshot> cluster{snap(0), snap(1)};
  RouterState state;
  std::map<InstanceId, int> counts;
  for (int i = 0; i < 100; ++i) ++counts[dispatch("m", Role::kUnified, cluster, Policy::kRoundRobin, state)];
  EXPECT_EQ(counts[0], 50);
  EXPECT_EQ(counts[1], 50);
}

TEST(RouterTest, LeastTokensPicksLightestWithLowestIdOnTies) {
  RouterState state;
  std::vector<InstanceSnapshot> cluster{snap(0, Role::kUnified, 10), snap(1, Role::kUnified, 3),
                                        snap(2, Role::kUnified, 3)};
  EXPECT_EQ(dispatch("m", Role::kUnified, cluster, Policy::kLeastOutstandingTokens, state), 1);
}

TEST(RouterTest, PrefixAwarePrefersLongestCachedPrefix) {
  RouterState state;
  std::vector<InstanceSnapshot> cluster{snap(0, Role::kUnified, 0, 0), snap(1, Role::kUnified, 500, 64)};
  EXPECT_EQ(dispatch("m", Role::kUnified, cluster, Policy::kPrefixAware, state), 1);
  std::vector<InstanceSnapshot> cold{snap(0, Role::kUnified, 9, 0), snap(1, Role::kUnified, 2, 0)};
  EXPECT_EQ(dispatch("m", Role::kUnified, cold, Policy::kPrefixAware, state), 1);
}

TEST(RouterTest, NoEligibleInstanceIsReported) {
  RouterState state;
  std::vector<InstanceSnapshot> cluster{snap(0)};
  try {
    dispatch("m", Role::kPrefill, cluster, Policy::kRoundRobin, state);
    FAIL() << "expected NoEligibleInstance";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoEligibleInstance);
  }
}

TEST(RouterTest, PdPairAndLeastLoadedDecode) {
  RouterState state;
  std::vector<InstanceSnapshot> one{snap(0, Role::kPrefill), snap(1, Role::kDecode)};
  PdChoice c = dispatch_pd("m", one, Policy::kRoundRobin, {}, state);
  EXPECT_EQ(c.prefill, 0);
  EXPECT_EQ(c.decode, 1);
  std::vector<InstanceSnapshot> two{snap(0, Role::kPrefill), snap(1, Role::kDecode, 5000),
                                    snap(2, Role::kDecode, 10)};
  EXPECT_EQ(select_decode("m", 0, two, {}), 2);
  Pairing fixed;
  fixed.kind = PairingKind::kStatic;
  fixed.fixed[0] = 1;
  EXPECT_EQ(select_decode("m", 0, two, fixed), 1);
}

TEST(RouterTest, UnifiedOnlyClusterHasNoPdPair) {
  RouterState state;
  std::vector<InstanceSnapshot> cluster{snap(0), snap(1)};
  EXPECT_THROW(dispatch_pd("m", cluster, Policy::kRoundRobin, {}, state), Error);
}

TEST(RouterTest, PolicyNamesRoundTrip) {
  for (Policy p : {Policy::kRoundRobin, Policy::kLeastOutstandingTokens, Policy::kPrefixAware}) {
    EXPECT_EQ(parse_policy(policy_name(p)), p);
  }
  EXPECT_THROW(parse_policy("random"), Error);
}

// RoundRobin keeps every prefix balanced within one; all policies are
// deterministic for identical snapshots and state.
TEST(RouterProperty, RoundRobinBalanceAndDeterminism) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + static_cast<int>(rng() % 5);
    std::vector<InstanceSnapshot> cluster;
    for (int i = 0; i < n; ++i) cluster.push_back(snap(i, Role::kUnified, static_cast<std::int64_t>(rng() % 100)));
    RouterState state;
    std::vector<int> counts(n, 0);
    for (int k = 0; k < 200; ++k) {
      ++counts[dispatch("m", Role::kUnified, cluster, Policy::kRoundRobin, state)];
      const auto [lo, hi] = std::minmax_element(counts.begin(), counts.end());
      ASSERT_LE(*hi - *lo, 1);
    }
    for (Policy p : {Policy::kLeastOutstandingTokens, Policy::kPrefixAware}) {
      RouterState a;
      RouterState b;
      EXPECT_EQ(dispatch("m", Role::kUnified, cluster, p, a), dispatch("m", Role::kUnified, cluster, p, b));
    }
  }
}

}  // namespace
}  // namespace servesim::route
