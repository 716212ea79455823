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

#include <cmath>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <gtest/gtest.h>

#include "servesim/moe/moe.h"
#include "servesim/sim/engine.h"

namespace servesim::moe {
namespace {

using perf::OpKind;
using perf::Phase;

constexpr std::int64_t kMaxBatch = 100'001;

// ExpertFFN latency = 9 + tokens, linear so per-rank sums are easy to check.
perf::PerfTable expert_table(std::int32_t experts, std::int32_t k, std::int32_t layers = 1,
                             Bytes expert_bytes = 0) {
  perf::ModelMeta meta;
  meta.model_id = "moe";
  meta.layer_count = layers;
  meta.hidden_size = 1024;
  meta.dtype_bytes = 2;
  meta.moe = perf::MoeMeta{experts, k, expert_bytes};
  perf::PerfTable table(meta);
  for (Phase phase : {Phase::kPrefill, Phase::kDecode}) {
    for (std::int64_t ctx : {std::int64_t{0}, std::int64_t{1}}) {
      table.add({"moe", "gpu", perf::op(OpKind::Tag::kExpertFFN), phase, 1, ctx, 1}, 10);
      table.add({"moe", "gpu", perf::op(OpKind::Tag::kExpertFFN), phase, kMaxBatch, ctx, 1}, 9 + kMaxBatch);
      table.add({"moe", "gpu", perf::op(OpKind::Tag::kAttention), phase, 1, ctx, 1}, 100);
      table.add({"moe", "gpu", perf::op(OpKind::Tag::kAttention), phase, kMaxBatch, ctx, 1}, 100);
    }
  }
  return table;
}

MoeExecution execution(const net::Topology* topology, std::vector<DeviceId> devices,
                       net::Network* network = nullptr, std::vector<std::size_t> host = {}) {
  MoeExecution e;
  e.model_id = "moe";
  e.hw_id = "gpu";
  e.phase = Phase::kPrefill;
  e.ep_devices = std::move(devices);
  e.topology = topology;
  e.network = network;
  e.host_channels = std::move(host);
  return e;
}

TEST(ExpertRouterTest, SingleExpertTakesEveryToken) {
  auto router = make_router({}, 1, 1, 7, 0);
  auto a = route_tokens(*router, 0, 0, 100, ExpertPlacement::contiguous(1, 1), 4);
  EXPECT_EQ(a.counts, std::vector<std::int64_t>{100});
}

TEST(ExpertRouterTest, UniformSharesWithinThreeSigma) {
  auto router = make_router({}, 8, 2, 42, 0);
  auto a = route_tokens(*router, 0, 0, 10'000, ExpertPlacement::contiguous(8, 1), 1);
  const double sigma = std::sqrt(10'000 * 0.25 * 0.75);
  for (auto c : a.counts) EXPECT_LE(std::abs(c - 2500.0), 3 * sigma) << c;
}

TEST(ExpertRouterTest, ZipfNearZeroExponentApproachesUniform) {
  GateConfig gate;
  gate.kind = GateKind::kZipf;
  gate.zipf_s = 1e-9;
  auto router = make_router(gate, 8, 2, 42, 0);
  auto a = route_tokens(*router, 0, 0, 10'000, ExpertPlacement::contiguous(8, 1), 1);
  const double sigma = std::sqrt(10'000 * 0.25 * 0.75);
  for (auto c : a.counts) EXPECT_LE(std::abs(c - 2500.0), 3 * sigma) << c;
}

TEST(ExpertRouterTest, ZipfSkewFavoursFewExperts) {
  GateConfig gate;
  gate.kind = GateKind::kZipf;
  gate.zipf_s = 1.5;
  auto router = make_router(gate, 16, 1, 3, 0);
  auto a = route_tokens(*router, 0, 0, 4000, ExpertPlacement::contiguous(16, 1), 1);
  const auto top = *std::max_element(a.counts.begin(), a.counts.end());
  EXPECT_GT(top, 4000 / 4);
}

TEST(ExpertRouterTest, TraceReplayReturnsRecordedChoicesAndFailsWhenExhausted) {
  auto trace = std::make_shared<RoutingTrace>();
  trace->add(0, 0, {3, 1});
  auto router = make_trace_router(trace, 4, 2);
  EXPECT_EQ(router->route(0, 0), (std::vector<ExpertId>{3, 1}));
  try {
    router->route(0, 1);
    FAIL() << "expected TraceExhausted";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kTraceExhausted);
  }
}

TEST(ExpertRouterTest, RoutingTraceFileLoads) {
  const auto path = std::filesystem::temp_directory_path() / "servesim_moe_trace.csv";
  std::ofstream(path) << "# layer,token,experts\n0,0,1,2\n1,0,3,0\n";
  RoutingTrace trace = RoutingTrace::load(path);
  EXPECT_EQ(trace.size(), 2u);
  ASSERT_NE(trace.find(1, 0), nullptr);
  EXPECT_EQ(*trace.find(1, 0), (std::vector<ExpertId>{3, 0}));
  std::ofstream(path) << "0,0,1,x\n";
  EXPECT_THROW(RoutingTrace::load(path), Error);
  std::filesystem::remove(path);
}

TEST(ExpertRouterTest, UnknownGateNameIsRejected) {
  EXPECT_EQ(parse_gate_kind("zipf"), GateKind::kZipf);
  EXPECT_THROW(parse_gate_kind("softmax"), Error);
}

// Every policy: k distinct in-range experts, counts conserve tokens x k, and
// choices are a pure function of (layer, token, seed).
TEST(ExpertRouterProperty, AssignmentsConserveAndAreDeterministic) {
  for (GateKind kind : {GateKind::kUniform, GateKind::kZipf}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      GateConfig gate;
      gate.kind = kind;
      auto r1 = make_router(gate, 16, 4, seed, 1);
      auto r2 = make_router(gate, 16, 4, seed, 1);
      auto placement = ExpertPlacement::contiguous(16, 4);
      auto a = route_tokens(*r1, 2, 100, 257, placement, 8);
      auto b = route_tokens(*r2, 2, 100, 257, placement, 8);
      EXPECT_EQ(a.experts, b.experts);
      std::int64_t total = 0;
      for (auto c : a.counts) total += c;
      EXPECT_EQ(total, 257 * 4);
      for (const auto& chosen : a.experts) {
        std::set<ExpertId> distinct(chosen.begin(), chosen.end());
        ASSERT_EQ(distinct.size(), 4u);
        EXPECT_GE(*distinct.begin(), 0);
        EXPECT_LT(*distinct.rbegin(), 16);
      }
      // Each origin rank sends k activations per token it owns.
      for (std::int32_t src = 0; src < 4; ++src) {
        Bytes row = 0;
        for (Bytes b2 : a.send[src]) row += b2;
        const std::int64_t owned = 257 / 4 + (src < 257 % 4 ? 1 : 0);
        EXPECT_EQ(row, owned * 4 * 8);
      }
    }
  }
  auto x = make_router({}, 16, 2, 1, 0);
  auto y = make_router({}, 16, 2, 2, 0);
  int same = 0;
  for (int t = 0; t < 100; ++t) same += x->route(0, t) == y->route(0, t);
  EXPECT_LT(same, 100);
}

TEST(PlacementTest, ContiguousBlocksPerRank) {
  auto p = ExpertPlacement::contiguous(16, 2);
  EXPECT_EQ(p.rank_of(0), 0);
  EXPECT_EQ(p.rank_of(7), 0);
  EXPECT_EQ(p.rank_of(8), 1);
  EXPECT_EQ(p.rank_of(15), 1);
  auto q = random_offload(16, 2, 5, 9, 0);
  EXPECT_EQ(q.offloaded_count(), 5);
  EXPECT_THROW(random_offload(16, 2, 17, 9, 0), Error);
}

TEST(MoeLayerTest, SingleRankHasNoCollectiveAndSumsExperts) {
  auto table = expert_table(4, 1);
  auto trace = std::make_shared<RoutingTrace>();
  for (int t = 0; t < 6; ++t) trace->add(0, t, {t % 3});
  auto router = make_trace_router(trace, 4, 1);
  auto placement = ExpertPlacement::contiguous(4, 1);
  auto a = route_tokens(*router, 0, 0, 6, placement, 2048);
  auto timing = moe_layer_time(a, placement, table, execution(nullptr, {0}), 0, 0);
  EXPECT_EQ(timing.dispatch_us, 0);
  EXPECT_EQ(timing.combine_us, 0);
  EXPECT_EQ(timing.compute_us, 3 * (9 + 2));
}

TEST(MoeLayerTest, BalancedTwoRanksCostAllToAllTwicePlusCompute) {
  auto table = expert_table(2, 1);
  std::vector<DeviceId> devs{0, 1};
  auto topo = net::Topology::fully_connected(devs, 100e9, 2);
  auto trace = std::make_shared<RoutingTrace>();
  for (int t = 0; t < 100; ++t) trace->add(0, t, {t % 2});
  auto router = make_trace_router(trace, 2, 1);
  auto placement = ExpertPlacement::contiguous(2, 2);
  auto a = route_tokens(*router, 0, 0, 100, placement, 2048);
  auto timing = moe_layer_time(a, placement, table, execution(&topo, devs), 0, 0);
  const Micros a2a = net::collective_time(topo, net::CollectiveKind::kAllToAll, devs, 50 * 1024 * 2);
  EXPECT_GT(a2a, 0);
  EXPECT_EQ(timing.total(), a2a + (9 + 50) + a2a);
}

TEST(MoeLayerTest, ImbalancedRoutingIsDominatedByTheStraggler) {
  auto table = expert_table(2, 1);
  std::vector<DeviceId> devs{0, 1};
  auto topo = net::Topology::fully_connected(devs, 100e9, 0);
  auto trace = std::make_shared<RoutingTrace>();
  for (int t = 0; t < 100; ++t) trace->add(0, t, {0});
  auto router = make_trace_router(trace, 2, 1);
  auto placement = ExpertPlacement::contiguous(2, 2);
  auto a = route_tokens(*router, 0, 0, 100, placement, 2048);
  auto timing = moe_layer_time(a, placement, table, execution(&topo, devs), 0, 0);
  EXPECT_EQ(timing.rank_compute, (std::vector<Micros>{109, 0}));
  EXPECT_EQ(timing.compute_us, 109);
}

TEST(OffloadTest, ResidentExpertsAddNothing) {
  net::Network network{net::Topology{}};
  auto ch = network.add_channel("host", 32e9);
  auto r = offload_fetch(network, ch, 0, 256 << 20, OffloadPolicy::kOnDemand, 0, 100);
  EXPECT_EQ(r.added_us, 0);
  EXPECT_EQ(r.fetches, 0);
  EXPECT_EQ(network.transfers(), 0u);
}

TEST(OffloadTest, OnDemandPaysTheWholeTransfer) {
  net::Network network{net::Topology{}};
  auto ch = network.add_channel("host", 32e9);
  auto r = offload_fetch(network, ch, 1, 256LL << 20, OffloadPolicy::kOnDemand, 0, 1000);
  EXPECT_EQ(r.added_us, 8389);
}

TEST(OffloadTest, PrefetchHiddenBehindPreviousLayer) {
  net::Network network{net::Topology{}};
  auto ch = network.add_channel("host", 32e9);
  auto r = offload_fetch(network, ch, 1, 256LL << 20, OffloadPolicy::kPrefetch, 0, 9000);
  EXPECT_EQ(r.added_us, 0);
  EXPECT_EQ(r.completion, 8389);
}

// OnDemand >= Prefetch >= resident for the same assignment and placement.
TEST(OffloadProperty, PoliciesAreMonotone) {
  auto table = expert_table(16, 2, 1, 64LL << 20);
  std::vector<DeviceId> devs{0, 1};
  auto topo = net::Topology::fully_connected(devs, 100e9, 1);
  auto router = make_router({}, 16, 2, 5, 0);
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto placement = random_offload(16, 2, 6, seed, 0);
    auto a = route_tokens(*router, 0, static_cast<std::int64_t>(seed) * 64, 64, placement, 2048);
    Micros totals[3];
    int i = 0;
    for (OffloadPolicy policy : {OffloadPolicy::kOnDemand, OffloadPolicy::kPrefetch, OffloadPolicy::kNone}) {
      net::Network network(topo);
      std::vector<std::size_t> host{network.add_channel("h0", 32e9), network.add_channel("h1", 32e9)};
      auto exec = execution(&topo, devs, &network, host);
      exec.offload = policy;
      totals[i++] = moe_layer_time(a, placement, table, exec, 5000, 1000).total();
    }
    EXPECT_GE(totals[0], totals[1]) << seed;
    EXPECT_GE(totals[1], totals[2]) << seed;
  }
}

TEST(MoeRuntimeTest, ExpertParallelIterationLogsTwoAllToAllsPerLayer) {
  auto table = expert_table(4, 2, 3);
  std::vector<DeviceId> devs{0, 1};
  auto topo = net::Topology::fully_connected(devs, 100e9, 1);
  MoeRuntime::Options opt;
  opt.ep_degree = 2;
  MoeRuntime runtime(table, make_router({}, 4, 2, 1, 0), opt);
  sim::Engine engine;
  std::ostringstream log;
  engine.set_event_log(&log);
  runtime.begin_iteration(10, true, execution(&topo, devs), 0, &engine);
  perf::BatchComposition comp;
  comp.prefill.push_back({10, 0});
  perf::ExecutionSpec spec;
  spec.model_id = "moe";
  spec.hw_id = "gpu";
  perf::iteration_timing(table, comp, spec, &runtime, 0);
  engine.run_until();
  EXPECT_EQ(runtime.stats().all_to_all_events, 6);
  EXPECT_EQ(runtime.stats().expert_tokens, 3 * 10 * 2);
  for (int layer = 0; layer < 3; ++layer) {
    EXPECT_NE(log.str().find(fmt::format("all_to_all dispatch layer={}", layer)), std::string::npos);
    EXPECT_NE(log.str().find(fmt::format("all_to_all combine layer={}", layer)), std::string::npos);
  }
}

}  // namespace
}  // namespace servesim::moe
