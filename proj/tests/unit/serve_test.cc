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
#include <sstream>

#include <gtest/gtest.h>

#include "servesim/serve/cluster.h"

namespace servesim::serve {
namespace {

using perf::OpKind;
using perf::Phase;

constexpr std::int64_t kGridMax = 1 << 20;

struct ToyModel {
  std::int32_t layers = 1;
  Bytes kv_bytes_per_token_per_layer = 1;
  Micros prefill_us = 100;  // per layer, any shape
  Micros decode_us = 50;    // per layer, any shape
};

// Flat latency surfaces make every iteration cost layers x constant.
std::map<std::string, perf::PerfTable> toy_tables(const ToyModel& toy) {
  perf::ModelMeta meta;
  meta.model_id = "toy";
  meta.layer_count = toy.layers;
  meta.hidden_size = 8;
  meta.kv_bytes_per_token_per_layer = toy.kv_bytes_per_token_per_layer;
  perf::PerfTable table(meta);
  for (auto [phase, latency] : {std::pair{Phase::kPrefill, toy.prefill_us}, std::pair{Phase::kDecode, toy.decode_us}}) {
    for (std::int64_t batch : {std::int64_t{1}, kGridMax}) {
      for (std::int64_t ctx : {std::int64_t{0}, kGridMax}) {
        table.add({"toy", "gpu", perf::op(OpKind::Tag::kAttention), phase, batch, ctx, 1}, latency);
      }
    }
  }
  std::map<std::string, perf::PerfTable> out;
  out.emplace("toy", std::move(table));
  return out;
}

InstanceSpec unified(InstanceId id, std::vector<DeviceId> devices, Bytes memory = 1LL << 30) {
  InstanceSpec s;
  s.id = id;
  s.model_id = "toy";
  s.hw_id = "gpu";
  s.devices = std::move(devices);
  s.pp_degree = static_cast<std::int32_t>(s.devices.size());
  s.memory.device_memory_bytes = memory;
  return s;
}

net::Topology devices_topology(std::vector<DeviceId> devices, double bandwidth = 32e9) {
  return net::Topology::fully_connected(devices, bandwidth, 0);
}

workload::WorkloadRecord record(RequestId id, std::int64_t in, std::int64_t out, Micros arrival) {
  workload::WorkloadRecord r;
  r.request_id = id;
  r.input_len = in;
  r.output_len = out;
  r.arrival_time_us = arrival;
  return r;
}

std::vector<Micros> times(const Cluster& c, RequestId id) { return c.tracker().at(id).token_times; }

TEST(InstanceTest, DecodeStepEmitsAfterStageLatency) {
  auto tables = toy_tables({});
  ClusterSpec spec;
  spec.instances = {unified(0, {0})};
  spec.topology = devices_topology({0});
  Cluster c(spec, tables);
  c.submit({record(1, 10, 3, 1000)});
  c.run();
  EXPECT_EQ(times(c, 1), (std::vector<Micros>{1100, 1150, 1200}));
}

TEST(InstanceTest, ChunkedPrefillRunsInOrderedPieces) {
  auto tables = toy_tables({});
  ClusterSpec spec;
  spec.instances = {unified(0, {0})};
  spec.topology = devices_topology({0});
  Cluster c(spec, tables);
  std::ostringstream log;
  c.engine().set_event_log(&log);
  c.submit({record(1, 1000, 1, 0)});
  c.run();
  EXPECT_EQ(times(c, 1), (std::vector<Micros>{200}));
  EXPECT_EQ(c.instance(0).stats().batches, 2);
  EXPECT_EQ(c.instance(0).stats().prefill_tokens, 1000);
  EXPECT_NE(log.str().find("prefill=512 decode=0"), std::string::npos);
  EXPECT_NE(log.str().find("prefill=488 decode=0"), std::string::npos);
}

TEST(InstanceTest, PipelineStagesOverlapConsecutiveBatches) {
  ToyModel toy;
  toy.layers = 2;
  toy.prefill_us = 50;
  auto tables = toy_tables(toy);
  ClusterSpec spec;
  InstanceSpec s = unified(0, {0, 1});
  s.scheduler.max_batch_seqs = 1;
  spec.instances = {s};
  spec.topology = devices_topology({0, 1});
  Cluster c(spec, tables);
  c.submit({record(1, 8, 1, 0), record(2, 8, 1, 0)});
  c.run();
  EXPECT_EQ(times(c, 1), (std::vector<Micros>{100}));
  // Second batch enters stage 0 when the first leaves it at t=50.
  EXPECT_EQ(times(c, 2), (std::vector<Micros>{150}));
}

TEST(InstanceTest, FinishedRequestReleasesBlocks) {
  auto tables = toy_tables({});
  ClusterSpec spec;
  spec.instances = {unified(0, {0})};
  spec.topology = devices_topology({0});
  Cluster c(spec, tables);
  c.submit({record(1, 40, 5, 0)});
  c.run();
  EXPECT_EQ(c.request(1).state, RequestState::kFinished);
  const auto& pool = c.instance(0).pool(0);
  EXPECT_EQ(pool.free_bytes(mem::Tier::kDevice), pool.capacity(mem::Tier::kDevice));
}

TEST(InstanceTest, LaterAdmittedDecoderIsPreemptedAndStillFinishes) {
  auto tables = toy_tables({});  // 16-byte blocks
  ClusterSpec spec;
  spec.instances = {unified(0, {0}, 4 * 16)};
  spec.topology = devices_topology({0});
  Cluster c(spec, tables);
  c.submit({record(1, 16, 20, 0), record(2, 16, 20, 0)});
  c.run();
  EXPECT_EQ(c.tracker().at(1).preemptions, 0);
  EXPECT_GE(c.tracker().at(2).preemptions, 1);
  EXPECT_EQ(times(c, 1).size(), 20u);
  EXPECT_EQ(times(c, 2).size(), 20u);
}

TEST(InstanceTest, RequestLargerThanMemoryIsDeadlock) {
  auto tables = toy_tables({});
  ClusterSpec spec;
  spec.instances = {unified(0, {0}, 4 * 16)};
  spec.topology = devices_topology({0});
  Cluster c(spec, tables);
  c.submit({record(1, 100, 10, 0)});
  try {
    c.run();
    FAIL() << "expected Deadlock";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDeadlock);
    EXPECT_NE(std::string(e.what()).find("request 1"), std::string::npos);
  }
}

TEST(InstanceTest, WeightsLargerThanDeviceAreInsufficientMemory) {
  perf::ModelMeta meta = toy_tables({}).at("toy").meta();
  meta.weight_bytes = 2LL << 30;
  InstanceSpec s = unified(0, {0}, 1LL << 30);
  try {
    pool_config(s, meta, 16);
    FAIL() << "expected InsufficientMemory";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientMemory);
  }
}

TEST(ClusterTest, RoundRobinSplitsRequestsEvenly) {
  auto tables = toy_tables({});
  ClusterSpec spec;
  spec.instances = {unified(0, {0}), unified(1, {1})};
  spec.topology = devices_topology({0, 1});
  Cluster c(spec, tables);
  std::vector<workload::WorkloadRecord> recs;
  for (int i = 0; i < 10; ++i) recs.push_back(record(i, 10, 2, i * 10));
  c.submit(recs);
  c.run();
  int on_zero = 0;
  for (const auto& [id, rec] : c.tracker().records()) on_zero += rec.prefill_instance == 0;
  EXPECT_EQ(on_zero, 5);
}

TEST(ClusterTest, SecondIdenticalPromptHitsPrefixCache) {
  auto tables = toy_tables({});
  ClusterSpec spec;
  spec.instances = {unified(0, {0})};
  spec.topology = devices_topology({0});
  spec.cache.enabled = true;
  Cluster c(spec, tables);
  auto a = record(1, 64, 2, 0);
  auto b = record(2, 64, 2, 10'000);
  for (int i = 0; i < 64; ++i) a.input_token_ids.push_back(i);
  b.input_token_ids = a.input_token_ids;
  c.submit({a, b});
  c.run();
  EXPECT_EQ(c.tracker().at(1).matched_tokens, 0);
  EXPECT_EQ(c.tracker().at(2).matched_tokens, 48);
  EXPECT_EQ(c.tracker().at(2).matchable_tokens, 48);
}

TEST(ClusterTest, PdWithoutDecodeInstanceIsCrossRefError) {
  auto tables = toy_tables({});
  ClusterSpec spec;
  InstanceSpec p = unified(0, {0});
  p.role = Role::kPrefill;
  spec.instances = {p};
  spec.topology = devices_topology({0});
  try {
    Cluster c(spec, tables);
    FAIL() << "expected CrossRefError";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kCrossRefError);
  }
}

struct PdRun {
  std::vector<Micros> unified;
  std::vector<Micros> pd;
};

PdRun run_pd(const ToyModel& toy, std::int64_t input, std::int64_t output, TransferPolicy transfer) {
  auto tables = toy_tables(toy);
  PdRun out;
  {
    ClusterSpec spec;
    InstanceSpec s = unified(0, {0}, 4LL << 30);
    s.scheduler.prefill_chunk = input;
    spec.instances = {s};
    spec.topology = devices_topology({0, 1});
    Cluster c(spec, tables);
    c.submit({record(1, input, output, 0)});
    c.run();
    out.unified = times(c, 1);
  }
  ClusterSpec spec;
  InstanceSpec p = unified(0, {0}, 4LL << 30);
  p.role = Role::kPrefill;
  p.scheduler.prefill_chunk = input;
  InstanceSpec d = unified(1, {1}, 4LL << 30);
  d.role = Role::kDecode;
  spec.instances = {p, d};
  spec.topology = devices_topology({0, 1});
  spec.pd.transfer = transfer;
  Cluster c(spec, tables);
  c.submit({record(1, input, output, 0)});
  c.run();
  out.pd = times(c, 1);
  EXPECT_EQ(c.tracker().at(1).prefill_instance, 0);
  EXPECT_EQ(c.tracker().at(1).decode_instance, 1);
  return out;
}

TEST(PdTest, FullBlockingAddsTransferTimeBeforeFirstDecode) {
  ToyModel toy;
  toy.kv_bytes_per_token_per_layer = 131072;  // 1024 tokens -> 128 MiB
  PdRun r = run_pd(toy, 1024, 3, TransferPolicy::kFullBlocking);
  ASSERT_EQ(r.pd.size(), 3u);
  EXPECT_EQ(r.pd[0], r.unified[0]);
  EXPECT_EQ(r.pd[1], r.unified[1] + 4194);
  EXPECT_EQ(r.pd[2] - r.pd[1], r.unified[2] - r.unified[1]);
}

TEST(PdTest, ZeroKvBytesHandsOffImmediately) {
  ToyModel toy;
  toy.kv_bytes_per_token_per_layer = 0;
  PdRun r = run_pd(toy, 100, 4, TransferPolicy::kFullBlocking);
  EXPECT_EQ(r.pd, r.unified);
}

TEST(PdTest, LayerwiseOverlapHidesAllButTheLastLayer) {
  ToyModel toy;
  toy.layers = 2;
  toy.prefill_us = 1000;
  toy.kv_bytes_per_token_per_layer = 1'000'000;  // 16 tokens: 500 us per layer
  PdRun layerwise = run_pd(toy, 16, 2, TransferPolicy::kLayerwiseOverlap);
  PdRun blocking = run_pd(toy, 16, 2, TransferPolicy::kFullBlocking);
  EXPECT_EQ(layerwise.pd[1], layerwise.unified[1] + 500);
  EXPECT_EQ(blocking.pd[1], blocking.unified[1] + 1000);
}

// Random small-memory workloads: every request finishes with exactly its
// output length, timelines strictly increase and begin after arrival.
TEST(ServeProperty, TokensAreConservedUnderMemoryPressure) {
  for (std::uint64_t seed = 1; seed <= 15; ++seed) {
    std::mt19937_64 rng(seed);
    auto tables = toy_tables({});
    ClusterSpec spec;
    InstanceSpec s = unified(0, {0}, 40 * 16);
    s.scheduler.prefill_chunk = 32;
    s.scheduler.max_batch_tokens = 64;
    spec.instances = {s};
    spec.topology = devices_topology({0});
    spec.cache.enabled = seed % 2 == 0;
    Cluster c(spec, tables);
    std::vector<workload::WorkloadRecord> recs;
    Micros t = 0;
    std::int64_t total_input = 0;
    for (int i = 0; i < 30; ++i) {
      t += static_cast<Micros>(rng() % 300);
      auto r = record(i, 1 + static_cast<std::int64_t>(rng() % 200), 1 + static_cast<std::int64_t>(rng() % 100), t);
      for (std::int64_t k = 0; k < r.input_len; ++k) r.input_token_ids.push_back(static_cast<int>(rng() % 4));
      total_input += r.input_len;
      recs.push_back(r);
    }
    c.submit(recs);
    c.run();
    for (const auto& rec : recs) {
      const auto& tr = c.tracker().at(rec.request_id);
      ASSERT_EQ(static_cast<std::int64_t>(tr.token_times.size()), rec.output_len) << "seed " << seed;
      EXPECT_GT(tr.token_times.front(), *rec.arrival_time_us);
      for (std::size_t k = 1; k < tr.token_times.size(); ++k) EXPECT_LT(tr.token_times[k - 1], tr.token_times[k]);
    }
    if (!spec.cache.enabled) EXPECT_GE(c.instance(0).stats().prefill_tokens, total_input);
  }
}

}  // namespace
}  // namespace servesim::serve
