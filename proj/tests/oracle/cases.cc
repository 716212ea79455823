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

#include "cases.h"

#include <random>

#include <fmt/format.h>

#include "servesim/serve/cluster.h"

namespace servesim::oracle {

std::string OracleCase::describe() const {
  return fmt::format("tp={} chunk={} max_tokens={} max_seqs={} decode_priority={} memory={} requests={}",
                     config.tp_degree, config.prefill_chunk, config.max_batch_tokens, config.max_batch_seqs,
                     config.decode_priority, config.device_memory_bytes, workload.size());
}

OracleCase random_case(std::uint64_t seed, const perf::PerfTable& table) {
  std::mt19937_64 rng(seed);
  auto pick = [&](std::initializer_list<std::int64_t> values) {
    return *(values.begin() + static_cast<std::ptrdiff_t>(rng() % values.size()));
  };
  OracleCase c;
  StepperConfig& cfg = c.config;
  cfg.hw_id = "a100-80g";
  cfg.tp_degree = static_cast<std::int32_t>(pick({1, 2}));
  cfg.link_bandwidth_bytes_per_s = 300e9;
  cfg.link_latency_us = 2;
  cfg.prefill_chunk = pick({64, 256, 512, 2048});
  cfg.max_batch_tokens = pick({256, 1024, 8192});
  cfg.max_batch_seqs = pick({2, 8, 256});
  cfg.decode_priority = rng() % 3 == 0;
  const auto& meta = table.meta();
  const Bytes weights = (meta.weight_bytes + cfg.tp_degree - 1) / cfg.tp_degree;
  const Bytes block_bytes =
      (cfg.block_size * meta.kv_bytes_per_token_per_layer * meta.layer_count + cfg.tp_degree - 1) / cfg.tp_degree;
  const std::int64_t blocks = pick({80, 100, 130, 180, 260});
  cfg.device_memory_bytes = weights + blocks * block_bytes;

  const int n = 2 + static_cast<int>(rng() % 9);
  for (int i = 0; i < n; ++i) {
    workload::WorkloadRecord r;
    r.request_id = i;
    r.input_len = 1 + static_cast<std::int64_t>(rng() % 1200);
    r.output_len = 1 + static_cast<std::int64_t>(rng() % 48);
    r.arrival_time_us = static_cast<Micros>(rng() % 200'000);
    c.workload.push_back(r);
  }
  return c;
}

std::map<RequestId, std::vector<Micros>> simulate(const OracleCase& c,
                                                  const std::map<std::string, perf::PerfTable>& tables,
                                                  std::int64_t* preemptions) {
  const auto& table = tables.begin()->second;
  serve::ClusterSpec spec;
  serve::InstanceSpec s;
  s.id = 0;
  s.model_id = table.meta().model_id;
  s.hw_id = c.config.hw_id;
  s.tp_degree = c.config.tp_degree;
  for (DeviceId d = 0; d < c.config.tp_degree; ++d) s.devices.push_back(d);
  s.memory.device_memory_bytes = c.config.device_memory_bytes;
  s.memory.reserved_bytes = c.config.reserved_bytes;
  s.scheduler.max_batch_tokens = c.config.max_batch_tokens;
  s.scheduler.max_batch_seqs = c.config.max_batch_seqs;
  s.scheduler.prefill_chunk = c.config.prefill_chunk;
  s.scheduler.policy =
      c.config.decode_priority ? serve::SchedulerPolicy::kDecodePriority : serve::SchedulerPolicy::kFifo;
  spec.instances = {s};
  spec.cache.block_size = c.config.block_size;
  spec.topology = net::Topology::fully_connected(s.devices, c.config.link_bandwidth_bytes_per_s,
                                                 c.config.link_latency_us);
  serve::Cluster cluster(spec, tables);
  cluster.submit(c.workload);
  cluster.run();
  std::map<RequestId, std::vector<Micros>> out;
  for (const auto& [id, rec] : cluster.tracker().records()) out[id] = rec.token_times;
  if (preemptions != nullptr) *preemptions = cluster.instance(0).stats().preemptions;
  return out;
}

}  // namespace servesim::oracle
