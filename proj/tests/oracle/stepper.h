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

#include <map>
#include <vector>

#include "servesim/common.h"
#include "servesim/perf/perf_table.h"
#include "servesim/workload/workload.h"

namespace servesim::oracle {

// One unified instance, single stage and replica, no prefix cache, no MoE.
struct StepperConfig {
  std::string hw_id = "gpu";
  std::int32_t tp_degree = 1;           // 1 or 2
  double link_bandwidth_bytes_per_s = 300e9;  // between the two tp devices
  Micros link_latency_us = 0;
  Bytes device_memory_bytes = 24LL << 30;
  Bytes reserved_bytes = 0;
  std::int32_t block_size = 16;
  std::int64_t max_batch_tokens = 8192;
  std::int64_t max_batch_seqs = 256;
  std::int64_t prefill_chunk = 512;
  bool decode_priority = false;
};

// Token emit times per request, found by advancing a clock one microsecond
// at a time. Shares only operator lookups with the simulator. Throws
// Deadlock for a request that can never fit.
std::map<RequestId, std::vector<Micros>> step(const perf::PerfTable& table, const StepperConfig& config,
                                              const std::vector<workload::WorkloadRecord>& workload);

}  // namespace servesim::oracle
