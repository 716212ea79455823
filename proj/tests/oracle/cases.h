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
#include <string>
#include <vector>

#include "servesim/perf/perf_table.h"
#include "servesim/workload/workload.h"
#include "stepper.h"

namespace servesim::oracle {

struct OracleCase {
  StepperConfig config;
  std::vector<workload::WorkloadRecord> workload;

  std::string describe() const;
};

// A small single-instance scenario drawn from `seed`: at most 10 requests,
// tp 1 or 2, chunk and batch limits, decode priority, and device memory of
// 80 to 260 KV blocks so preemption is common.
OracleCase random_case(std::uint64_t seed, const perf::PerfTable& table);

// The same scenario run through the cluster simulator. `preemptions`, when
// given, receives the number of preemptions that occurred.
std::map<RequestId, std::vector<Micros>> simulate(const OracleCase& c,
                                                  const std::map<std::string, perf::PerfTable>& tables,
                                                  std::int64_t* preemptions = nullptr);

}  // namespace servesim::oracle
