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

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"
#include "servesim/cli/config.h"
#include "servesim/metrics/metrics.h"
#include "servesim/perf/perf_table.h"
#include "servesim/workload/workload.h"

namespace servesim::cli {

// Process exit statuses of the servesim tool.
enum ExitCode : int {
  kExitOk = 0,
  kExitUsage = 1,
  kExitConfig = 2,
  kExitInput = 3,
  kExitSimulation = 4,
  kExitIo = 5,
};

int exit_code_for(ErrorCode code);

struct RunResult {
  metrics::Report report;
  nlohmann::ordered_json summary;
  std::string requests_jsonl;
  std::uint64_t dispatched_events = 0;
};

// Workload file plus its `.tokens` sidecar when one exists.
std::vector<workload::WorkloadRecord> load_run_workload(const std::filesystem::path& path);

// Fills missing arrival times from the configured Poisson rate and seed,
// runs the cluster to drain and builds both report documents. The summary
// is checked against aggregates recomputed from the request rows.
RunResult run_simulation(const RunConfig& config, std::vector<workload::WorkloadRecord> workload,
                         const std::map<std::string, perf::PerfTable>& tables, std::ostream* event_log = nullptr);

// Writes requests.jsonl and summary.json into `dir`, creating it.
void write_outputs(const RunResult& result, const std::filesystem::path& dir);

}  // namespace servesim::cli
