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
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "servesim/common.h"

namespace servesim::workload {

using TokenId = std::int32_t;

struct WorkloadRecord {
  RequestId request_id = 0;
  std::int64_t input_len = 0;
  std::int64_t output_len = 0;
  std::optional<Micros> arrival_time_us;
  std::string model_id;  // empty: the cluster's only model
  std::vector<TokenId> input_token_ids;
};

// Reads `request_id,input_len,output_len[,arrival_time_us][,model_id]` lines.
// A header line and `#` comments are allowed. With four fields the last one
// is an arrival time when it is an integer and a model id otherwise.
std::vector<WorkloadRecord> load_workload(const std::filesystem::path& path);

// Attaches `request_id: id id id ...` lines. Throws TokenCountMismatch when
// a list length differs from input_len and UnknownRequest for stray ids.
void load_token_sidecar(const std::filesystem::path& path, std::vector<WorkloadRecord>& records);

// Conventional sidecar location: `<workload>.tokens`.
std::filesystem::path token_sidecar_path(const std::filesystem::path& workload);

// Fills missing arrival times with a Poisson process of `rate_per_s`:
// exponential gaps by inverse CDF on a counter-based generator, cumulative
// seconds rounded half-up to microseconds. Explicit arrival times are kept.
// The result is stably sorted by arrival time.
std::vector<WorkloadRecord> synthesize_arrivals(std::vector<WorkloadRecord> records, double rate_per_s,
                                                std::uint64_t seed);

// The i-th exponential gap in seconds for (rate, seed).
double poisson_gap_seconds(std::uint64_t index, double rate_per_s, std::uint64_t seed);

}  // namespace servesim::workload
