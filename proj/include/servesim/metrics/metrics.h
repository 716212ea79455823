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
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "servesim/common.h"

namespace servesim::metrics {

inline constexpr const char* kRequestsSchema = "servesim.requests/v1";
inline constexpr const char* kSummarySchema = "servesim.summary/v1";

struct RequestRecord {
  RequestId request_id = 0;
  Micros arrival_time = 0;
  std::int64_t input_len = 0;
  std::int64_t output_len = 0;
  std::vector<Micros> token_times;
  InstanceId prefill_instance = -1;
  InstanceId decode_instance = -1;
  std::int64_t matched_tokens = 0;
  std::int64_t matchable_tokens = 0;
  std::int64_t preemptions = 0;

  bool finished() const { return static_cast<std::int64_t>(token_times.size()) == output_len; }
};

// Collects token emit times during a run.
class Tracker {
 public:
  // Throws DuplicateId.
  void add_request(RequestId id, Micros arrival, std::int64_t input_len, std::int64_t output_len);
  // Throws UnknownRequest for unregistered or finished requests and
  // NonMonotoneTime when `time` does not advance the request's timeline.
  void record_token(RequestId id, Micros time);

  RequestRecord& at(RequestId id);
  const RequestRecord& at(RequestId id) const;
  const std::map<RequestId, RequestRecord>& records() const { return records_; }
  std::size_t unfinished() const;

 private:
  std::map<RequestId, RequestRecord> records_;
};

enum class ThroughputWindow { kFull, kSteady };

const char* throughput_window_name(ThroughputWindow window);
ThroughputWindow parse_throughput_window(const std::string& text);

struct Summary {
  std::int64_t count = 0;
  double mean = 0;
  double p50 = 0;
  double p99 = 0;
  double min = 0;
  double max = 0;
};

// Nearest-rank percentile of `sorted` (ascending), p in (0, 100].
double nearest_rank(const std::vector<double>& sorted, double p);
Summary summarize(std::vector<double> samples);

struct RequestMetrics {
  RequestId request_id = 0;
  Micros arrival_time = 0;
  Micros first_token_time = 0;
  Micros completion_time = 0;
  Micros ttft_us = 0;
  std::optional<double> tpot_us;  // output_len >= 2
  std::optional<double> mean_itl_us;
  std::vector<Micros> itl_us;
};

// Definitions per request: TTFT = first - arrival; ITL samples are gaps
// between successive tokens; TPOT = (completion - first) / (n - 1).
RequestMetrics request_metrics(const RequestRecord& record);

struct Report {
  std::vector<RequestRecord> requests;  // by request id
  std::vector<RequestMetrics> per_request;
  Summary ttft_us;
  Summary tpot_us;
  Summary itl_us;
  std::int64_t output_tokens = 0;
  Micros window_start = 0;
  Micros window_end = 0;
  double token_throughput_per_s = 0;
  double request_throughput_per_s = 0;
  double cache_hit_rate = 0;  // matched / matchable tokens
  ThroughputWindow window = ThroughputWindow::kFull;
};

// Throws IncompleteRun listing unfinished ids.
Report finalize(const Tracker& tracker, ThroughputWindow window = ThroughputWindow::kFull);

// Aggregates recomputed from request rows only.
Report aggregate(std::vector<RequestRecord> requests, ThroughputWindow window);

// One JSON object per line after a schema header line.
void write_requests_jsonl(const Report& report, std::ostream& out);
std::vector<RequestRecord> read_requests_jsonl(std::istream& in);

nlohmann::ordered_json summary_json(const Report& report);

}  // namespace servesim::metrics
