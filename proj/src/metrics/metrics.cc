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

#include "servesim/metrics/metrics.h"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

namespace servesim::metrics {

void Tracker::add_request(RequestId id, Micros arrival, std::int64_t input_len, std::int64_t output_len) {
  RequestRecord r;
  r.request_id = id;
  r.arrival_time = arrival;
  r.input_len = input_len;
  r.output_len = output_len;
  if (!records_.emplace(id, std::move(r)).second) {
    fail(ErrorCode::kDuplicateId, fmt::format("request {} registered twice", id));
  }
}

void Tracker::record_token(RequestId id, Micros time) {
  auto it = records_.find(id);
  if (it == records_.end()) fail(ErrorCode::kUnknownRequest, fmt::format("token for unknown request {}", id));
  RequestRecord& r = it->second;
  if (r.finished()) fail(ErrorCode::kUnknownRequest, fmt::format("token for finished request {}", id));
  const Micros last = r.token_times.empty() ? r.arrival_time : r.token_times.back();
  if (time < last || (!r.token_times.empty() && time == last)) {
    fail(ErrorCode::kNonMonotoneTime,
         fmt::format("request {}: token at {} does not follow {}", id, time, last));
  }
  r.token_times.push_back(time);
}

RequestRecord& Tracker::at(RequestId id) {
  auto it = records_.find(id);
  if (it == records_.end()) fail(ErrorCode::kUnknownRequest, fmt::format("unknown request {}", id));
  return it->second;
}

const RequestRecord& Tracker::at(RequestId id) const {
  auto it = records_.find(id);
  if (it == records_.end()) fail(ErrorCode::kUnknownRequest, fmt::format("unknown request {}", id));
  return it->second;
}

std::size_t Tracker::unfinished() const {
  return static_cast<std::size_t>(std::count_if(records_.begin(), records_.end(),
                                                [](const auto& kv) { return !kv.second.finished(); }));
}

const char* throughput_window_name(ThroughputWindow window) {
  return window == ThroughputWindow::kFull ? "full" : "steady";
}

ThroughputWindow parse_throughput_window(const std::string& text) {
  if (text == "full") return ThroughputWindow::kFull;
  if (text == "steady") return ThroughputWindow::kSteady;
  fail(ErrorCode::kInvalidArgument, fmt::format("unknown throughput window '{}'", text));
}

double nearest_rank(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) return 0;
  auto rank = static_cast<std::size_t>(std::ceil(p / 100.0 * static_cast<double>(sorted.size())));
  rank = std::clamp<std::size_t>(rank, 1, sorted.size());
  return sorted[rank - 1];
}

Summary summarize(std::vector<double> samples) {
  Summary s;
  s.count = static_cast<std::int64_t>(samples.size());
  if (samples.empty()) return s;
  std::sort(samples.begin(), samples.end());
  s.mean = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
  s.p50 = nearest_rank(samples, 50);
  s.p99 = nearest_rank(samples, 99);
  s.min = samples.front();
  s.max = samples.back();
  return s;
}

RequestMetrics request_metrics(const RequestRecord& record) {
  RequestMetrics m;
  m.request_id = record.request_id;
  m.arrival_time = record.arrival_time;
  if (record.token_times.empty()) return m;
  m.first_token_time = record.token_times.front();
  m.completion_time = record.token_times.back();
  m.ttft_us = m.first_token_time - m.arrival_time;
  for (std::size_t i = 1; i < record.token_times.size(); ++i) {
    m.itl_us.push_back(record.token_times[i] - record.token_times[i - 1]);
  }
  if (record.token_times.size() >= 2) {
    const auto gaps = static_cast<double>(record.token_times.size() - 1);
    m.tpot_us = static_cast<double>(m.completion_time - m.first_token_time) / gaps;
    // The ITL samples telescope to the same span, summed exactly in integers.
    const Micros itl_sum = std::accumulate(m.itl_us.begin(), m.itl_us.end(), Micros{0});
    m.mean_itl_us = static_cast<double>(itl_sum) / gaps;
  }
  return m;
}

Report aggregate(std::vector<RequestRecord> requests, ThroughputWindow window) {
  Report report;
  report.window = window;
  std::sort(requests.begin(), requests.end(),
            [](const RequestRecord& a, const RequestRecord& b) { return a.request_id < b.request_id; });
  std::vector<double> ttft, tpot, itl;
  std::int64_t matched = 0;
  std::int64_t matchable = 0;
  bool any = false;
  Micros first_arrival = 0, first_token = 0, last_completion = 0;
  for (const auto& r : requests) {
    RequestMetrics m = request_metrics(r);
    ttft.push_back(static_cast<double>(m.ttft_us));
    if (m.tpot_us) tpot.push_back(*m.tpot_us);
    for (Micros gap : m.itl_us) itl.push_back(static_cast<double>(gap));
    report.output_tokens += static_cast<std::int64_t>(r.token_times.size());
    matched += r.matched_tokens;
    matchable += r.matchable_tokens;
    if (!r.token_times.empty()) {
      if (!any) {
        first_arrival = r.arrival_time;
        first_token = m.first_token_time;
        last_completion = m.completion_time;
        any = true;
      }
      first_arrival = std::min(first_arrival, r.arrival_time);
      first_token = std::min(first_token, m.first_token_time);
      last_completion = std::max(last_completion, m.completion_time);
    }
    report.per_request.push_back(std::move(m));
  }
  report.ttft_us = summarize(std::move(ttft));
  report.tpot_us = summarize(std::move(tpot));
  report.itl_us = summarize(std::move(itl));
  report.cache_hit_rate = matchable > 0 ? static_cast<double>(matched) / static_cast<double>(matchable) : 0.0;
  if (any) {
    report.window_start = window == ThroughputWindow::kFull ? first_arrival : first_token;
    report.window_end = last_completion;
    const Micros span = report.window_end - report.window_start;
    if (span > 0) {
      const double seconds = static_cast<double>(span) / 1e6;
      report.token_throughput_per_s = static_cast<double>(report.output_tokens) / seconds;
      report.request_throughput_per_s = static_cast<double>(requests.size()) / seconds;
    }
  }
  report.requests = std::move(requests);
  return report;
}

Report finalize(const Tracker& tracker, ThroughputWindow window) {
  std::vector<RequestId> missing;
  std::vector<RequestRecord> rows;
  for (const auto& [id, r] : tracker.records()) {
    if (!r.finished()) missing.push_back(id);
    rows.push_back(r);
  }
  if (!missing.empty()) {
    std::string ids;
    for (std::size_t i = 0; i < missing.size() && i < 20; ++i) ids += fmt::format("{}{}", i ? "," : "", missing[i]);
    if (missing.size() > 20) ids += ",...";
    fail(ErrorCode::kIncompleteRun, fmt::format("{} unfinished requests: {}", missing.size(), ids));
  }
  return aggregate(std::move(rows), window);
}

namespace {

nlohmann::ordered_json summary_block(const Summary& s) {
  return {{"count", s.count}, {"mean", s.mean}, {"p50", s.p50}, {"p99", s.p99}, {"min", s.min}, {"max", s.max}};
}

}  // namespace

void write_requests_jsonl(const Report& report, std::ostream& out) {
  out << nlohmann::ordered_json{{"schema", kRequestsSchema}}.dump() << '\n';
  for (std::size_t i = 0; i < report.requests.size(); ++i) {
    const RequestRecord& r = report.requests[i];
    const RequestMetrics& m = report.per_request[i];
    nlohmann::ordered_json row;
    row["request_id"] = r.request_id;
    row["arrival_us"] = r.arrival_time;
    row["input_len"] = r.input_len;
    row["output_len"] = r.output_len;
    row["prefill_instance"] = r.prefill_instance;
    row["decode_instance"] = r.decode_instance;
    row["matched_tokens"] = r.matched_tokens;
    row["matchable_tokens"] = r.matchable_tokens;
    row["preemptions"] = r.preemptions;
    row["ttft_us"] = m.ttft_us;
    row["tpot_us"] = m.tpot_us ? nlohmann::ordered_json(*m.tpot_us) : nlohmann::ordered_json(nullptr);
    row["token_times_us"] = r.token_times;
    out << row.dump() << '\n';
  }
}

std::vector<RequestRecord> read_requests_jsonl(std::istream& in) {
  std::vector<RequestRecord> rows;
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kParseError, fmt::format("bad request row: {}", e.what()));
    }
    if (header) {
      if (j.value("schema", "") != kRequestsSchema) fail(ErrorCode::kParseError, "missing requests schema header");
      header = false;
      continue;
    }
    RequestRecord r;
    r.request_id = j.at("request_id").get<RequestId>();
    r.arrival_time = j.at("arrival_us").get<Micros>();
    r.input_len = j.at("input_len").get<std::int64_t>();
    r.output_len = j.at("output_len").get<std::int64_t>();
    r.prefill_instance = j.at("prefill_instance").get<InstanceId>();
    r.decode_instance = j.at("decode_instance").get<InstanceId>();
    r.matched_tokens = j.at("matched_tokens").get<std::int64_t>();
    r.matchable_tokens = j.at("matchable_tokens").get<std::int64_t>();
    r.preemptions = j.at("preemptions").get<std::int64_t>();
    r.token_times = j.at("token_times_us").get<std::vector<Micros>>();
    rows.push_back(std::move(r));
  }
  return rows;
}

nlohmann::ordered_json summary_json(const Report& report) {
  nlohmann::ordered_json j;
  j["requests"] = report.requests.size();
  j["output_tokens"] = report.output_tokens;
  j["ttft_us"] = summary_block(report.ttft_us);
  j["tpot_us"] = summary_block(report.tpot_us);
  j["itl_us"] = summary_block(report.itl_us);
  j["throughput"] = {{"window", throughput_window_name(report.window)},
                     {"start_us", report.window_start},
                     {"end_us", report.window_end},
                     {"tokens_per_s", report.token_throughput_per_s},
                     {"requests_per_s", report.request_throughput_per_s}};
  j["cache_hit_rate"] = report.cache_hit_rate;
  return j;
}

}  // namespace servesim::metrics
