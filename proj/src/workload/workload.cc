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

#include "servesim/workload/workload.h"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include <fmt/format.h>

#include "servesim/rng.h"

namespace servesim::workload {

namespace {

constexpr std::uint64_t kArrivalStream = 0x61727269766c;  // "arrivl"

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
std::optional<T> to_int(const std::string& s) {
  T value{};
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), value);
  if (ec != std::errc() || ptr != s.data() + s.size() || s.empty()) return std::nullopt;
  return value;
}

[[noreturn]] void parse_fail(const std::filesystem::path& path, std::int64_t line, const std::string& what) {
  fail(ErrorCode::kParseError, fmt::format("{}:{}: {}", path.string(), line, what));
}

}  // namespace

std::vector<WorkloadRecord> load_workload(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, fmt::format("cannot open workload '{}'", path.string()));
  std::vector<WorkloadRecord> records;
  std::set<RequestId> seen;
  std::string line;
  std::int64_t line_no = 0;
  bool first = true;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) fields.push_back(trim(cell));
    if (!line.empty() && line.back() == ',') fields.emplace_back();
    if (first && !fields.empty() && fields[0] == "request_id") {
      first = false;
      continue;
    }
    first = false;
    if (fields.size() < 3 || fields.size() > 5) parse_fail(path, line_no, "expected 3 to 5 fields");
    WorkloadRecord r;
    auto id = to_int<RequestId>(fields[0]);
    auto in_len = to_int<std::int64_t>(fields[1]);
    auto out_len = to_int<std::int64_t>(fields[2]);
    if (!id || !in_len || !out_len) parse_fail(path, line_no, "request_id, input_len and output_len must be integers");
    if (*in_len < 1 || *out_len < 1) parse_fail(path, line_no, "input_len and output_len must be >= 1");
    r.request_id = *id;
    r.input_len = *in_len;
    r.output_len = *out_len;
    if (fields.size() == 4) {
      if (auto t = to_int<Micros>(fields[3])) {
        r.arrival_time_us = *t;
      } else {
        r.model_id = fields[3];
      }
    } else if (fields.size() == 5) {
      if (!fields[3].empty()) {
        auto t = to_int<Micros>(fields[3]);
        if (!t) parse_fail(path, line_no, fmt::format("bad arrival time '{}'", fields[3]));
        r.arrival_time_us = *t;
      }
      r.model_id = fields[4];
    }
    if (r.arrival_time_us && *r.arrival_time_us < 0) parse_fail(path, line_no, "negative arrival time");
    if (!seen.insert(r.request_id).second) {
      fail(ErrorCode::kDuplicateId, fmt::format("{}:{}: request id {} repeated", path.string(), line_no, r.request_id));
    }
    records.push_back(std::move(r));
  }
  return records;
}

std::filesystem::path token_sidecar_path(const std::filesystem::path& workload) {
  return std::filesystem::path(workload.string() + ".tokens");
}

void load_token_sidecar(const std::filesystem::path& path, std::vector<WorkloadRecord>& records) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, fmt::format("cannot open token sidecar '{}'", path.string()));
  std::unordered_map<RequestId, WorkloadRecord*> by_id;
  for (auto& r : records) by_id[r.request_id] = &r;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto colon = line.find(':');
    if (colon == std::string::npos) parse_fail(path, line_no, "expected 'request_id: ids'");
    auto id = to_int<RequestId>(trim(line.substr(0, colon)));
    if (!id) parse_fail(path, line_no, "bad request id");
    auto it = by_id.find(*id);
    if (it == by_id.end()) {
      fail(ErrorCode::kUnknownRequest, fmt::format("{}:{}: request {} not in workload", path.string(), line_no, *id));
    }
    std::vector<TokenId> ids;
    std::stringstream ss(line.substr(colon + 1));
    std::string tok;
    while (ss >> tok) {
      auto t = to_int<TokenId>(tok);
      if (!t) parse_fail(path, line_no, fmt::format("bad token id '{}'", tok));
      ids.push_back(*t);
    }
    if (static_cast<std::int64_t>(ids.size()) != it->second->input_len) {
      fail(ErrorCode::kTokenCountMismatch,
           fmt::format("{}:{}: request {} lists {} token ids for input_len {}", path.string(), line_no, *id,
                       ids.size(), it->second->input_len));
    }
    it->second->input_token_ids = std::move(ids);
  }
}

double poisson_gap_seconds(std::uint64_t index, double rate_per_s, std::uint64_t seed) {
  if (!(rate_per_s > 0)) fail(ErrorCode::kInvalidArgument, "arrival rate must be > 0");
  CounterRng rng(seed, kArrivalStream);
  return -std::log1p(-rng.uniform(index)) / rate_per_s;
}

std::vector<WorkloadRecord> synthesize_arrivals(std::vector<WorkloadRecord> records, double rate_per_s,
                                                std::uint64_t seed) {
  double seconds = 0;
  std::uint64_t drawn = 0;
  for (auto& r : records) {
    if (r.arrival_time_us) continue;
    seconds += poisson_gap_seconds(drawn++, rate_per_s, seed);
    r.arrival_time_us = round_half_up(seconds * 1e6);
  }
  std::stable_sort(records.begin(), records.end(), [](const WorkloadRecord& a, const WorkloadRecord& b) {
    return *a.arrival_time_us < *b.arrival_time_us;
  });
  return records;
}

}  // namespace servesim::workload
