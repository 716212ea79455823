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

#include "servesim/cli/runner.h"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "servesim/serve/cluster.h"

namespace servesim::cli {

int exit_code_for(ErrorCode code) {
  switch (code) {
    case ErrorCode::kSchemaError:
    case ErrorCode::kCrossRefError:
      return kExitConfig;
    case ErrorCode::kParseError:
    case ErrorCode::kDuplicateKey:
    case ErrorCode::kEmptyTable:
    case ErrorCode::kDuplicateId:
    case ErrorCode::kTokenCountMismatch:
    case ErrorCode::kNoDataForOperator:
      return kExitInput;
    case ErrorCode::kIoError:
      return kExitIo;
    default:
      return kExitSimulation;
  }
}

std::vector<workload::WorkloadRecord> load_run_workload(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::kIoError, fmt::format("workload '{}' not found", path.string()));
  }
  auto records = workload::load_workload(path);
  const auto sidecar = workload::token_sidecar_path(path);
  if (std::filesystem::exists(sidecar)) workload::load_token_sidecar(sidecar, records);
  return records;
}

namespace {

nlohmann::ordered_json instance_json(const serve::Instance& inst, Micros span) {
  const auto& s = inst.stats();
  const auto& spec = inst.spec();
  const std::int64_t stages = std::int64_t{spec.pp_degree} * spec.dp_degree;
  nlohmann::ordered_json j;
  j["id"] = inst.id();
  j["role"] = role_name(inst.role());
  j["model"] = spec.model_id;
  j["batches"] = s.batches;
  j["prefill_tokens"] = s.prefill_tokens;
  j["decode_tokens"] = s.decode_tokens;
  j["busy_stage_us"] = s.busy_stage_us;
  j["utilization"] = span > 0 ? static_cast<double>(s.busy_stage_us) / static_cast<double>(span * stages) : 0.0;
  j["preemptions"] = s.preemptions;
  j["max_running"] = s.max_running;
  j["cache"] = {{"evicted_nodes", s.evicted_nodes},
                {"spilled_nodes", s.spilled_nodes},
                {"evicted_bytes", s.evicted_bytes},
                {"hit_loads", s.hit_loads},
                {"hit_load_us", s.hit_load_us}};
  j["lookups"] = {{"interpolated", s.interpolated_lookups}, {"tp_approximated", s.approximated_lookups}};
  if (const moe::MoeRuntime* m = inst.moe()) {
    const auto& ms = m->stats();
    j["moe"] = {{"iterations", ms.iterations},
                {"moe_layers", ms.moe_layers},
                {"all_to_all_events", ms.all_to_all_events},
                {"routed_tokens", ms.routed_tokens},
                {"expert_tokens", ms.expert_tokens},
                {"fetches", ms.fetches},
                {"fetch_bytes", ms.fetch_bytes},
                {"fetch_added_us", ms.fetch_added_us},
                {"expert_load", ms.expert_load}};
  }
  return j;
}

}  // namespace

RunResult run_simulation(const RunConfig& config, std::vector<workload::WorkloadRecord> workload,
                         const std::map<std::string, perf::PerfTable>& tables, std::ostream* event_log) {
  workload = workload::synthesize_arrivals(std::move(workload), config.arrival_rate_per_s, config.cluster.seed);
  serve::Cluster cluster(config.cluster, tables);
  if (event_log != nullptr) cluster.engine().set_event_log(event_log);
  cluster.submit(workload);
  cluster.run();

  RunResult out;
  out.dispatched_events = cluster.engine().dispatched();
  out.report = metrics::finalize(cluster.tracker(), config.window);
  std::ostringstream rows;
  metrics::write_requests_jsonl(out.report, rows);
  out.requests_jsonl = rows.str();

  auto core = metrics::summary_json(out.report);
  std::istringstream reread(out.requests_jsonl);
  const auto again = metrics::summary_json(metrics::aggregate(metrics::read_requests_jsonl(reread), config.window));
  if (again.dump() != core.dump()) {
    throw std::logic_error("summary aggregates differ from those recomputed from request rows");
  }

  auto& s = out.summary;
  s["schema"] = metrics::kSummarySchema;
  s["seed"] = config.cluster.seed;
  for (auto& [key, value] : core.items()) s[key] = value;
  const Micros span = out.report.window_end - out.report.window_start;
  s["instances"] = nlohmann::ordered_json::array();
  std::int64_t approximated = 0;
  for (const auto& inst : cluster.instances()) {
    s["instances"].push_back(instance_json(*inst, span));
    approximated += inst->stats().approximated_lookups;
  }
  const auto& cs = cluster.stats();
  s["cluster"] = {{"kv_transfers", cs.kv_transfers},
                  {"kv_transfer_bytes", cs.kv_transfer_bytes},
                  {"layerwise_fallbacks", cs.layerwise_fallbacks},
                  {"transfer_waits", cs.transfer_waits},
                  {"decode_reprefills", cs.decode_reprefills},
                  {"dispatched_events", out.dispatched_events},
                  {"end_time_us", cluster.engine().now()}};
  auto warnings = nlohmann::ordered_json::array();
  if (approximated > 0) {
    warnings.push_back(
        fmt::format("{} operator lookups used a scaled neighbouring tp degree (tp_scaling_fallback)", approximated));
  }
  if (cs.layerwise_fallbacks > 0) {
    warnings.push_back(fmt::format("{} layerwise transfers fell back to full blocking for lack of decode memory",
                                   cs.layerwise_fallbacks));
  }
  s["warnings"] = warnings;
  s["config"] = echo_config(config);
  return out;
}

void write_outputs(const RunResult& result, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorCode::kIoError, fmt::format("cannot create '{}': {}", dir.string(), ec.message()));
  auto write = [&](const std::string& name, const std::string& body) {
    const auto path = dir / name;
    std::ofstream f(path, std::ios::binary);
    f << body;
    if (!f) fail(ErrorCode::kIoError, fmt::format("cannot write '{}'", path.string()));
  };
  write("requests.jsonl", result.requests_jsonl);
  write("summary.json", result.summary.dump(2) + "\n");
}

}  // namespace servesim::cli
