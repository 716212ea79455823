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
#include <deque>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "servesim/common.h"
#include "servesim/metrics/metrics.h"
#include "servesim/net/network.h"
#include "servesim/perf/perf_table.h"
#include "servesim/route/router.h"
#include "servesim/serve/instance.h"
#include "servesim/sim/engine.h"
#include "servesim/workload/workload.h"

namespace servesim::serve {

enum class TransferPolicy { kFullBlocking, kLayerwiseOverlap };

const char* transfer_policy_name(TransferPolicy policy);
// "full_blocking" or "layerwise".
TransferPolicy parse_transfer_policy(const std::string& text);

enum class DecodeSelection { kAtPrefillComplete, kAtArrival };

const char* decode_selection_name(DecodeSelection selection);
// "prefill_complete" or "arrival".
DecodeSelection parse_decode_selection(const std::string& text);

struct PdConfig {
  route::Pairing pairing;
  TransferPolicy transfer = TransferPolicy::kFullBlocking;
  DecodeSelection select_at = DecodeSelection::kAtPrefillComplete;
};

struct ClusterSpec {
  std::vector<InstanceSpec> instances;
  route::Policy router = route::Policy::kRoundRobin;
  PdConfig pd;
  CacheConfig cache;
  net::Topology topology;
  std::uint64_t seed = 0;
  std::uint64_t livelock_cap = sim::Engine::kDefaultLivelockCap;
  perf::LookupOptions lookup;
};

struct ClusterStats {
  std::int64_t kv_transfers = 0;
  Bytes kv_transfer_bytes = 0;
  std::int64_t layerwise_fallbacks = 0;  // reservation failed at final chunk
  std::int64_t transfer_waits = 0;       // destination memory was short
  std::int64_t decode_reprefills = 0;
};

// Instances, router, network and metrics of one simulation run.
class Cluster : public InstanceObserver {
 public:
  // `tables` are keyed by model id and must outlive the cluster. Throws
  // CrossRefError for a model without a table or an invalid PD layout.
  Cluster(ClusterSpec spec, const std::map<std::string, perf::PerfTable>& tables);
  ~Cluster() override;

  Cluster(const Cluster&) = delete;
  Cluster& operator=(const Cluster&) = delete;

  // Registers requests and schedules their arrivals. Records without a
  // model id go to the only model served; records need arrival times.
  void submit(const std::vector<workload::WorkloadRecord>& records);

  // Runs to drain. Throws Deadlock when requests remain unfinished.
  sim::DrainResult run(std::optional<Micros> deadline = std::nullopt);

  bool pd_mode() const { return pd_mode_; }
  sim::Engine& engine() { return engine_; }
  net::Network& network() { return network_; }
  const metrics::Tracker& tracker() const { return tracker_; }
  const ClusterSpec& spec() const { return spec_; }
  const ClusterStats& stats() const { return stats_; }
  const std::vector<std::unique_ptr<Instance>>& instances() const { return instances_; }
  Instance& instance(InstanceId id);
  const Request& request(RequestId id) const;

  // InstanceObserver.
  void on_prefill_complete(Instance& instance, Request& request, Micros now) override;
  void on_final_chunk(Instance& instance, Request& request, std::span<const Micros> layer_end,
                      Micros now) override;
  void on_finished(Instance& instance, Request& request, Micros now) override;
  void on_memory_released(Instance& instance, Micros now) override;
  void on_decode_preempted(Instance& instance, Request& request, Micros now) override;

 private:
  void on_arrival(Request& request, Micros now);
  void route_to_prefill(Request& request, Micros now, bool front);
  InstanceId choose_decode(const Request& request);
  std::vector<route::InstanceSnapshot> snapshots(const Request* request) const;
  Bytes kv_bytes(const Request& request, std::int64_t tokens) const;
  Bytes layer_kv_bytes(const Request& request, std::int64_t tokens) const;
  bool try_start_transfer(Request& request, InstanceId decode, Micros now);
  void start_full_transfer(Request& request, Micros now);
  void complete_handoff(Request& request, Micros now);
  void retry_pending(InstanceId decode, Micros now);

  ClusterSpec spec_;
  const std::map<std::string, perf::PerfTable>& tables_;
  sim::Engine engine_;
  net::Network network_;
  metrics::Tracker tracker_;
  std::unique_ptr<mem::RadixCache> shared_cache_;
  std::vector<std::unique_ptr<Instance>> instances_;
  std::map<InstanceId, Instance*> by_id_;
  std::deque<Request> requests_;
  std::map<RequestId, Request*> by_request_;
  route::RouterState router_state_;
  std::map<InstanceId, std::deque<Request*>> pending_transfers_;  // per decode instance
  bool pd_mode_ = false;
  ClusterStats stats_;
};

}  // namespace servesim::serve
