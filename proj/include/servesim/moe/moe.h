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
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "servesim/common.h"
#include "servesim/net/network.h"
#include "servesim/perf/iteration.h"
#include "servesim/perf/perf_table.h"
#include "servesim/rng.h"

namespace servesim::sim {
class Engine;
}

namespace servesim::moe {

using ExpertId = std::int32_t;

enum class GateKind { kUniform, kZipf, kTraceReplay };

const char* gate_kind_name(GateKind kind);
GateKind parse_gate_kind(const std::string& text);

// Routing trace for TraceReplay: lines `layer,token_index,expert_ids...`.
class RoutingTrace {
 public:
  static RoutingTrace load(const std::filesystem::path& path);

  void add(std::int32_t layer, std::int64_t token_index, std::vector<ExpertId> experts);
  const std::vector<ExpertId>* find(std::int32_t layer, std::int64_t token_index) const;
  std::size_t size() const { return entries_.size(); }

 private:
  std::map<std::pair<std::int32_t, std::int64_t>, std::vector<ExpertId>> entries_;
};

// Gate mimicry. Choices are a pure function of (layer, token_index) and the
// router's construction parameters.
class ExpertRouter {
 public:
  virtual ~ExpertRouter() = default;
  virtual std::int32_t expert_count() const = 0;
  virtual std::int32_t top_k() const = 0;
  // top_k distinct expert ids for one token.
  virtual std::vector<ExpertId> route(std::int32_t layer, std::int64_t token_index) const = 0;
};

struct GateConfig {
  GateKind kind = GateKind::kUniform;
  double zipf_s = 1.0;
  std::filesystem::path trace_path;
};

// `stream` separates routers of different instances under one seed.
std::unique_ptr<ExpertRouter> make_router(const GateConfig& config, std::int32_t expert_count,
                                          std::int32_t top_k, std::uint64_t seed, std::uint64_t stream);
std::unique_ptr<ExpertRouter> make_trace_router(std::shared_ptr<const RoutingTrace> trace,
                                                std::int32_t expert_count, std::int32_t top_k);

// Expert location for one layer: experts are split in contiguous blocks over
// the ep ranks; an offloaded expert's weights live in host memory.
struct ExpertPlacement {
  std::int32_t expert_count = 0;
  std::int32_t ep_degree = 1;
  std::vector<bool> offloaded;

  static ExpertPlacement contiguous(std::int32_t expert_count, std::int32_t ep_degree);
  std::int32_t rank_of(ExpertId expert) const;
  bool is_offloaded(ExpertId expert) const { return !offloaded.empty() && offloaded[expert]; }
  std::int32_t offloaded_count() const;
};

// Offloads `count` experts chosen by a seeded permutation.
ExpertPlacement random_offload(std::int32_t expert_count, std::int32_t ep_degree, std::int32_t count,
                               std::uint64_t seed, std::uint64_t stream);

struct ExpertAssignment {
  std::int32_t layer = 0;
  std::vector<std::vector<ExpertId>> experts;  // per token
  std::vector<std::int64_t> counts;            // per expert
  // send[src][dst]: activation bytes moved from the token's origin rank to
  // the rank holding the expert.
  std::vector<std::vector<Bytes>> send;
  std::int64_t max_tokens_per_rank = 0;
};

// Routes tokens [first_token, first_token + tokens); token i originates on
// rank i % ep.
ExpertAssignment route_tokens(const ExpertRouter& router, std::int32_t layer, std::int64_t first_token,
                              std::int64_t tokens, const ExpertPlacement& placement,
                              Bytes bytes_per_token);

enum class OffloadPolicy { kNone, kOnDemand, kPrefetch };

const char* offload_policy_name(OffloadPolicy policy);
OffloadPolicy parse_offload_policy(const std::string& text);

struct FetchResult {
  Micros added_us = 0;
  Micros completion = 0;
  std::int64_t fetches = 0;
  Bytes bytes = 0;
};

// Brings `expert_count` expert weights over a host link. OnDemand issues at
// `compute_ready`; Prefetch issues at `prefetch_issue` (one layer ahead).
// The added latency is max(0, completion - compute_ready).
FetchResult offload_fetch(net::Network& network, std::size_t host_channel, std::int64_t expert_count,
                          Bytes expert_bytes, OffloadPolicy policy, Micros prefetch_issue,
                          Micros compute_ready, std::uint64_t owner = 0);

// Where the MoE part of a layer runs.
struct MoeExecution {
  std::string model_id;
  std::string hw_id;
  perf::Phase phase = perf::Phase::kDecode;
  std::vector<DeviceId> ep_devices;        // one per ep rank
  std::vector<std::size_t> host_channels;  // one per ep rank, for offload
  const net::Topology* topology = nullptr;
  net::Network* network = nullptr;         // required for offload
  OffloadPolicy offload = OffloadPolicy::kNone;
  perf::LookupOptions lookup;
};

struct MoeLayerTiming {
  Micros dispatch_us = 0;
  Micros compute_us = 0;  // slowest rank, including fetch stalls
  Micros combine_us = 0;
  Micros fetch_added_us = 0;
  std::int64_t fetches = 0;
  Bytes fetch_bytes = 0;
  std::vector<Micros> rank_compute;  // expert compute per rank, without stalls

  Micros total() const { return dispatch_us + compute_us + combine_us; }
};

// Dispatch all-to-all, per-rank expert compute (max over ranks), combine
// all-to-all. `layer_start` and `prev_layer_start` place offload fetches.
MoeLayerTiming moe_layer_time(const ExpertAssignment& assignment, const ExpertPlacement& placement,
                              const perf::PerfTable& table, const MoeExecution& exec,
                              Micros dense_end, Micros prev_layer_start);

struct MoeStats {
  std::int64_t iterations = 0;
  std::int64_t moe_layers = 0;
  std::int64_t all_to_all_events = 0;
  std::int64_t routed_tokens = 0;
  std::int64_t expert_tokens = 0;
  std::int64_t fetches = 0;
  Bytes fetch_bytes = 0;
  Micros fetch_added_us = 0;
  std::vector<std::int64_t> expert_load;  // per expert, all layers
};

// Per-instance MoE runtime plugged into iteration pricing. Keeps per-layer
// token counters so routing draws never repeat.
class MoeRuntime : public perf::LayerHook {
 public:
  struct Options {
    std::int32_t ep_degree = 1;
    OffloadPolicy offload = OffloadPolicy::kNone;
    std::vector<ExpertPlacement> placements;  // per layer
    bool record_assignments = false;
  };

  MoeRuntime(const perf::PerfTable& table, std::unique_ptr<ExpertRouter> router, Options options);

  // Binds the next iteration; `engine` (optional) receives one Custom event
  // per all-to-all.
  void begin_iteration(std::int64_t tokens, bool has_prefill, MoeExecution exec, Micros start,
                       sim::Engine* engine);

  Micros after_dense(std::int32_t layer, Micros layer_start, Micros dense_end) override;

  const MoeStats& stats() const { return stats_; }
  const Options& options() const { return options_; }
  const std::vector<ExpertAssignment>& assignments() const { return assignments_; }

 private:
  const perf::PerfTable& table_;
  std::unique_ptr<ExpertRouter> router_;
  Options options_;
  MoeStats stats_;
  std::vector<std::int64_t> next_token_;  // per layer
  std::vector<ExpertAssignment> assignments_;

  std::int64_t tokens_ = 0;
  MoeExecution exec_;
  Micros iteration_start_ = 0;
  Micros prev_layer_start_ = 0;
  sim::Engine* engine_ = nullptr;
};

}  // namespace servesim::moe
