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
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "servesim/common.h"
#include "servesim/mem/block_pool.h"
#include "servesim/mem/radix_cache.h"
#include "servesim/metrics/metrics.h"
#include "servesim/moe/moe.h"
#include "servesim/net/network.h"
#include "servesim/perf/iteration.h"
#include "servesim/perf/perf_table.h"
#include "servesim/sim/engine.h"

namespace servesim::serve {

enum class RequestState { kQueued, kPrefilling, kAwaitingKVTransfer, kDecoding, kPreempted, kFinished };

const char* request_state_name(RequestState state);

struct Request {
  RequestId id = 0;
  Micros arrival = 0;
  std::int64_t input_len = 0;
  std::int64_t output_len = 0;
  std::string model_id;
  std::vector<mem::TokenId> tokens;  // empty when the workload has no ids

  RequestState state = RequestState::kQueued;
  std::int64_t generated = 0;
  std::int64_t prefill_target = 0;  // tokens of the current prefill pass
  std::int64_t prefilled = 0;       // of prefill_target, cached tokens included
  mem::KvHandle kv;

  InstanceId instance = -1;
  std::int32_t replica = -1;
  std::uint64_t admit_seq = 0;
  bool in_flight = false;
  bool matched_once = false;
  std::int64_t preemptions = 0;

  // Disaggregated serving.
  InstanceId prefill_instance = -1;
  InstanceId decode_instance = -1;
  std::int32_t decode_replica = -1;
  mem::KvHandle dest_kv;
  bool transfer_reserved = false;
  bool transfer_done = false;
  bool prefill_done = false;

  // Remaining prefill tokens plus remaining output tokens.
  std::int64_t outstanding_tokens() const;
};

enum class SchedulerPolicy { kFifo, kDecodePriority };

const char* scheduler_policy_name(SchedulerPolicy policy);
SchedulerPolicy parse_scheduler_policy(const std::string& text);

struct SchedulerConfig {
  std::int64_t max_batch_tokens = 8192;
  std::int64_t max_batch_seqs = 256;
  std::int64_t prefill_chunk = 512;
  SchedulerPolicy policy = SchedulerPolicy::kFifo;
};

struct MemoryConfig {
  Bytes device_memory_bytes = 24LL << 30;  // per device
  double memory_bandwidth_bytes_per_s = 936e9;
  Bytes host_memory_bytes = 0;  // KV spill space per device
  double host_link_bandwidth_bytes_per_s = 32e9;
  Bytes reserved_bytes = 0;  // per device, kept free of KV (activations)
};

struct CacheConfig {
  bool enabled = false;
  bool shared = false;  // one tree for the whole cluster
  std::int32_t block_size = 16;
  std::string eviction_policy = "lru";
};

struct MoeSpec {
  std::int32_t ep_degree = 1;
  moe::GateConfig gate;
  moe::OffloadPolicy offload = moe::OffloadPolicy::kNone;
  double offloaded_fraction = 0;  // of each layer's experts
};

struct InstanceSpec {
  InstanceId id = 0;
  Role role = Role::kUnified;
  std::string model_id;
  std::string hw_id;
  std::vector<DeviceId> devices;  // dp x pp x tp, replica-major
  std::int32_t tp_degree = 1;
  std::int32_t pp_degree = 1;
  std::int32_t dp_degree = 1;
  MemoryConfig memory;
  SchedulerConfig scheduler;
  std::optional<MoeSpec> moe;
};

struct InstanceStats {
  std::int64_t batches = 0;
  std::int64_t prefill_tokens = 0;
  std::int64_t decode_tokens = 0;
  Micros busy_stage_us = 0;  // summed over stages and replicas
  std::int64_t preemptions = 0;
  std::int64_t evicted_nodes = 0;
  std::int64_t spilled_nodes = 0;
  Bytes evicted_bytes = 0;
  std::int64_t hit_loads = 0;
  Micros hit_load_us = 0;
  std::int64_t max_running = 0;
  std::int64_t interpolated_lookups = 0;
  std::int64_t approximated_lookups = 0;
};

class Instance;

// Cluster-level reactions to instance events.
class InstanceObserver {
 public:
  virtual ~InstanceObserver() = default;
  // A Prefill-role instance finished the prompt of a request that still
  // needs decoding.
  virtual void on_prefill_complete(Instance& instance, Request& request, Micros now) = 0;
  // A batch holding the last prefill chunk of `request` was scheduled;
  // `layer_end` are absolute completion times of each layer.
  virtual void on_final_chunk(Instance& instance, Request& request, std::span<const Micros> layer_end,
                              Micros now) = 0;
  virtual void on_finished(Instance& instance, Request& request, Micros now) = 0;
  virtual void on_memory_released(Instance& instance, Micros now) = 0;
  // A Decode-role instance preempted `request`; it must be prefilled again.
  virtual void on_decode_preempted(Instance& instance, Request& request, Micros now) = 0;
};

struct InstanceContext {
  sim::Engine* engine = nullptr;
  net::Network* network = nullptr;
  metrics::Tracker* tracker = nullptr;
  const perf::PerfTable* table = nullptr;
  perf::LookupOptions lookup;
  CacheConfig cache;
  mem::RadixCache* shared_cache = nullptr;  // when cache.shared
  InstanceObserver* observer = nullptr;
  std::uint64_t seed = 0;
};

// KV pool sizing for one replica.
mem::PoolConfig pool_config(const InstanceSpec& spec, const perf::ModelMeta& meta, std::int32_t block_size);

// One serving instance: dp replicas, each with its own queue, scheduler,
// KV pool and pipeline stages.
class Instance {
 public:
  Instance(InstanceSpec spec, InstanceContext context);
  ~Instance();

  Instance(const Instance&) = delete;
  Instance& operator=(const Instance&) = delete;

  InstanceId id() const { return spec_.id; }
  Role role() const { return spec_.role; }
  const InstanceSpec& spec() const { return spec_; }
  const InstanceStats& stats() const { return stats_; }
  const moe::MoeRuntime* moe() const { return moe_.get(); }
  std::int32_t replica_count() const { return static_cast<std::int32_t>(replicas_.size()); }

  // Appends to a replica queue chosen round robin; `front` places it first
  // (re-prefill after preemption). Throws RoleMismatch on Decode instances.
  void enqueue(Request& request, Micros now, bool front = false);

  // Decode side of a KV handoff.
  std::int32_t next_transfer_replica();
  // Reserves KV for `tokens` on `replica`, evicting cached prefixes when
  // needed. Returns false when memory is short.
  bool reserve_incoming(Request& request, std::int32_t replica, std::int64_t tokens, Micros now);
  void admit_transferred(Request& request, Micros now);
  // Prefill side: drops the source KV once the transfer landed.
  void release_transferred(Request& request, Micros now);

  std::int64_t outstanding_tokens() const;
  // Longest cached prefix over this instance's replicas, without side effects.
  std::int64_t peek_prefix(std::span<const mem::TokenId> tokens) const;

  DeviceId transfer_device(std::int32_t replica) const;
  mem::BlockPool& pool(std::int32_t replica);
  mem::RadixCache* cache(std::int32_t replica);
  std::int64_t queued() const;
  std::int64_t running() const;
  std::string describe() const;

 private:
  struct Replica;
  struct Batch;

  void request_batch(Replica& rep, Micros now);
  void on_batch_start(Replica& rep);
  void on_batch_complete(Replica& rep, Batch& batch);
  std::shared_ptr<Batch> form_batch(Replica& rep, Micros now);
  bool admit_from_queue(Replica& rep, Batch& batch, std::int64_t& budget, Micros now);
  bool ensure_kv(Replica& rep, Request& request, std::int64_t tokens, Micros now);
  bool make_room(Replica& rep, Bytes deficit, Micros now);
  Request* pick_victim(Replica& rep);
  void preempt(Replica& rep, Request& victim, Micros now);
  void emit_token(Request& request, Micros now);
  void cache_prompt(Replica& rep, Request& request, Micros now);
  void finish(Replica& rep, Request& request, Micros now);
  void remove_running(Replica& rep, Request& request);
  [[noreturn]] void deadlock(const Replica& rep, Micros now) const;

  InstanceSpec spec_;
  InstanceContext ctx_;
  std::vector<std::unique_ptr<Replica>> replicas_;
  std::unique_ptr<moe::MoeRuntime> moe_;
  InstanceStats stats_;
  std::uint64_t next_replica_ = 0;
  std::uint64_t next_admit_ = 0;
};

}  // namespace servesim::serve
