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

#include "servesim/serve/instance.h"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

namespace servesim::serve {

const char* request_state_name(RequestState state) {
  switch (state) {
    case RequestState::kQueued: return "queued";
    case RequestState::kPrefilling: return "prefilling";
    case RequestState::kAwaitingKVTransfer: return "awaiting_kv_transfer";
    case RequestState::kDecoding: return "decoding";
    case RequestState::kPreempted: return "preempted";
    case RequestState::kFinished: return "finished";
  }
  return "?";
}

std::int64_t Request::outstanding_tokens() const {
  std::int64_t prefill = 0;
  if (state == RequestState::kQueued || state == RequestState::kPreempted) {
    prefill = input_len + generated;
  } else if (state == RequestState::kPrefilling) {
    prefill = prefill_target - prefilled;
  }
  return prefill + (output_len - generated);
}

const char* scheduler_policy_name(SchedulerPolicy policy) {
  return policy == SchedulerPolicy::kFifo ? "fifo" : "decode_priority";
}

SchedulerPolicy parse_scheduler_policy(const std::string& text) {
  if (text == "fifo") return SchedulerPolicy::kFifo;
  if (text == "decode_priority") return SchedulerPolicy::kDecodePriority;
  fail(ErrorCode::kInvalidArgument, fmt::format("unknown scheduler policy '{}'", text));
}

mem::PoolConfig pool_config(const InstanceSpec& spec, const perf::ModelMeta& meta, std::int32_t block_size) {
  const std::int64_t shard = static_cast<std::int64_t>(spec.tp_degree) * spec.pp_degree;
  const std::int64_t stage_layers = ceil_div(meta.layer_count, spec.pp_degree);
  mem::PoolConfig c;
  c.block_size = block_size;
  c.block_bytes = std::max<Bytes>(
      1, ceil_div(block_size * meta.kv_bytes_per_token_per_layer * stage_layers, spec.tp_degree));
  Bytes weights = meta.weight_bytes;
  if (spec.moe && meta.moe) {
    const auto offloaded = static_cast<Bytes>(std::llround(spec.moe->offloaded_fraction * meta.moe->expert_count));
    weights -= offloaded * meta.layer_count * meta.moe->expert_weight_bytes;
  }
  c.device_capacity_bytes = spec.memory.device_memory_bytes - ceil_div(std::max<Bytes>(weights, 0), shard) -
                            spec.memory.reserved_bytes;
  c.host_capacity_bytes = spec.memory.host_memory_bytes;
  c.device_bandwidth_bytes_per_s = spec.memory.memory_bandwidth_bytes_per_s;
  c.host_link_bandwidth_bytes_per_s = spec.memory.host_link_bandwidth_bytes_per_s;
  if (c.device_capacity_bytes < c.block_bytes) {
    fail(ErrorCode::kInsufficientMemory,
         fmt::format("instance {}: model '{}' leaves {} bytes per device for KV, less than one {}-byte block",
                     spec.id, meta.model_id, c.device_capacity_bytes, c.block_bytes));
  }
  return c;
}

struct Instance::Replica {
  std::int32_t index = 0;
  std::vector<std::vector<DeviceId>> stage_groups;  // tp group per stage
  std::vector<std::size_t> host_channels;           // per device of stage 0
  std::unique_ptr<mem::BlockPool> pool;
  std::unique_ptr<mem::RadixCache> own_cache;
  mem::RadixCache* cache = nullptr;
  std::deque<Request*> queue;
  std::vector<Request*> running;   // admission order
  std::vector<Request*> awaiting;  // prompt done, KV not handed off yet
  std::vector<Request*> incoming;  // KV reserved for a handoff
  std::vector<Micros> stage_free;
  std::int64_t in_flight_batches = 0;
  bool batch_pending = false;
};

struct Instance::Batch {
  struct Entry {
    Request* request = nullptr;
    std::int64_t tokens = 0;
    bool prefill = false;
  };
  std::vector<Entry> entries;
  std::int64_t prefill_tokens = 0;
  std::int64_t decode_tokens = 0;
  Micros load_latency = 0;
  Micros end = 0;
};

Instance::Instance(InstanceSpec spec, InstanceContext context) : spec_(std::move(spec)), ctx_(context) {
  const auto& s = spec_;
  if (s.tp_degree < 1 || s.pp_degree < 1 || s.dp_degree < 1) {
    fail(ErrorCode::kInvalidArgument, fmt::format("instance {}: parallel degrees must be >= 1", s.id));
  }
  const std::size_t per_replica = static_cast<std::size_t>(s.tp_degree) * s.pp_degree;
  if (s.devices.size() != per_replica * s.dp_degree) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("instance {}: {} devices for tp={} pp={} dp={}", s.id, s.devices.size(), s.tp_degree,
                     s.pp_degree, s.dp_degree));
  }
  if (s.scheduler.max_batch_tokens < 1 || s.scheduler.max_batch_seqs < 1 || s.scheduler.prefill_chunk < 1) {
    fail(ErrorCode::kInvalidArgument, fmt::format("instance {}: scheduler limits must be >= 1", s.id));
  }
  const perf::ModelMeta& meta = ctx_.table->meta();
  const mem::PoolConfig pc = pool_config(spec_, meta, ctx_.cache.block_size);

  std::vector<std::size_t> mem_channel;
  std::vector<std::size_t> host_channel;
  for (DeviceId d : s.devices) {
    mem_channel.push_back(ctx_.network->add_channel(fmt::format("mem:d{}", d), s.memory.memory_bandwidth_bytes_per_s));
    host_channel.push_back(
        ctx_.network->add_channel(fmt::format("host:d{}", d), s.memory.host_link_bandwidth_bytes_per_s));
  }

  for (std::int32_t r = 0; r < s.dp_degree; ++r) {
    auto rep = std::make_unique<Replica>();
    rep->index = r;
    const std::size_t base = r * per_replica;
    for (std::int32_t st = 0; st < s.pp_degree; ++st) {
      auto first = s.devices.begin() + base + st * s.tp_degree;
      rep->stage_groups.emplace_back(first, first + s.tp_degree);
    }
    for (std::int32_t t = 0; t < s.tp_degree; ++t) rep->host_channels.push_back(host_channel[base + t]);
    rep->pool = std::make_unique<mem::BlockPool>(s.id * 1000 + r, s.devices[base], pc);
    rep->pool->device_channel = mem_channel[base];
    rep->pool->host_channel = host_channel[base];
    if (ctx_.cache.enabled) {
      if (ctx_.cache.shared) {
        rep->cache = ctx_.shared_cache;
      } else {
        rep->own_cache = std::make_unique<mem::RadixCache>(ctx_.cache.block_size,
                                                           mem::make_eviction_policy(ctx_.cache.eviction_policy));
        rep->cache = rep->own_cache.get();
      }
    }
    rep->stage_free.assign(s.pp_degree, 0);
    replicas_.push_back(std::move(rep));
  }

  if (s.moe && meta.moe) {
    const MoeSpec& m = *s.moe;
    if (m.ep_degree < 1 || m.ep_degree > s.tp_degree || s.tp_degree % m.ep_degree != 0) {
      fail(ErrorCode::kInvalidArgument,
           fmt::format("instance {}: ep degree {} must divide tp degree {}", s.id, m.ep_degree, s.tp_degree));
    }
    moe::MoeRuntime::Options opt;
    opt.ep_degree = m.ep_degree;
    opt.offload = m.offload;
    const auto offloaded = static_cast<std::int32_t>(std::llround(m.offloaded_fraction * meta.moe->expert_count));
    for (std::int32_t layer = 0; layer < meta.layer_count; ++layer) {
      opt.placements.push_back(moe::random_offload(meta.moe->expert_count, m.ep_degree, offloaded, ctx_.seed,
                                                   (static_cast<std::uint64_t>(s.id) << 20) + layer));
    }
    auto router = moe::make_router(m.gate, meta.moe->expert_count, meta.moe->top_k, ctx_.seed,
                                   static_cast<std::uint64_t>(s.id));
    moe_ = std::make_unique<moe::MoeRuntime>(*ctx_.table, std::move(router), std::move(opt));
  }
}

Instance::~Instance() = default;

void Instance::enqueue(Request& request, Micros now, bool front) {
  if (spec_.role == Role::kDecode) {
    fail(ErrorCode::kRoleMismatch,
         fmt::format("decode instance {} received request {} before its prefill", spec_.id, request.id));
  }
  Replica& rep = *replicas_[next_replica_++ % replicas_.size()];
  request.instance = spec_.id;
  request.replica = rep.index;
  request.state = RequestState::kQueued;
  request.kv = mem::KvHandle{};
  request.kv.pool = rep.pool.get();
  if (spec_.role == Role::kPrefill) request.prefill_instance = spec_.id;
  if (front) {
    rep.queue.push_front(&request);
  } else {
    rep.queue.push_back(&request);
  }
  request_batch(rep, now);
}

std::int32_t Instance::next_transfer_replica() {
  return static_cast<std::int32_t>(next_replica_++ % replicas_.size());
}

bool Instance::reserve_incoming(Request& request, std::int32_t replica, std::int64_t tokens, Micros now) {
  Replica& rep = *replicas_.at(replica);
  mem::KvHandle h;
  h.pool = rep.pool.get();
  const std::int64_t need = mem::blocks_needed(h, tokens);
  if (!rep.pool->can_allocate(need)) {
    make_room(rep, need * rep.pool->block_bytes() - rep.pool->free_bytes(mem::Tier::kDevice), now);
    if (!rep.pool->can_allocate(need)) return false;
  }
  mem::allocate_kv(*rep.pool, h, tokens);
  request.dest_kv = std::move(h);
  request.decode_instance = spec_.id;
  request.decode_replica = replica;
  rep.incoming.push_back(&request);
  return true;
}

void Instance::admit_transferred(Request& request, Micros now) {
  Replica& rep = *replicas_.at(request.decode_replica);
  rep.incoming.erase(std::remove(rep.incoming.begin(), rep.incoming.end(), &request), rep.incoming.end());
  request.kv = std::move(request.dest_kv);
  request.dest_kv = mem::KvHandle{};
  request.instance = spec_.id;
  request.replica = rep.index;
  request.state = RequestState::kDecoding;
  request.admit_seq = next_admit_++;
  rep.running.push_back(&request);
  stats_.max_running = std::max<std::int64_t>(stats_.max_running, static_cast<std::int64_t>(rep.running.size()));
  request_batch(rep, now);
}

void Instance::release_transferred(Request& request, Micros now) {
  Replica& rep = *replicas_.at(request.replica);
  mem::release_kv(request.kv);
  rep.awaiting.erase(std::remove(rep.awaiting.begin(), rep.awaiting.end(), &request), rep.awaiting.end());
  if (ctx_.observer != nullptr) ctx_.observer->on_memory_released(*this, now);
  request_batch(rep, now);
}

std::int64_t Instance::outstanding_tokens() const {
  std::int64_t total = 0;
  for (const auto& rep : replicas_) {
    for (const Request* r : rep->queue) total += r->outstanding_tokens();
    for (const Request* r : rep->running) total += r->outstanding_tokens();
    for (const Request* r : rep->awaiting) total += r->outstanding_tokens();
    for (const Request* r : rep->incoming) total += r->output_len - r->generated;
  }
  return total;
}

std::int64_t Instance::peek_prefix(std::span<const mem::TokenId> tokens) const {
  std::int64_t best = 0;
  for (const auto& rep : replicas_) {
    if (rep->cache != nullptr) best = std::max(best, rep->cache->peek(tokens));
  }
  return best;
}

DeviceId Instance::transfer_device(std::int32_t replica) const {
  return replicas_.at(replica)->stage_groups.front().front();
}

mem::BlockPool& Instance::pool(std::int32_t replica) { return *replicas_.at(replica)->pool; }

mem::RadixCache* Instance::cache(std::int32_t replica) { return replicas_.at(replica)->cache; }

std::int64_t Instance::queued() const {
  std::int64_t n = 0;
  for (const auto& rep : replicas_) n += static_cast<std::int64_t>(rep->queue.size());
  return n;
}

std::int64_t Instance::running() const {
  std::int64_t n = 0;
  for (const auto& rep : replicas_) n += static_cast<std::int64_t>(rep->running.size());
  return n;
}

std::string Instance::describe() const {
  std::string out = fmt::format("instance {} ({})", spec_.id, role_name(spec_.role));
  for (const auto& rep : replicas_) {
    out += fmt::format("; replica {}: queued={} running={} awaiting={} incoming={} free_blocks={}/{}", rep->index,
                       rep->queue.size(), rep->running.size(), rep->awaiting.size(), rep->incoming.size(),
                       rep->pool->free_device_blocks(),
                       rep->pool->capacity(mem::Tier::kDevice) / rep->pool->block_bytes());
  }
  return out;
}

void Instance::request_batch(Replica& rep, Micros now) {
  if (rep.batch_pending || rep.stage_free.front() > now) return;
  rep.batch_pending = true;
  ctx_.engine->schedule(now, sim::EventKind::kBatchStart, sim::Priority::kBatchFormation,
                        [this, &rep](sim::Engine&) { on_batch_start(rep); },
                        fmt::format("inst={} rep={}", spec_.id, rep.index));
}

void Instance::deadlock(const Replica& rep, Micros now) const {
  std::string head;
  if (!rep.queue.empty()) {
    const Request* r = rep.queue.front();
    head = fmt::format(", queue head request {} needs {} blocks for {} tokens", r->id,
                       ceil_div(r->input_len + r->output_len - 1, rep.pool->block_size()),
                       r->input_len + r->output_len - 1);
  }
  fail(ErrorCode::kDeadlock, fmt::format("t={}: {}{}", now, describe(), head));
}

void Instance::on_batch_start(Replica& rep) {
  rep.batch_pending = false;
  const Micros now = ctx_.engine->now();
  if (rep.stage_free.front() > now) return;
  std::shared_ptr<Batch> batch = form_batch(rep, now);
  if (batch->entries.empty()) {
    if (rep.in_flight_batches == 0 && rep.awaiting.empty() && (!rep.queue.empty() || !rep.running.empty())) {
      deadlock(rep, now);
    }
    return;
  }

  perf::BatchComposition comp;
  for (const auto& e : batch->entries) {
    if (e.prefill) {
      comp.prefill.push_back({e.tokens, e.request->prefilled});
    } else {
      comp.decode_contexts.push_back(e.request->input_len + e.request->generated - 1);
    }
  }
  perf::ExecutionSpec exec;
  exec.model_id = spec_.model_id;
  exec.hw_id = spec_.hw_id;
  exec.tp_degree = spec_.tp_degree;
  exec.pp_degree = spec_.pp_degree;
  exec.tp_group = rep.stage_groups.front();
  exec.topology = &ctx_.network->topology();
  exec.lookup = ctx_.lookup;

  const Micros start = now + batch->load_latency;
  if (moe_) {
    moe::MoeExecution me;
    me.model_id = spec_.model_id;
    me.hw_id = spec_.hw_id;
    me.ep_devices.assign(exec.tp_group.begin(), exec.tp_group.begin() + moe_->options().ep_degree);
    me.host_channels.assign(rep.host_channels.begin(), rep.host_channels.begin() + moe_->options().ep_degree);
    me.topology = exec.topology;
    me.network = ctx_.network;
    me.lookup = ctx_.lookup;
    moe_->begin_iteration(comp.total_tokens(), comp.prefill_tokens() > 0, std::move(me), start, ctx_.engine);
  }
  const perf::IterationTiming timing = perf::iteration_timing(*ctx_.table, comp, exec, moe_.get(), start);
  stats_.interpolated_lookups += timing.interpolated_lookups;
  stats_.approximated_lookups += timing.approximated_lookups;

  // Stages are independent resources: a stage starts when both its input
  // and the stage itself are ready.
  std::vector<Micros> stage_start(spec_.pp_degree);
  Micros t = start;
  for (std::int32_t s = 0; s < spec_.pp_degree; ++s) {
    stage_start[s] = std::max(t, rep.stage_free[s]);
    t = stage_start[s] + timing.stage_latency[s];
    rep.stage_free[s] = t;
    stats_.busy_stage_us += timing.stage_latency[s];
  }
  batch->end = t;
  if (batch->load_latency > 0) rep.stage_free.front() = std::max(rep.stage_free.front(), start);

  ++stats_.batches;
  stats_.prefill_tokens += batch->prefill_tokens;
  stats_.decode_tokens += batch->decode_tokens;
  ++rep.in_flight_batches;

  if (ctx_.observer != nullptr && spec_.role == Role::kPrefill) {
    std::vector<Micros> layer_end;
    const auto stage_layers = perf::layers_per_stage(ctx_.table->meta().layer_count, spec_.pp_degree);
    Micros b2b = 0;  // back-to-back offset of the stage start
    std::size_t layer = 0;
    for (std::int32_t s = 0; s < spec_.pp_degree; ++s) {
      for (std::int32_t i = 0; i < stage_layers[s]; ++i, ++layer) {
        layer_end.push_back(stage_start[s] + (start + timing.layer_end[layer]) - (start + b2b));
      }
      b2b += timing.stage_latency[s];
    }
    for (const auto& e : batch->entries) {
      Request& r = *e.request;
      if (e.prefill && r.prefilled + e.tokens == r.prefill_target && r.generated + 1 < r.output_len) {
        ctx_.observer->on_final_chunk(*this, r, layer_end, now);
      }
    }
  }

  if (spec_.pp_degree > 1) {
    ctx_.engine->schedule(rep.stage_free.front(), sim::EventKind::kResourceFree,
                          [this, &rep](sim::Engine& e) { request_batch(rep, e.now()); },
                          fmt::format("inst={} rep={} stage=0", spec_.id, rep.index));
  }
  ctx_.engine->schedule(batch->end, sim::EventKind::kBatchComplete,
                        [this, &rep, batch](sim::Engine&) { on_batch_complete(rep, *batch); },
                        fmt::format("inst={} rep={} prefill={} decode={}", spec_.id, rep.index,
                                    batch->prefill_tokens, batch->decode_tokens));
}

std::shared_ptr<Instance::Batch> Instance::form_batch(Replica& rep, Micros now) {
  auto batch = std::make_shared<Batch>();
  const SchedulerConfig& cfg = spec_.scheduler;
  for (Request* r : rep.queue) {
    if (r->state == RequestState::kPreempted) r->state = RequestState::kQueued;
  }
  std::int64_t budget = cfg.max_batch_tokens;

  std::vector<Request*> decoders;
  std::vector<Request*> prefillers;
  for (Request* r : rep.running) {
    if (r->in_flight) continue;
    if (r->state == RequestState::kDecoding) decoders.push_back(r);
    if (r->state == RequestState::kPrefilling) prefillers.push_back(r);
  }
  auto seats = [&] { return static_cast<std::int64_t>(batch->entries.size()) < cfg.max_batch_seqs; };

  for (Request* r : decoders) {
    if (!seats() || budget < 1) break;
    if (r->state != RequestState::kDecoding) continue;  // preempted meanwhile
    if (!ensure_kv(rep, *r, 1, now)) continue;
    r->in_flight = true;
    batch->entries.push_back({r, 1, false});
    batch->decode_tokens += 1;
    budget -= 1;
  }
  // Decoders that all lost their KV to preemption do not hold prefills back.
  if (cfg.policy == SchedulerPolicy::kDecodePriority && batch->decode_tokens > 0) return batch;

  for (Request* r : prefillers) {
    if (!seats() || budget < 1) break;
    if (r->state != RequestState::kPrefilling) continue;
    const std::int64_t n = std::min({r->prefill_target - r->prefilled, cfg.prefill_chunk, budget});
    if (!ensure_kv(rep, *r, n, now)) continue;
    r->in_flight = true;
    batch->entries.push_back({r, n, true});
    batch->prefill_tokens += n;
    budget -= n;
  }

  while (!rep.queue.empty() && budget >= 1 && seats()) {
    if (!admit_from_queue(rep, *batch, budget, now)) break;
  }
  stats_.max_running = std::max<std::int64_t>(stats_.max_running, static_cast<std::int64_t>(rep.running.size()));
  return batch;
}

bool Instance::admit_from_queue(Replica& rep, Batch& batch, std::int64_t& budget, Micros now) {
  Request& r = *rep.queue.front();
  if (r.state == RequestState::kPreempted) return false;  // preempted in this formation
  mem::BlockPool& pool = *rep.pool;
  const std::int64_t b = pool.block_size();
  const std::int64_t target = r.input_len + r.generated;

  const std::int64_t peak_tokens = r.input_len + r.output_len - 1;
  if (ceil_div(peak_tokens, b) * pool.block_bytes() > pool.capacity(mem::Tier::kDevice)) {
    deadlock(rep, now);
  }

  mem::MatchResult match;
  std::int64_t matchable = 0;
  if (rep.cache != nullptr && !r.tokens.empty()) {
    const std::int64_t cap_blocks = std::min(r.input_len, target - 1) / b;
    matchable = cap_blocks * b;
    match = rep.cache->match(std::span<const mem::TokenId>(r.tokens).first(matchable), now);
  }
  const std::int64_t matched = match.matched_tokens;
  const std::int64_t n = std::min({target - matched, spec_.scheduler.prefill_chunk, budget});

  mem::KvHandle kv;
  kv.pool = &pool;
  kv.shared = match.blocks;
  kv.shared_tokens = matched;
  kv.tokens = matched;
  Bytes promote = 0;
  for (const auto& ref : match.blocks) {
    if (ref.pool == &pool && ref.get().tier == mem::Tier::kHost) promote += ref.get().bytes;
  }
  const Bytes need = mem::blocks_needed(kv, n) * pool.block_bytes() + promote;
  if (need > pool.free_bytes(mem::Tier::kDevice)) {
    make_room(rep, need - pool.free_bytes(mem::Tier::kDevice), now);
    if (need > pool.free_bytes(mem::Tier::kDevice)) {
      mem::release_kv(kv);
      return false;
    }
  }
  if (matched > 0) {
    mem::LoadResult load = mem::hit_load_events(pool, match.blocks, now, *ctx_.network, r.id);
    batch.load_latency = std::max(batch.load_latency, load.latency_us);
    ++stats_.hit_loads;
    stats_.hit_load_us += load.latency_us;
  }
  mem::allocate_kv(pool, kv, n);

  if (!r.matched_once) {
    r.matched_once = true;
    auto& rec = ctx_.tracker->at(r.id);
    rec.matched_tokens = matched;
    rec.matchable_tokens = matchable;
  }
  rep.queue.pop_front();
  r.kv = std::move(kv);
  r.state = RequestState::kPrefilling;
  r.prefill_target = target;
  r.prefilled = matched;
  r.admit_seq = next_admit_++;
  r.in_flight = true;
  rep.running.push_back(&r);
  batch.entries.push_back({&r, n, true});
  batch.prefill_tokens += n;
  budget -= n;
  return true;
}

bool Instance::make_room(Replica& rep, Bytes deficit, Micros now) {
  if (rep.cache == nullptr || deficit <= 0) return false;
  if (rep.cache->evictable_device_bytes(*rep.pool) < deficit) return false;
  mem::EvictResult result = rep.cache->evict(*rep.pool, deficit, now, ctx_.network);
  for (const auto& node : result.nodes) {
    ++stats_.evicted_nodes;
    if (node.spilled) ++stats_.spilled_nodes;
    stats_.evicted_bytes += node.bytes;
  }
  return true;
}

Request* Instance::pick_victim(Replica& rep) {
  for (RequestState wanted : {RequestState::kDecoding, RequestState::kPrefilling}) {
    for (auto it = rep.running.rbegin(); it != rep.running.rend(); ++it) {
      if (!(*it)->in_flight && (*it)->state == wanted) return *it;
    }
  }
  return nullptr;
}

bool Instance::ensure_kv(Replica& rep, Request& request, std::int64_t tokens, Micros now) {
  mem::BlockPool& pool = *rep.pool;
  while (true) {
    const std::int64_t need = mem::blocks_needed(request.kv, tokens);
    if (pool.can_allocate(need)) {
      mem::allocate_kv(pool, request.kv, tokens);
      return true;
    }
    const Bytes deficit = need * pool.block_bytes() - pool.free_bytes(mem::Tier::kDevice);
    if (make_room(rep, deficit, now)) continue;
    Request* victim = pick_victim(rep);
    if (victim == nullptr) return false;
    preempt(rep, *victim, now);
    if (victim == &request) return false;
  }
}

void Instance::preempt(Replica& rep, Request& victim, Micros now) {
  mem::release_kv(victim.kv);
  remove_running(rep, victim);
  victim.prefilled = 0;
  victim.prefill_target = 0;
  ++victim.preemptions;
  ++stats_.preemptions;
  ctx_.tracker->at(victim.id).preemptions = victim.preemptions;
  if (spec_.role == Role::kDecode) {
    victim.state = RequestState::kPreempted;
    victim.decode_instance = -1;
    victim.decode_replica = -1;
    victim.transfer_reserved = victim.transfer_done = victim.prefill_done = false;
    if (ctx_.observer == nullptr) fail(ErrorCode::kInvalidArgument, "decode preemption needs a cluster observer");
    ctx_.observer->on_decode_preempted(*this, victim, now);
  } else {
    // Marked so admission in the same formation does not pick it up again.
    victim.state = RequestState::kPreempted;
    victim.kv = mem::KvHandle{};
    victim.kv.pool = rep.pool.get();
    rep.queue.push_front(&victim);
  }
  if (ctx_.observer != nullptr) ctx_.observer->on_memory_released(*this, now);
}

void Instance::remove_running(Replica& rep, Request& request) {
  rep.running.erase(std::remove(rep.running.begin(), rep.running.end(), &request), rep.running.end());
}

void Instance::emit_token(Request& request, Micros now) {
  ++request.generated;
  ctx_.tracker->record_token(request.id, now);
}

void Instance::cache_prompt(Replica& rep, Request& request, Micros now) {
  if (rep.cache == nullptr || request.tokens.empty()) return;
  const std::int64_t b = rep.pool->block_size();
  const std::int64_t full = request.input_len / b;
  if (full == 0) return;
  std::vector<mem::BlockRef> refs;
  if (request.kv.shared_is_local()) refs = request.kv.shared;
  for (mem::BlockId id : request.kv.own) refs.push_back({rep.pool.get(), id});
  refs.resize(std::min<std::size_t>(refs.size(), full));
  rep.cache->insert(std::span<const mem::TokenId>(request.tokens).first(full * b), refs, now);
}

void Instance::finish(Replica& rep, Request& request, Micros now) {
  request.state = RequestState::kFinished;
  remove_running(rep, request);
  mem::release_kv(request.kv);
  if (ctx_.observer != nullptr) {
    ctx_.observer->on_finished(*this, request, now);
    ctx_.observer->on_memory_released(*this, now);
  }
}

void Instance::on_batch_complete(Replica& rep, Batch& batch) {
  const Micros now = ctx_.engine->now();
  --rep.in_flight_batches;
  for (const auto& e : batch.entries) {
    Request& r = *e.request;
    r.in_flight = false;
    if (e.prefill) {
      r.prefilled += e.tokens;
      if (r.prefilled < r.prefill_target) continue;
      emit_token(r, now);
      cache_prompt(rep, r, now);
      if (r.generated == r.output_len) {
        finish(rep, r, now);
      } else if (spec_.role == Role::kPrefill) {
        remove_running(rep, r);
        r.state = RequestState::kAwaitingKVTransfer;
        rep.awaiting.push_back(&r);
        if (ctx_.observer == nullptr) fail(ErrorCode::kInvalidArgument, "prefill instance needs a cluster observer");
        ctx_.observer->on_prefill_complete(*this, r, now);
      } else {
        r.state = RequestState::kDecoding;
      }
    } else {
      emit_token(r, now);
      if (r.generated == r.output_len) finish(rep, r, now);
    }
  }
  request_batch(rep, now);
}

}  // namespace servesim::serve
