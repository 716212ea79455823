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

#include "servesim/serve/cluster.h"

#include <algorithm>
#include <set>

#include <fmt/format.h>

namespace servesim::serve {

const char* transfer_policy_name(TransferPolicy policy) {
  return policy == TransferPolicy::kFullBlocking ? "full_blocking" : "layerwise";
}

TransferPolicy parse_transfer_policy(const std::string& text) {
  if (text == "full_blocking") return TransferPolicy::kFullBlocking;
  if (text == "layerwise") return TransferPolicy::kLayerwiseOverlap;
  fail(ErrorCode::kInvalidArgument, fmt::format("unknown kv transfer policy '{}'", text));
}

const char* decode_selection_name(DecodeSelection selection) {
  return selection == DecodeSelection::kAtPrefillComplete ? "prefill_complete" : "arrival";
}

DecodeSelection parse_decode_selection(const std::string& text) {
  if (text == "prefill_complete") return DecodeSelection::kAtPrefillComplete;
  if (text == "arrival") return DecodeSelection::kAtArrival;
  fail(ErrorCode::kInvalidArgument, fmt::format("unknown decode selection '{}'", text));
}

Cluster::Cluster(ClusterSpec spec, const std::map<std::string, perf::PerfTable>& tables)
    : spec_(std::move(spec)), tables_(tables), engine_(spec_.livelock_cap), network_(spec_.topology) {
  std::set<InstanceId> ids;
  std::set<DeviceId> used;
  bool unified = false;
  std::map<std::string, std::pair<int, int>> pd_roles;  // model -> (prefill, decode)
  for (const InstanceSpec& s : spec_.instances) {
    if (!ids.insert(s.id).second) {
      fail(ErrorCode::kCrossRefError, fmt::format("instance id {} is used twice", s.id));
    }
    if (tables_.find(s.model_id) == tables_.end()) {
      fail(ErrorCode::kCrossRefError, fmt::format("instance {}: no perf table for model '{}'", s.id, s.model_id));
    }
    for (DeviceId d : s.devices) {
      if (!network_.topology().has_node(d)) {
        fail(ErrorCode::kCrossRefError, fmt::format("instance {}: device {} is not in the topology", s.id, d));
      }
      if (!used.insert(d).second) {
        fail(ErrorCode::kCrossRefError, fmt::format("instance {}: device {} belongs to another instance", s.id, d));
      }
    }
    if (s.role == Role::kUnified) {
      unified = true;
    } else {
      auto& counts = pd_roles[s.model_id];
      (s.role == Role::kPrefill ? counts.first : counts.second)++;
    }
  }
  pd_mode_ = !pd_roles.empty();
  if (pd_mode_ && unified) {
    fail(ErrorCode::kCrossRefError, "unified instances cannot be mixed with prefill/decode instances");
  }
  for (const auto& [model, counts] : pd_roles) {
    if (counts.first == 0 || counts.second == 0) {
      fail(ErrorCode::kCrossRefError,
           fmt::format("model '{}' needs at least one prefill and one decode instance ({} and {} configured)", model,
                       counts.first, counts.second));
    }
  }
  for (const auto& [prefill, decode] : spec_.pd.pairing.fixed) {
    if (!ids.count(prefill) || !ids.count(decode)) {
      fail(ErrorCode::kCrossRefError, fmt::format("static pairing {} -> {} names an unknown instance", prefill, decode));
    }
  }

  if (spec_.cache.enabled && spec_.cache.shared) {
    shared_cache_ = std::make_unique<mem::RadixCache>(spec_.cache.block_size,
                                                      mem::make_eviction_policy(spec_.cache.eviction_policy));
  }
  for (const InstanceSpec& s : spec_.instances) {
    InstanceContext ctx;
    ctx.engine = &engine_;
    ctx.network = &network_;
    ctx.tracker = &tracker_;
    ctx.table = &tables_.at(s.model_id);
    ctx.lookup = spec_.lookup;
    ctx.cache = spec_.cache;
    ctx.shared_cache = shared_cache_.get();
    ctx.observer = this;
    ctx.seed = spec_.seed;
    instances_.push_back(std::make_unique<Instance>(s, ctx));
    by_id_[s.id] = instances_.back().get();
  }
}

Cluster::~Cluster() = default;

Instance& Cluster::instance(InstanceId id) {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) fail(ErrorCode::kInvalidArgument, fmt::format("unknown instance {}", id));
  return *it->second;
}

const Request& Cluster::request(RequestId id) const {
  auto it = by_request_.find(id);
  if (it == by_request_.end()) fail(ErrorCode::kUnknownRequest, fmt::format("unknown request {}", id));
  return *it->second;
}

void Cluster::submit(const std::vector<workload::WorkloadRecord>& records) {
  std::set<std::string> models;
  for (const auto& s : spec_.instances) models.insert(s.model_id);
  for (const auto& rec : records) {
    std::string model = rec.model_id;
    if (model.empty()) {
      if (models.size() != 1) {
        fail(ErrorCode::kCrossRefError,
             fmt::format("request {} has no model id and the cluster serves {} models", rec.request_id, models.size()));
      }
      model = *models.begin();
    } else if (!models.count(model)) {
      fail(ErrorCode::kCrossRefError,
           fmt::format("request {} names model '{}' which no instance serves", rec.request_id, model));
    }
    if (!rec.arrival_time_us) {
      fail(ErrorCode::kInvalidArgument, fmt::format("request {} has no arrival time", rec.request_id));
    }
    if (rec.input_len < 1 || rec.output_len < 1) {
      fail(ErrorCode::kInvalidArgument,
           fmt::format("request {}: input and output lengths must be >= 1", rec.request_id));
    }
    tracker_.add_request(rec.request_id, *rec.arrival_time_us, rec.input_len, rec.output_len);
    Request& r = requests_.emplace_back();
    r.id = rec.request_id;
    r.arrival = *rec.arrival_time_us;
    r.input_len = rec.input_len;
    r.output_len = rec.output_len;
    r.model_id = model;
    r.tokens = rec.input_token_ids;
    by_request_[r.id] = &r;
    engine_.schedule(r.arrival, sim::EventKind::kRequestArrival,
                     [this, &r](sim::Engine& e) { on_arrival(r, e.now()); }, fmt::format("req={}", r.id));
  }
}

sim::DrainResult Cluster::run(std::optional<Micros> deadline) {
  sim::DrainResult result = engine_.run_until(deadline);
  if (result.status == sim::DrainStatus::kDrained && tracker_.unfinished() > 0) {
    std::string detail;
    std::size_t listed = 0;
    for (const Request& r : requests_) {
      if (r.state == RequestState::kFinished) continue;
      if (listed++ < 5) {
        detail += fmt::format(" request {} {} ({}/{} tokens, instance {});", r.id, request_state_name(r.state),
                              r.generated, r.output_len, r.instance);
      }
    }
    for (const auto& inst : instances_) detail += " " + inst->describe() + ";";
    fail(ErrorCode::kDeadlock,
         fmt::format("t={}: {} requests unfinished after drain:{}", result.now, tracker_.unfinished(), detail));
  }
  return result;
}

std::vector<route::InstanceSnapshot> Cluster::snapshots(const Request* request) const {
  std::vector<route::InstanceSnapshot> out;
  out.reserve(instances_.size());
  for (const auto& inst : instances_) {
    route::InstanceSnapshot s;
    s.id = inst->id();
    s.role = inst->role();
    s.model_id = inst->spec().model_id;
    s.outstanding_tokens = inst->outstanding_tokens();
    if (request != nullptr && spec_.router == route::Policy::kPrefixAware && !request->tokens.empty() &&
        s.model_id == request->model_id) {
      s.prefix_match_tokens = inst->peek_prefix(request->tokens);
    }
    out.push_back(std::move(s));
  }
  return out;
}

void Cluster::on_arrival(Request& request, Micros now) {
  if (!pd_mode_) {
    const auto cluster = snapshots(&request);
    const InstanceId id = route::dispatch(request.model_id, Role::kUnified, cluster, spec_.router, router_state_);
    auto& rec = tracker_.at(request.id);
    rec.prefill_instance = rec.decode_instance = id;
    instance(id).enqueue(request, now);
    return;
  }
  route_to_prefill(request, now, false);
  if (spec_.pd.select_at == DecodeSelection::kAtArrival) request.decode_instance = choose_decode(request);
}

void Cluster::route_to_prefill(Request& request, Micros now, bool front) {
  const auto cluster = snapshots(&request);
  const InstanceId id = route::dispatch(request.model_id, Role::kPrefill, cluster, spec_.router, router_state_);
  tracker_.at(request.id).prefill_instance = id;
  instance(id).enqueue(request, now, front);
}

InstanceId Cluster::choose_decode(const Request& request) {
  if (spec_.pd.select_at == DecodeSelection::kAtArrival && request.decode_instance >= 0) {
    return request.decode_instance;
  }
  const auto cluster = snapshots(nullptr);
  return route::select_decode(request.model_id, request.prefill_instance, cluster, spec_.pd.pairing);
}

Bytes Cluster::layer_kv_bytes(const Request& request, std::int64_t tokens) const {
  return tokens * tables_.at(request.model_id).meta().kv_bytes_per_token_per_layer;
}

Bytes Cluster::kv_bytes(const Request& request, std::int64_t tokens) const {
  return layer_kv_bytes(request, tokens) * tables_.at(request.model_id).meta().layer_count;
}

void Cluster::on_prefill_complete(Instance&, Request& request, Micros now) {
  request.prefill_done = true;
  if (request.transfer_reserved) {
    if (request.transfer_done) complete_handoff(request, now);
    return;
  }
  try_start_transfer(request, choose_decode(request), now);
}

bool Cluster::try_start_transfer(Request& request, InstanceId decode, Micros now) {
  auto& pending = pending_transfers_[decode];
  if (!pending.empty() && pending.front() != &request) {
    request.decode_instance = decode;
    pending.push_back(&request);
    ++stats_.transfer_waits;
    return false;
  }
  Instance& d = instance(decode);
  const std::int32_t replica = d.next_transfer_replica();
  if (!d.reserve_incoming(request, replica, request.kv.tokens, now)) {
    request.decode_instance = decode;
    if (pending.empty() || pending.front() != &request) {
      pending.push_back(&request);
      ++stats_.transfer_waits;
    }
    return false;
  }
  if (!pending.empty() && pending.front() == &request) pending.pop_front();
  start_full_transfer(request, now);
  return true;
}

void Cluster::start_full_transfer(Request& request, Micros now) {
  Instance& p = instance(request.instance);
  Instance& d = instance(request.decode_instance);
  const Bytes bytes = kv_bytes(request, request.kv.tokens);
  ++stats_.kv_transfers;
  stats_.kv_transfer_bytes += bytes;
  if (bytes == 0) {
    complete_handoff(request, now);
    return;
  }
  const net::TransferResult t = network_.p2p_transfer(p.transfer_device(request.replica),
                                                      d.transfer_device(request.decode_replica), bytes, now,
                                                      static_cast<std::uint64_t>(request.id));
  engine_.schedule(t.start, sim::EventKind::kTransferStart, [](sim::Engine&) {},
                   fmt::format("req={} bytes={}", request.id, bytes));
  engine_.schedule(t.completion, sim::EventKind::kTransferComplete,
                   [this, &request](sim::Engine& e) { complete_handoff(request, e.now()); },
                   fmt::format("req={} src={} dst={}", request.id, p.id(), d.id()));
}

void Cluster::on_final_chunk(Instance& inst, Request& request, std::span<const Micros> layer_end, Micros now) {
  if (spec_.pd.transfer != TransferPolicy::kLayerwiseOverlap || request.transfer_reserved) return;
  const InstanceId decode = choose_decode(request);
  if (!pending_transfers_[decode].empty()) {
    ++stats_.layerwise_fallbacks;
    return;
  }
  Instance& d = instance(decode);
  const std::int32_t replica = d.next_transfer_replica();
  if (!d.reserve_incoming(request, replica, request.prefill_target, now)) {
    ++stats_.layerwise_fallbacks;
    return;
  }
  request.transfer_reserved = true;
  request.transfer_done = false;
  request.prefill_done = false;
  const Bytes per_layer = layer_kv_bytes(request, request.prefill_target);
  ++stats_.kv_transfers;
  stats_.kv_transfer_bytes += per_layer * static_cast<Bytes>(layer_end.size());
  Micros last = now;
  if (per_layer > 0) {
    const DeviceId src = inst.transfer_device(request.replica);
    const DeviceId dst = d.transfer_device(replica);
    for (Micros end : layer_end) {
      const net::TransferResult t =
          network_.p2p_transfer(src, dst, per_layer, end, static_cast<std::uint64_t>(request.id));
      last = std::max(last, t.completion);
    }
    engine_.schedule(layer_end.front(), sim::EventKind::kTransferStart, [](sim::Engine&) {},
                     fmt::format("req={} layers={} bytes_per_layer={}", request.id, layer_end.size(), per_layer));
  }
  engine_.schedule(last, sim::EventKind::kTransferComplete,
                   [this, &request](sim::Engine& e) {
                     request.transfer_done = true;
                     if (request.prefill_done) complete_handoff(request, e.now());
                   },
                   fmt::format("req={} src={} dst={}", request.id, inst.id(), d.id()));
}

void Cluster::complete_handoff(Request& request, Micros now) {
  Instance& p = instance(request.instance);
  Instance& d = instance(request.decode_instance);
  tracker_.at(request.id).decode_instance = d.id();
  p.release_transferred(request, now);
  d.admit_transferred(request, now);
}

void Cluster::on_finished(Instance&, Request&, Micros) {}

void Cluster::on_memory_released(Instance& inst, Micros now) {
  if (inst.role() != Role::kDecode) return;
  auto it = pending_transfers_.find(inst.id());
  if (it == pending_transfers_.end() || it->second.empty()) return;
  // Deferred so that a batch being formed on `inst` finishes first.
  const InstanceId id = inst.id();
  engine_.schedule(now, sim::EventKind::kResourceFree, sim::Priority::kResource,
                   [this, id](sim::Engine& e) { retry_pending(id, e.now()); }, fmt::format("inst={} retry", id));
}

void Cluster::retry_pending(InstanceId decode, Micros now) {
  auto& pending = pending_transfers_[decode];
  while (!pending.empty()) {
    Request& r = *pending.front();
    if (!try_start_transfer(r, decode, now)) break;
  }
}

void Cluster::on_decode_preempted(Instance&, Request& request, Micros now) {
  ++stats_.decode_reprefills;
  route_to_prefill(request, now, true);
}

}  // namespace servesim::serve
