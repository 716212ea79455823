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

#include "servesim/moe/moe.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <fmt/format.h>

#include "servesim/sim/engine.h"

namespace servesim::moe {

const char* gate_kind_name(GateKind kind) {
  switch (kind) {
    case GateKind::kUniform: return "uniform";
    case GateKind::kZipf: return "zipf";
    case GateKind::kTraceReplay: return "trace";
  }
  return "?";
}

GateKind parse_gate_kind(const std::string& text) {
  if (text == "uniform") return GateKind::kUniform;
  if (text == "zipf") return GateKind::kZipf;
  if (text == "trace") return GateKind::kTraceReplay;
  fail(ErrorCode::kInvalidArgument, fmt::format("unknown gate policy '{}'", text));
}

const char* offload_policy_name(OffloadPolicy policy) {
  switch (policy) {
    case OffloadPolicy::kNone: return "none";
    case OffloadPolicy::kOnDemand: return "on_demand";
    case OffloadPolicy::kPrefetch: return "prefetch";
  }
  return "?";
}

OffloadPolicy parse_offload_policy(const std::string& text) {
  if (text == "none") return OffloadPolicy::kNone;
  if (text == "on_demand") return OffloadPolicy::kOnDemand;
  if (text == "prefetch") return OffloadPolicy::kPrefetch;
  fail(ErrorCode::kInvalidArgument, fmt::format("unknown offload policy '{}'", text));
}

RoutingTrace RoutingTrace::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, fmt::format("cannot open routing trace '{}'", path.string()));
  RoutingTrace trace;
  std::string line;
  std::int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::int64_t> fields;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
      try {
        std::size_t used = 0;
        fields.push_back(std::stoll(cell, &used));
        if (used != cell.size()) throw std::invalid_argument(cell);
      } catch (const std::exception&) {
        fail(ErrorCode::kParseError, fmt::format("{}:{}: bad integer '{}'", path.string(), line_no, cell));
      }
    }
    if (fields.size() < 3) {
      fail(ErrorCode::kParseError, fmt::format("{}:{}: expected layer,token_index,expert_ids...",
                                               path.string(), line_no));
    }
    std::vector<ExpertId> experts(fields.begin() + 2, fields.end());
    auto key = std::make_pair(static_cast<std::int32_t>(fields[0]), fields[1]);
    if (trace.entries_.count(key) != 0) {
      fail(ErrorCode::kDuplicateKey, fmt::format("{}:{}: layer {} token {} listed twice", path.string(),
                                                 line_no, key.first, key.second));
    }
    trace.entries_.emplace(key, std::move(experts));
  }
  return trace;
}

void RoutingTrace::add(std::int32_t layer, std::int64_t token_index, std::vector<ExpertId> experts) {
  entries_[{layer, token_index}] = std::move(experts);
}

const std::vector<ExpertId>* RoutingTrace::find(std::int32_t layer, std::int64_t token_index) const {
  auto it = entries_.find({layer, token_index});
  return it == entries_.end() ? nullptr : &it->second;
}

namespace {

class UniformRouter : public ExpertRouter {
 public:
  UniformRouter(std::int32_t experts, std::int32_t k, std::uint64_t seed, std::uint64_t stream)
      : experts_(experts), k_(k), seed_(seed), stream_(stream) {}

  std::int32_t expert_count() const override { return experts_; }
  std::int32_t top_k() const override { return k_; }

  std::vector<ExpertId> route(std::int32_t layer, std::int64_t token_index) const override {
    CounterRng rng(seed_, CounterRng::mix(stream_) ^ static_cast<std::uint64_t>(layer));
    std::vector<ExpertId> pool(experts_);
    std::iota(pool.begin(), pool.end(), 0);
    // Partial Fisher-Yates: the first k slots are the choice.
    for (std::int32_t j = 0; j < k_; ++j) {
      const auto counter = static_cast<std::uint64_t>(token_index) * k_ + j;
      const auto span = static_cast<std::uint64_t>(experts_ - j);
      const auto pick = j + static_cast<std::int32_t>(rng.uniform(counter) * span);
      std::swap(pool[j], pool[pick]);
    }
    pool.resize(k_);
    return pool;
  }

 private:
  std::int32_t experts_;
  std::int32_t k_;
  std::uint64_t seed_;
  std::uint64_t stream_;
};

class ZipfRouter : public ExpertRouter {
 public:
  ZipfRouter(std::int32_t experts, std::int32_t k, double s, std::uint64_t seed, std::uint64_t stream)
      : experts_(experts), k_(k), seed_(seed), stream_(stream) {
    if (s < 0) fail(ErrorCode::kInvalidArgument, "zipf exponent must be >= 0");
    for (std::int32_t r = 0; r < experts_; ++r) weights_.push_back(1.0 / std::pow(r + 1.0, s));
  }

  std::int32_t expert_count() const override { return experts_; }
  std::int32_t top_k() const override { return k_; }

  std::vector<ExpertId> route(std::int32_t layer, std::int64_t token_index) const override {
    const std::vector<ExpertId>& by_rank = permutation(layer);
    CounterRng rng(seed_, CounterRng::mix(stream_ + 1) ^ static_cast<std::uint64_t>(layer));
    std::vector<bool> taken(experts_, false);
    double remaining = std::accumulate(weights_.begin(), weights_.end(), 0.0);
    std::vector<ExpertId> out;
    for (std::int32_t j = 0; j < k_; ++j) {
      const double target = rng.uniform(static_cast<std::uint64_t>(token_index) * k_ + j) * remaining;
      double acc = 0;
      std::int32_t chosen = -1;
      for (std::int32_t r = 0; r < experts_; ++r) {
        if (taken[r]) continue;
        chosen = r;
        acc += weights_[r];
        if (target < acc) break;
      }
      taken[chosen] = true;
      remaining -= weights_[chosen];
      out.push_back(by_rank[chosen]);
    }
    return out;
  }

 private:
  const std::vector<ExpertId>& permutation(std::int32_t layer) const {
    auto it = permutations_.find(layer);
    if (it != permutations_.end()) return it->second;
    CounterRng rng(seed_, CounterRng::mix(stream_ + 2) ^ static_cast<std::uint64_t>(layer));
    std::vector<ExpertId> perm(experts_);
    std::iota(perm.begin(), perm.end(), 0);
    for (std::int32_t i = experts_ - 1; i > 0; --i) {
      const auto j = static_cast<std::int32_t>(rng.uniform(static_cast<std::uint64_t>(i)) * (i + 1));
      std::swap(perm[i], perm[j]);
    }
    return permutations_.emplace(layer, std::move(perm)).first->second;
  }

  std::int32_t experts_;
  std::int32_t k_;
  std::uint64_t seed_;
  std::uint64_t stream_;
  std::vector<double> weights_;
  mutable std::map<std::int32_t, std::vector<ExpertId>> permutations_;
};

class TraceRouter : public ExpertRouter {
 public:
  TraceRouter(std::shared_ptr<const RoutingTrace> trace, std::int32_t experts, std::int32_t k)
      : trace_(std::move(trace)), experts_(experts), k_(k) {}

  std::int32_t expert_count() const override { return experts_; }
  std::int32_t top_k() const override { return k_; }

  std::vector<ExpertId> route(std::int32_t layer, std::int64_t token_index) const override {
    const auto* entry = trace_->find(layer, token_index);
    if (entry == nullptr) {
      fail(ErrorCode::kTraceExhausted,
           fmt::format("routing trace has no entry for layer {} token {}", layer, token_index));
    }
    std::vector<ExpertId> sorted = *entry;
    std::sort(sorted.begin(), sorted.end());
    if (static_cast<std::int32_t>(entry->size()) != k_ ||
        std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end() || sorted.front() < 0 ||
        sorted.back() >= experts_) {
      fail(ErrorCode::kParseError, fmt::format("routing trace entry for layer {} token {} is not {} "
                                               "distinct experts below {}",
                                               layer, token_index, k_, experts_));
    }
    return *entry;
  }

 private:
  std::shared_ptr<const RoutingTrace> trace_;
  std::int32_t experts_;
  std::int32_t k_;
};

void check_shape(std::int32_t experts, std::int32_t k) {
  if (k < 1 || experts < k) {
    fail(ErrorCode::kInvalidArgument, fmt::format("need expert_count >= top_k >= 1, got {} and {}", experts, k));
  }
}

}  // namespace

std::unique_ptr<ExpertRouter> make_router(const GateConfig& config, std::int32_t expert_count,
                                          std::int32_t top_k, std::uint64_t seed, std::uint64_t stream) {
  check_shape(expert_count, top_k);
  switch (config.kind) {
    case GateKind::kUniform:
      return std::make_unique<UniformRouter>(expert_count, top_k, seed, stream);
    case GateKind::kZipf:
      return std::make_unique<ZipfRouter>(expert_count, top_k, config.zipf_s, seed, stream);
    case GateKind::kTraceReplay:
      return make_trace_router(std::make_shared<RoutingTrace>(RoutingTrace::load(config.trace_path)),
                               expert_count, top_k);
  }
  fail(ErrorCode::kInvalidArgument, "unknown gate policy");
}

std::unique_ptr<ExpertRouter> make_trace_router(std::shared_ptr<const RoutingTrace> trace,
                                                std::int32_t expert_count, std::int32_t top_k) {
  check_shape(expert_count, top_k);
  return std::make_unique<TraceRouter>(std::move(trace), expert_count, top_k);
}

ExpertPlacement ExpertPlacement::contiguous(std::int32_t expert_count, std::int32_t ep_degree) {
  if (ep_degree < 1 || ep_degree > expert_count) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("ep degree {} invalid for {} experts", ep_degree, expert_count));
  }
  return ExpertPlacement{expert_count, ep_degree, std::vector<bool>(expert_count, false)};
}

std::int32_t ExpertPlacement::rank_of(ExpertId expert) const {
  const std::int32_t per_rank = static_cast<std::int32_t>(ceil_div(expert_count, ep_degree));
  return expert / per_rank;
}

std::int32_t ExpertPlacement::offloaded_count() const {
  return static_cast<std::int32_t>(std::count(offloaded.begin(), offloaded.end(), true));
}

ExpertPlacement random_offload(std::int32_t expert_count, std::int32_t ep_degree, std::int32_t count,
                               std::uint64_t seed, std::uint64_t stream) {
  ExpertPlacement placement = ExpertPlacement::contiguous(expert_count, ep_degree);
  if (count < 0 || count > expert_count) {
    fail(ErrorCode::kInvalidArgument, fmt::format("cannot offload {} of {} experts", count, expert_count));
  }
  CounterRng rng(seed, stream);
  std::vector<ExpertId> perm(expert_count);
  std::iota(perm.begin(), perm.end(), 0);
  for (std::int32_t i = expert_count - 1; i > 0; --i) {
    const auto j = static_cast<std::int32_t>(rng.uniform(static_cast<std::uint64_t>(i)) * (i + 1));
    std::swap(perm[i], perm[j]);
  }
  for (std::int32_t i = 0; i < count; ++i) placement.offloaded[perm[i]] = true;
  return placement;
}

ExpertAssignment route_tokens(const ExpertRouter& router, std::int32_t layer, std::int64_t first_token,
                              std::int64_t tokens, const ExpertPlacement& placement,
                              Bytes bytes_per_token) {
  const std::int32_t ep = placement.ep_degree;
  ExpertAssignment a;
  a.layer = layer;
  a.counts.assign(router.expert_count(), 0);
  a.send.assign(ep, std::vector<Bytes>(ep, 0));
  a.experts.reserve(tokens);
  for (std::int64_t i = 0; i < tokens; ++i) {
    auto chosen = router.route(layer, first_token + i);
    const auto origin = static_cast<std::int32_t>(i % ep);
    for (ExpertId e : chosen) {
      ++a.counts[e];
      a.send[origin][placement.rank_of(e)] += bytes_per_token;
    }
    a.experts.push_back(std::move(chosen));
  }
  a.max_tokens_per_rank = ceil_div(tokens, ep);
  return a;
}

FetchResult offload_fetch(net::Network& network, std::size_t host_channel, std::int64_t expert_count,
                          Bytes expert_bytes, OffloadPolicy policy, Micros prefetch_issue,
                          Micros compute_ready, std::uint64_t owner) {
  FetchResult result;
  if (expert_count <= 0 || policy == OffloadPolicy::kNone) {
    result.completion = compute_ready;
    return result;
  }
  const Micros issue =
      policy == OffloadPolicy::kPrefetch ? std::min(prefetch_issue, compute_ready) : compute_ready;
  result.bytes = expert_count * expert_bytes;
  result.fetches = expert_count;
  result.completion = network.channel_transfer(host_channel, result.bytes, issue, owner).completion;
  result.added_us = std::max<Micros>(0, result.completion - compute_ready);
  return result;
}

MoeLayerTiming moe_layer_time(const ExpertAssignment& assignment, const ExpertPlacement& placement,
                              const perf::PerfTable& table, const MoeExecution& exec,
                              Micros dense_end, Micros prev_layer_start) {
  const perf::ModelMeta& meta = table.meta();
  const std::int32_t ep = placement.ep_degree;
  MoeLayerTiming t;
  if (ep > 1) {
    if (exec.topology == nullptr || static_cast<std::int32_t>(exec.ep_devices.size()) != ep) {
      fail(ErrorCode::kInvalidArgument, "expert parallelism needs a topology and one device per rank");
    }
    const Bytes per_node = assignment.max_tokens_per_rank * meta.hidden_size * meta.dtype_bytes;
    t.dispatch_us = net::collective_time(*exec.topology, net::CollectiveKind::kAllToAll, exec.ep_devices,
                                         per_node);
    t.combine_us = t.dispatch_us;
  }
  const Micros compute_ready = dense_end + t.dispatch_us;
  t.rank_compute.assign(ep, 0);
  std::vector<std::int64_t> offloaded_used(ep, 0);
  for (ExpertId e = 0; e < static_cast<ExpertId>(assignment.counts.size()); ++e) {
    const std::int64_t n = assignment.counts[e];
    if (n == 0) continue;
    const std::int32_t rank = placement.rank_of(e);
    perf::PerfKey key{exec.model_id, exec.hw_id, perf::op(perf::OpKind::Tag::kExpertFFN), exec.phase, n, 0, 1};
    t.rank_compute[rank] += table.lookup(key, exec.lookup).latency_us;
    if (placement.is_offloaded(e)) ++offloaded_used[rank];
  }
  Micros slowest = 0;
  for (std::int32_t r = 0; r < ep; ++r) {
    Micros stall = 0;
    if (offloaded_used[r] > 0 && exec.offload != OffloadPolicy::kNone) {
      if (exec.network == nullptr || exec.host_channels.size() != static_cast<std::size_t>(ep)) {
        fail(ErrorCode::kInvalidArgument, "expert offload needs a network and one host link per rank");
      }
      const Bytes bytes = meta.moe ? meta.moe->expert_weight_bytes : 0;
      FetchResult f = offload_fetch(*exec.network, exec.host_channels[r], offloaded_used[r], bytes,
                                    exec.offload, prev_layer_start, compute_ready);
      stall = f.added_us;
      t.fetches += f.fetches;
      t.fetch_bytes += f.bytes;
      t.fetch_added_us = std::max(t.fetch_added_us, stall);
    }
    slowest = std::max(slowest, stall + t.rank_compute[r]);
  }
  t.compute_us = slowest;
  return t;
}

MoeRuntime::MoeRuntime(const perf::PerfTable& table, std::unique_ptr<ExpertRouter> router, Options options)
    : table_(table), router_(std::move(router)), options_(std::move(options)) {
  const auto& meta = table_.meta();
  if (!meta.moe) fail(ErrorCode::kInvalidArgument, fmt::format("model '{}' has no MoE metadata", meta.model_id));
  if (router_->expert_count() != meta.moe->expert_count || router_->top_k() != meta.moe->top_k) {
    fail(ErrorCode::kInvalidArgument, "expert router shape differs from model metadata");
  }
  if (options_.placements.empty()) {
    options_.placements.assign(meta.layer_count,
                               ExpertPlacement::contiguous(meta.moe->expert_count, options_.ep_degree));
  }
  if (static_cast<std::int32_t>(options_.placements.size()) != meta.layer_count) {
    fail(ErrorCode::kInvalidArgument, "one expert placement per layer is required");
  }
  next_token_.assign(meta.layer_count, 0);
  stats_.expert_load.assign(meta.moe->expert_count, 0);
}

void MoeRuntime::begin_iteration(std::int64_t tokens, bool has_prefill, MoeExecution exec, Micros start,
                                 sim::Engine* engine) {
  tokens_ = tokens;
  exec_ = std::move(exec);
  exec_.phase = has_prefill ? perf::Phase::kPrefill : perf::Phase::kDecode;
  exec_.offload = options_.offload;
  iteration_start_ = start;
  prev_layer_start_ = start;
  engine_ = engine;
  ++stats_.iterations;
}

Micros MoeRuntime::after_dense(std::int32_t layer, Micros layer_start, Micros dense_end) {
  const Micros prefetch_issue = layer == 0 ? iteration_start_ : prev_layer_start_;
  prev_layer_start_ = layer_start;
  const auto& meta = table_.meta();
  const ExpertPlacement& placement = options_.placements.at(layer);
  ExpertAssignment a = route_tokens(*router_, layer, next_token_[layer], tokens_, placement,
                                    meta.hidden_size * meta.dtype_bytes);
  next_token_[layer] += tokens_;
  MoeLayerTiming t = moe_layer_time(a, placement, table_, exec_, dense_end, prefetch_issue);

  ++stats_.moe_layers;
  stats_.routed_tokens += tokens_;
  for (std::size_t e = 0; e < a.counts.size(); ++e) {
    stats_.expert_tokens += a.counts[e];
    stats_.expert_load[e] += a.counts[e];
  }
  stats_.fetches += t.fetches;
  stats_.fetch_bytes += t.fetch_bytes;
  stats_.fetch_added_us += t.fetch_added_us;
  if (placement.ep_degree > 1) {
    stats_.all_to_all_events += 2;
    if (engine_ != nullptr) {
      const Micros combine_at = dense_end + t.dispatch_us + t.compute_us;
      engine_->schedule(dense_end, sim::EventKind::kCustom, [](sim::Engine&) {},
                        fmt::format("all_to_all dispatch layer={}", layer));
      engine_->schedule(combine_at, sim::EventKind::kCustom, [](sim::Engine&) {},
                        fmt::format("all_to_all combine layer={}", layer));
    }
  }
  if (options_.record_assignments) assignments_.push_back(std::move(a));
  return t.total();
}

}  // namespace servesim::moe
