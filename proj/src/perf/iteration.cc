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

#include "servesim/perf/iteration.h"

#include <algorithm>
#include <numeric>
#include <set>

#include <fmt/format.h>

namespace servesim::perf {

std::int64_t BatchComposition::prefill_tokens() const {
  std::int64_t total = 0;
  for (const auto& p : prefill) total += p.tokens;
  return total;
}

Micros IterationTiming::total() const {
  return std::accumulate(stage_latency.begin(), stage_latency.end(), Micros{0});
}

std::vector<std::int32_t> layers_per_stage(std::int32_t layer_count, std::int32_t pp_degree) {
  if (pp_degree < 1 || pp_degree > layer_count) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("pp_degree {} invalid for {} layers", pp_degree, layer_count));
  }
  std::vector<std::int32_t> out(pp_degree, layer_count / pp_degree);
  for (std::int32_t s = 0; s < layer_count % pp_degree; ++s) ++out[s];
  return out;
}

namespace {

struct Pricer {
  const PerfTable& table;
  const ExecutionSpec& spec;
  IterationTiming& timing;

  Micros price(const OpKind& op, Phase phase, std::int64_t batch, std::int64_t context) {
    PerfKey key{spec.model_id, spec.hw_id, op, phase, batch, context, spec.tp_degree};
    LookupResult r = table.lookup(key, spec.lookup);
    if (!r.exact) ++timing.interpolated_lookups;
    if (r.tp_approximated) ++timing.approximated_lookups;
    return r.latency_us;
  }

  std::set<OpKind> kinds(Phase phase) {
    // Kinds are collected over every tp slice so a missing degree surfaces as
    // NoDataForOperator instead of silently pricing nothing.
    auto ops = table.op_kinds(spec.hw_id, phase);
    return {ops.begin(), ops.end()};
  }

  Micros layer_cost(Phase phase, std::int64_t batch, std::int64_t context) {
    Micros total = 0;
    for (const auto& k : kinds(phase)) {
      if (k.per_layer()) total += price(k, phase, batch, context);
    }
    return total;
  }

  Micros tagged_cost(OpKind::Tag tag, Phase phase, std::int64_t batch, std::int64_t context) {
    Micros total = 0;
    for (const auto& k : kinds(phase)) {
      if (k.tag == tag) total += price(k, phase, batch, context);
    }
    return total;
  }
};

}  // namespace

IterationTiming iteration_timing(const PerfTable& table, const BatchComposition& composition,
                                 const ExecutionSpec& spec, LayerHook* hook, Micros start) {
  if (composition.empty()) fail(ErrorCode::kInvalidArgument, "empty batch composition");
  const ModelMeta& meta = table.meta();
  IterationTiming timing;
  Pricer pricer{table, spec, timing};

  std::int64_t prefill_ctx = 0;
  for (const auto& p : composition.prefill) prefill_ctx = std::max(prefill_ctx, p.context);
  std::int64_t decode_ctx = 0;
  for (auto c : composition.decode_contexts) decode_ctx = std::max(decode_ctx, c);

  const std::int64_t prefill_tokens = composition.prefill_tokens();
  const std::int64_t decode_seqs = composition.decode_seqs();

  // Every layer of one model sees the same shapes, so one layer is priced once.
  Micros dense_layer = 0;
  Micros embedding = 0;
  Micros lm_head = 0;
  bool any_op = false;
  auto add_phase = [&](Phase phase, std::int64_t batch, std::int64_t ctx) {
    any_op = any_op || !pricer.kinds(phase).empty();
    dense_layer += pricer.layer_cost(phase, batch, ctx);
    embedding += pricer.tagged_cost(OpKind::Tag::kEmbedding, phase, batch, ctx);
    lm_head += pricer.tagged_cost(OpKind::Tag::kLMHead, phase, batch, ctx);
  };
  if (prefill_tokens > 0) add_phase(Phase::kPrefill, prefill_tokens, prefill_ctx);
  if (decode_seqs > 0) add_phase(Phase::kDecode, decode_seqs, decode_ctx);
  if (!any_op) {
    fail(ErrorCode::kNoDataForOperator,
         fmt::format("no operators for {}/{} tp={}", spec.model_id, spec.hw_id, spec.tp_degree));
  }

  Micros all_reduce = 0;
  if (spec.tp_degree > 1) {
    if (spec.topology == nullptr) {
      fail(ErrorCode::kInvalidArgument, "tensor parallelism needs a topology for the all-reduce");
    }
    const Bytes bytes = composition.total_tokens() * meta.hidden_size * meta.dtype_bytes;
    all_reduce = net::collective_time(*spec.topology, net::CollectiveKind::kAllReduce,
                                      spec.tp_group, bytes);
  }
  timing.dense_layer_us = dense_layer;
  timing.all_reduce_us = all_reduce;

  const auto stage_layers = layers_per_stage(meta.layer_count, spec.pp_degree);
  std::int32_t layer = 0;
  Micros offset = 0;
  for (std::size_t s = 0; s < stage_layers.size(); ++s) {
    Micros stage = 0;
    if (s == 0) stage += embedding;
    for (std::int32_t i = 0; i < stage_layers[s]; ++i, ++layer) {
      const Micros layer_start = start + offset + stage;
      Micros cost = dense_layer + all_reduce;
      if (hook != nullptr) cost += hook->after_dense(layer, layer_start, layer_start + cost);
      stage += cost;
      timing.layer_end.push_back(offset + stage);
    }
    if (s + 1 == stage_layers.size()) stage += lm_head;
    timing.stage_latency.push_back(stage);
    offset += stage;
  }
  return timing;
}

std::vector<Micros> iteration_latency(const PerfTable& table, const BatchComposition& composition,
                                      const ExecutionSpec& spec) {
  return iteration_timing(table, composition, spec).stage_latency;
}

}  // namespace servesim::perf
