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
#include <string>
#include <vector>

#include "servesim/common.h"
#include "servesim/net/network.h"
#include "servesim/perf/perf_table.h"

namespace servesim::perf {

struct PrefillPiece {
  std::int64_t tokens = 0;   // tokens computed this iteration
  std::int64_t context = 0;  // KV tokens already present before the piece
};

// The work of one iteration. Prefill pieces are priced together by total
// token count; decode sequences by sequence count.
struct BatchComposition {
  std::vector<PrefillPiece> prefill;
  std::vector<std::int64_t> decode_contexts;

  bool empty() const { return prefill.empty() && decode_contexts.empty(); }
  std::int64_t prefill_tokens() const;
  std::int64_t decode_seqs() const { return static_cast<std::int64_t>(decode_contexts.size()); }
  std::int64_t total_tokens() const { return prefill_tokens() + decode_seqs(); }
};

// What iteration pricing needs to know about the executing instance.
struct ExecutionSpec {
  std::string model_id;
  std::string hw_id;
  std::int32_t tp_degree = 1;
  std::int32_t pp_degree = 1;
  // Devices of one tensor-parallel group; used for the per-layer all-reduce.
  std::vector<DeviceId> tp_group;
  const net::Topology* topology = nullptr;
  LookupOptions lookup;
};

// Extra per-layer work inserted after the layer's dense operators (MoE
// expert layers). Times are absolute simulated microseconds.
class LayerHook {
 public:
  virtual ~LayerHook() = default;
  virtual Micros after_dense(std::int32_t layer, Micros layer_start, Micros dense_end) = 0;
};

struct IterationTiming {
  std::vector<Micros> stage_latency;
  // Completion offset of each layer from the iteration start, assuming the
  // stages run back to back.
  std::vector<Micros> layer_end;
  Micros dense_layer_us = 0;
  Micros all_reduce_us = 0;
  std::int64_t interpolated_lookups = 0;
  std::int64_t approximated_lookups = 0;

  Micros total() const;
};

// Layers owned by each pipeline stage; the first (L mod pp) stages take one
// extra layer.
std::vector<std::int32_t> layers_per_stage(std::int32_t layer_count, std::int32_t pp_degree);

std::vector<Micros> iteration_latency(const PerfTable& table, const BatchComposition& composition,
                                      const ExecutionSpec& spec);

IterationTiming iteration_timing(const PerfTable& table, const BatchComposition& composition,
                                 const ExecutionSpec& spec, LayerHook* hook = nullptr,
                                 Micros start = 0);

}  // namespace servesim::perf
