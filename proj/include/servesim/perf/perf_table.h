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
#include <optional>
#include <string>
#include <tuple>
#include <vector>

#include "servesim/common.h"

namespace servesim::perf {

enum class Phase { kPrefill, kDecode };

const char* phase_name(Phase phase);
Phase parse_phase(const std::string& text);

// Operator kind. Unknown names are kept verbatim as kOther.
struct OpKind {
  enum class Tag { kAttention, kFFN, kExpertFFN, kNorm, kEmbedding, kLMHead, kOther };

  Tag tag = Tag::kOther;
  std::string other;

  static OpKind parse(const std::string& text);
  std::string name() const;

  // Operators that run once per transformer layer for a dense model.
  bool per_layer() const {
    return tag != Tag::kEmbedding && tag != Tag::kLMHead && tag != Tag::kExpertFFN;
  }

  auto operator<=>(const OpKind&) const = default;
};

inline OpKind op(OpKind::Tag tag) { return OpKind{tag, {}}; }

struct PerfKey {
  std::string model_id;
  std::string hw_id;
  OpKind op_kind;
  Phase phase = Phase::kDecode;
  std::int64_t batch = 1;    // sequences for decode, total tokens for prefill
  std::int64_t context = 0;  // KV length per sequence
  std::int32_t tp_degree = 1;

  auto operator<=>(const PerfKey&) const = default;
};

struct MoeMeta {
  std::int32_t expert_count = 0;
  std::int32_t top_k = 0;
  Bytes expert_weight_bytes = 0;
};

struct ModelMeta {
  std::string model_id;
  std::int32_t layer_count = 1;
  std::int64_t hidden_size = 0;
  std::int32_t dtype_bytes = 2;
  Bytes kv_bytes_per_token_per_layer = 0;
  Bytes weight_bytes = 0;
  std::optional<MoeMeta> moe;
};

struct LookupOptions {
  // Scale a neighbouring tp slice when the requested degree was not profiled.
  bool tp_scaling_fallback = false;
};

struct LookupResult {
  Micros latency_us = 0;
  bool exact = true;           // stored grid point, no interpolation
  bool tp_approximated = false;
};

// Operator latency records for one model, keyed by PerfKey. Immutable once
// built; lookups interpolate bilinearly over (batch, context) inside one
// categorical slice.
class PerfTable {
 public:
  PerfTable() = default;
  explicit PerfTable(ModelMeta meta) : meta_(std::move(meta)) {}

  // Throws DuplicateKey, InvalidArgument for non-positive latency.
  void add(const PerfKey& key, Micros latency_us);
  // Folds another table for the same model in; meta must agree.
  void merge(const PerfTable& other);

  const ModelMeta& meta() const { return meta_; }
  std::size_t size() const { return size_; }
  bool empty() const { return size_ == 0; }

  bool has_slice(const std::string& model_id, const std::string& hw_id, const OpKind& op,
                 Phase phase, std::int32_t tp_degree) const;
  // Distinct operator kinds profiled for (hw, phase) at any tp degree.
  std::vector<OpKind> op_kinds(const std::string& hw_id, Phase phase) const;
  std::optional<Micros> exact(const PerfKey& key) const;

  LookupResult lookup(const PerfKey& key, const LookupOptions& options = {}) const;

  // Visits every stored record in key order.
  template <typename Fn>
  void for_each(Fn&& fn) const {
    for (const auto& [slice_key, slice] : slices_) {
      for (const auto& [point, latency] : slice.points) {
        PerfKey key{std::get<0>(slice_key), std::get<1>(slice_key), std::get<2>(slice_key),
                    std::get<3>(slice_key), point.first, point.second, std::get<4>(slice_key)};
        fn(key, latency);
      }
    }
  }

 private:
  using SliceKey = std::tuple<std::string, std::string, OpKind, Phase, std::int32_t>;

  struct Slice {
    std::map<std::pair<std::int64_t, std::int64_t>, Micros> points;  // (batch, context)
    Micros min_latency = 0;
  };

  double interpolate(const Slice& slice, std::int64_t batch, std::int64_t context) const;

  ModelMeta meta_;
  std::map<SliceKey, Slice> slices_;
  std::size_t size_ = 0;
};

Micros lookup_latency(const PerfTable& table, const PerfKey& key,
                      const LookupOptions& options = {});

// Reads a trace CSV with header
// `model_id,hw_id,op_kind,phase,batch,context,tp_degree,latency_us` and its
// JSON metadata sidecar. When `meta_path` is empty the sidecar is
// `<stem>.meta.json` next to the trace.
PerfTable load_trace(const std::filesystem::path& path,
                     const std::filesystem::path& meta_path = {});

ModelMeta load_model_meta(const std::filesystem::path& path);

// Writes `table` back in trace format; used by tests and data tooling.
void write_trace(const PerfTable& table, const std::filesystem::path& path);
void write_model_meta(const ModelMeta& meta, const std::filesystem::path& path);

// All tables found in a directory (*.csv with sidecars), keyed by model_id.
std::map<std::string, PerfTable> load_trace_dir(const std::filesystem::path& dir);

// Piecewise-linear interpolation through sorted (x, y) points; outside the
// range it extends the nearest segment. Exact at the stored points.
double interpolate_1d(const std::vector<std::int64_t>& xs, const std::vector<double>& ys,
                      std::int64_t x);

}  // namespace servesim::perf
