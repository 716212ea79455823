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

#include "servesim/perf/perf_table.h"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "json.hpp"

namespace servesim::perf {

namespace {

constexpr const char* kTraceHeader = "model_id,hw_id,op_kind,phase,batch,context,tp_degree,latency_us";

std::string trim(const std::string& s) {
  auto begin = s.find_first_not_of(" \t\r");
  if (begin == std::string::npos) return {};
  auto end = s.find_last_not_of(" \t\r");
  return s.substr(begin, end - begin + 1);
}

std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::string field;
  std::istringstream in(line);
  while (std::getline(in, field, sep)) out.push_back(trim(field));
  if (!line.empty() && line.back() == sep) out.emplace_back();
  return out;
}

std::int64_t parse_int(const std::string& text, const std::string& where) {
  if (text.empty()) fail(ErrorCode::kParseError, where + ": empty integer field");
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(text.c_str(), &end, 10);
  if (errno != 0 || end == nullptr || *end != '\0') {
    fail(ErrorCode::kParseError, fmt::format("{}: '{}' is not an integer", where, text));
  }
  return v;
}

}  // namespace

const char* phase_name(Phase phase) { return phase == Phase::kPrefill ? "prefill" : "decode"; }

Phase parse_phase(const std::string& text) {
  if (text == "prefill") return Phase::kPrefill;
  if (text == "decode") return Phase::kDecode;
  fail(ErrorCode::kParseError, fmt::format("unknown phase '{}'", text));
}

OpKind OpKind::parse(const std::string& text) {
  static const std::map<std::string, Tag> kNames = {
      {"attention", Tag::kAttention}, {"ffn", Tag::kFFN},         {"expert_ffn", Tag::kExpertFFN},
      {"norm", Tag::kNorm},           {"embedding", Tag::kEmbedding}, {"lm_head", Tag::kLMHead},
  };
  if (text.empty()) fail(ErrorCode::kParseError, "empty op_kind");
  auto it = kNames.find(text);
  if (it != kNames.end()) return OpKind{it->second, {}};
  return OpKind{Tag::kOther, text};
}

std::string OpKind::name() const {
  switch (tag) {
    case Tag::kAttention: return "attention";
    case Tag::kFFN: return "ffn";
    case Tag::kExpertFFN: return "expert_ffn";
    case Tag::kNorm: return "norm";
    case Tag::kEmbedding: return "embedding";
    case Tag::kLMHead: return "lm_head";
    case Tag::kOther: return other;
  }
  return other;
}

void PerfTable::add(const PerfKey& key, Micros latency_us) {
  if (latency_us <= 0) {
    fail(ErrorCode::kInvalidArgument, fmt::format("latency must be positive, got {}", latency_us));
  }
  if (key.batch < 1 || key.context < 0 || key.tp_degree < 1) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("bad key shape batch={} context={} tp={}", key.batch, key.context,
                     key.tp_degree));
  }
  auto& slice = slices_[{key.model_id, key.hw_id, key.op_kind, key.phase, key.tp_degree}];
  auto [it, inserted] = slice.points.emplace(std::make_pair(key.batch, key.context), latency_us);
  if (!inserted) {
    fail(ErrorCode::kDuplicateKey,
         fmt::format("{}/{}/{}/{} batch={} context={} tp={}", key.model_id, key.hw_id,
                     key.op_kind.name(), phase_name(key.phase), key.batch, key.context,
                     key.tp_degree));
  }
  slice.min_latency = slice.points.size() == 1 ? latency_us : std::min(slice.min_latency, latency_us);
  ++size_;
}

void PerfTable::merge(const PerfTable& other) {
  if (other.meta_.model_id != meta_.model_id || other.meta_.layer_count != meta_.layer_count ||
      other.meta_.kv_bytes_per_token_per_layer != meta_.kv_bytes_per_token_per_layer) {
    fail(ErrorCode::kCrossRefError,
         fmt::format("cannot merge tables with differing metadata for model '{}'", meta_.model_id));
  }
  other.for_each([&](const PerfKey& key, Micros latency) { add(key, latency); });
}

bool PerfTable::has_slice(const std::string& model_id, const std::string& hw_id, const OpKind& op,
                          Phase phase, std::int32_t tp_degree) const {
  return slices_.count({model_id, hw_id, op, phase, tp_degree}) > 0;
}

std::vector<OpKind> PerfTable::op_kinds(const std::string& hw_id, Phase phase) const {
  std::vector<OpKind> out;
  for (const auto& [key, slice] : slices_) {
    if (std::get<1>(key) == hw_id && std::get<3>(key) == phase &&
        std::find(out.begin(), out.end(), std::get<2>(key)) == out.end()) {
      out.push_back(std::get<2>(key));
    }
  }
  return out;
}

std::optional<Micros> PerfTable::exact(const PerfKey& key) const {
  auto it = slices_.find({key.model_id, key.hw_id, key.op_kind, key.phase, key.tp_degree});
  if (it == slices_.end()) return std::nullopt;
  auto p = it->second.points.find({key.batch, key.context});
  if (p == it->second.points.end()) return std::nullopt;
  return p->second;
}

double interpolate_1d(const std::vector<std::int64_t>& xs, const std::vector<double>& ys,
                      std::int64_t x) {
  if (xs.size() == 1) return ys.front();
  auto hi = std::lower_bound(xs.begin(), xs.end(), x);
  if (hi != xs.end() && *hi == x) return ys[hi - xs.begin()];
  std::size_t j;  // right end of the segment used
  if (hi == xs.begin()) {
    j = 1;
  } else if (hi == xs.end()) {
    j = xs.size() - 1;
  } else {
    j = static_cast<std::size_t>(hi - xs.begin());
  }
  const double x0 = static_cast<double>(xs[j - 1]);
  const double x1 = static_cast<double>(xs[j]);
  const double t = (static_cast<double>(x) - x0) / (x1 - x0);
  return ys[j - 1] + t * (ys[j] - ys[j - 1]);
}

double PerfTable::interpolate(const Slice& slice, std::int64_t batch, std::int64_t context) const {
  // Interpolate along context within every profiled batch row, then along batch.
  std::vector<std::int64_t> batches;
  std::vector<double> row_values;
  auto it = slice.points.begin();
  while (it != slice.points.end()) {
    const std::int64_t b = it->first.first;
    std::vector<std::int64_t> contexts;
    std::vector<double> values;
    for (; it != slice.points.end() && it->first.first == b; ++it) {
      contexts.push_back(it->first.second);
      values.push_back(static_cast<double>(it->second));
    }
    batches.push_back(b);
    row_values.push_back(interpolate_1d(contexts, values, context));
  }
  return interpolate_1d(batches, row_values, batch);
}

LookupResult PerfTable::lookup(const PerfKey& key, const LookupOptions& options) const {
  auto it = slices_.find({key.model_id, key.hw_id, key.op_kind, key.phase, key.tp_degree});
  double scale = 1.0;
  bool approximated = false;
  if (it == slices_.end() && options.tp_scaling_fallback) {
    // Nearest profiled tp degree, ties toward the smaller degree.
    const Slice* best = nullptr;
    std::int32_t best_tp = 0;
    for (auto s = slices_.begin(); s != slices_.end(); ++s) {
      const auto& [m, h, o, p, tp] = s->first;
      if (m != key.model_id || h != key.hw_id || o != key.op_kind || p != key.phase) continue;
      if (best == nullptr || std::abs(tp - key.tp_degree) < std::abs(best_tp - key.tp_degree)) {
        best = &s->second;
        best_tp = tp;
        it = s;
      }
    }
    if (best != nullptr) {
      scale = static_cast<double>(best_tp) / static_cast<double>(key.tp_degree);
      approximated = true;
    }
  }
  if (it == slices_.end()) {
    fail(ErrorCode::kNoDataForOperator,
         fmt::format("no entries for {}/{}/{}/{} tp={}", key.model_id, key.hw_id,
                     key.op_kind.name(), phase_name(key.phase), key.tp_degree));
  }
  const Slice& slice = it->second;
  LookupResult result;
  result.tp_approximated = approximated;
  auto point = slice.points.find({key.batch, key.context});
  if (point != slice.points.end()) {
    result.latency_us = approximated ? std::max<Micros>(1, round_half_up(point->second * scale))
                                     : point->second;
    return result;
  }
  result.exact = false;
  double value = std::max(interpolate(slice, key.batch, key.context),
                          static_cast<double>(slice.min_latency));
  result.latency_us = std::max<Micros>(1, round_half_up(value * scale));
  return result;
}

Micros lookup_latency(const PerfTable& table, const PerfKey& key, const LookupOptions& options) {
  return table.lookup(key, options).latency_us;
}

ModelMeta load_model_meta(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, fmt::format("cannot open metadata '{}'", path.string()));
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, fmt::format("{}: {}", path.string(), e.what()));
  }
  ModelMeta meta;
  try {
    meta.model_id = j.at("model_id").get<std::string>();
    meta.layer_count = j.at("layer_count").get<std::int32_t>();
    meta.hidden_size = j.at("hidden_size").get<std::int64_t>();
    meta.dtype_bytes = j.value("dtype_bytes", 2);
    meta.kv_bytes_per_token_per_layer = j.at("kv_bytes_per_token_per_layer").get<Bytes>();
    meta.weight_bytes = j.value("weight_bytes", Bytes{0});
    if (j.contains("moe")) {
      const auto& m = j.at("moe");
      meta.moe = MoeMeta{m.at("expert_count").get<std::int32_t>(), m.at("top_k").get<std::int32_t>(),
                         m.at("expert_weight_bytes").get<Bytes>()};
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParseError, fmt::format("{}: {}", path.string(), e.what()));
  }
  if (meta.layer_count < 1) fail(ErrorCode::kParseError, path.string() + ": layer_count must be >= 1");
  if (meta.kv_bytes_per_token_per_layer <= 0) {
    fail(ErrorCode::kParseError, path.string() + ": kv_bytes_per_token_per_layer must be > 0");
  }
  if (meta.moe && (meta.moe->top_k < 1 || meta.moe->top_k > meta.moe->expert_count)) {
    fail(ErrorCode::kParseError, path.string() + ": moe requires 1 <= top_k <= expert_count");
  }
  return meta;
}

PerfTable load_trace(const std::filesystem::path& path, const std::filesystem::path& meta_path) {
  std::filesystem::path sidecar = meta_path;
  if (sidecar.empty()) {
    sidecar = path;
    sidecar.replace_extension(".meta.json");
  }
  PerfTable table(load_model_meta(sidecar));

  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, fmt::format("cannot open trace '{}'", path.string()));
  std::string line;
  std::size_t line_no = 0;
  bool saw_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    const std::string text = trim(line);
    if (text.empty() || text.front() == '#') continue;
    const std::string where = fmt::format("{}:{}", path.string(), line_no);
    if (!saw_header) {
      if (text != kTraceHeader) fail(ErrorCode::kParseError, where + ": missing or malformed header");
      saw_header = true;
      continue;
    }
    auto fields = split(text, ',');
    if (fields.size() != 8) {
      fail(ErrorCode::kParseError, fmt::format("{}: expected 8 fields, got {}", where, fields.size()));
    }
    PerfKey key;
    key.model_id = fields[0];
    key.hw_id = fields[1];
    if (key.model_id.empty() || key.hw_id.empty()) fail(ErrorCode::kParseError, where + ": empty id");
    if (key.model_id != table.meta().model_id) {
      fail(ErrorCode::kParseError,
           fmt::format("{}: model '{}' does not match metadata '{}'", where, key.model_id,
                       table.meta().model_id));
    }
    try {
      key.op_kind = OpKind::parse(fields[2]);
      key.phase = parse_phase(fields[3]);
    } catch (const Error& e) {
      fail(ErrorCode::kParseError, fmt::format("{}: {}", where, e.what()));
    }
    key.batch = parse_int(fields[4], where);
    key.context = parse_int(fields[5], where);
    key.tp_degree = static_cast<std::int32_t>(parse_int(fields[6], where));
    const Micros latency = parse_int(fields[7], where);
    if (key.batch < 1 || key.context < 0 || key.tp_degree < 1 || latency <= 0) {
      fail(ErrorCode::kParseError, where + ": batch, tp_degree and latency_us must be positive");
    }
    try {
      table.add(key, latency);
    } catch (const Error& e) {
      if (e.code() == ErrorCode::kDuplicateKey) fail(ErrorCode::kDuplicateKey, where + ": " + e.what());
      throw;
    }
  }
  if (!saw_header) fail(ErrorCode::kParseError, path.string() + ": missing header");
  if (table.empty()) fail(ErrorCode::kEmptyTable, path.string() + ": no records");
  return table;
}

void write_trace(const PerfTable& table, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out << kTraceHeader << '\n';
  table.for_each([&](const PerfKey& k, Micros latency) {
    out << k.model_id << ',' << k.hw_id << ',' << k.op_kind.name() << ',' << phase_name(k.phase)
        << ',' << k.batch << ',' << k.context << ',' << k.tp_degree << ',' << latency << '\n';
  });
}

void write_model_meta(const ModelMeta& meta, const std::filesystem::path& path) {
  nlohmann::json j = {
      {"model_id", meta.model_id},
      {"layer_count", meta.layer_count},
      {"hidden_size", meta.hidden_size},
      {"dtype_bytes", meta.dtype_bytes},
      {"kv_bytes_per_token_per_layer", meta.kv_bytes_per_token_per_layer},
      {"weight_bytes", meta.weight_bytes},
  };
  if (meta.moe) {
    j["moe"] = {{"expert_count", meta.moe->expert_count},
                {"top_k", meta.moe->top_k},
                {"expert_weight_bytes", meta.moe->expert_weight_bytes}};
  }
  std::ofstream out(path);
  if (!out) fail(ErrorCode::kIoError, "cannot write " + path.string());
  out << j.dump(2) << '\n';
}

std::map<std::string, PerfTable> load_trace_dir(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    fail(ErrorCode::kIoError, fmt::format("trace directory '{}' not found", dir.string()));
  }
  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".csv") files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  std::map<std::string, PerfTable> tables;
  for (const auto& file : files) {
    PerfTable t = load_trace(file);
    const std::string id = t.meta().model_id;
    auto it = tables.find(id);
    if (it == tables.end()) {
      tables.emplace(id, std::move(t));
    } else {
      it->second.merge(t);
    }
  }
  return tables;
}

}  // namespace servesim::perf
