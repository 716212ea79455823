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

#include "servesim/cli/config.h"

#include <algorithm>
#include <array>
#include <fstream>
#include <set>

#include <fmt/format.h>

namespace servesim::cli {
namespace {

using nlohmann::json;
using nlohmann::ordered_json;

[[noreturn]] void schema_error(const std::string& path, const std::string& what) {
  fail(ErrorCode::kSchemaError, fmt::format("{}: {}", path, what));
}

// Object reader that records consumed keys so leftovers can be reported.
class Node {
 public:
  Node(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) schema_error(path_, "expected an object");
  }

  std::string at(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  bool has(const std::string& key) const { return j_.contains(key); }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key)) return fallback;
    return convert<T>(j_.at(key), at(key));
  }

  template <typename T>
  T require(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key)) schema_error(at(key), "required field missing");
    return convert<T>(j_.at(key), at(key));
  }

  // Parses an enum-like string through `parse`, mapping its errors to the field.
  template <typename Parse>
  auto choice(const std::string& key, const std::string& fallback, Parse parse) {
    const std::string text = get<std::string>(key, fallback);
    try {
      return parse(text);
    } catch (const Error&) {
      schema_error(at(key), fmt::format("unknown value '{}'", text));
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) schema_error(at(key), "unknown field");
    }
  }

  template <typename T>
  static T convert(const json& v, const std::string& path) {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) schema_error(path, "expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) schema_error(path, "expected an integer");
      if (std::is_unsigned_v<T> && v.is_number_integer() && v.get<std::int64_t>() < 0 && !v.is_number_unsigned()) {
        schema_error(path, "expected a non-negative integer");
      }
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) schema_error(path, "expected a number");
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) schema_error(path, "expected a string");
    } else {
      static_assert(std::is_same_v<T, std::vector<DeviceId>>);
      if (!v.is_array()) schema_error(path, "expected an array of integers");
      for (const auto& e : v) {
        if (!e.is_number_integer()) schema_error(path, "expected an array of integers");
      }
    }
    return v.get<T>();
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void positive(double value, const std::string& path) {
  if (!(value > 0)) schema_error(path, "must be positive");
}

void non_negative(double value, const std::string& path) {
  if (value < 0) schema_error(path, "must be non-negative");
}

TopologyDecl parse_topology(const json& j, const std::vector<DeviceId>& instance_devices) {
  Node n(j, "topology");
  TopologyDecl d;
  d.kind = n.get<std::string>("kind", d.kind);
  if (d.kind != "fully_connected" && d.kind != "ring" && d.kind != "host_bridge" && d.kind != "links") {
    schema_error(n.at("kind"), fmt::format("unknown value '{}'", d.kind));
  }
  d.devices = n.get<std::vector<DeviceId>>("devices", instance_devices);
  d.bandwidth_bytes_per_s = n.get<double>("bandwidth_bytes_per_s", d.bandwidth_bytes_per_s);
  d.latency_us = n.get<Micros>("latency_us", d.latency_us);
  positive(d.bandwidth_bytes_per_s, n.at("bandwidth_bytes_per_s"));
  non_negative(static_cast<double>(d.latency_us), n.at("latency_us"));
  if (d.kind == "host_bridge") {
    d.bridge = n.require<DeviceId>("bridge");
  } else if (n.has("bridge")) {
    schema_error(n.at("bridge"), "only valid for host_bridge");
  }
  if (const json* links = n.child("links")) {
    if (d.kind != "links") schema_error(n.at("links"), "only valid for kind 'links'");
    if (!links->is_array()) schema_error(n.at("links"), "expected an array");
    for (std::size_t i = 0; i < links->size(); ++i) {
      Node l((*links)[i], fmt::format("topology.links[{}]", i));
      net::Link link;
      link.a = l.require<DeviceId>("a");
      link.b = l.require<DeviceId>("b");
      link.bandwidth_bytes_per_s = l.require<double>("bandwidth_bytes_per_s");
      link.base_latency_us = l.get<Micros>("latency_us", 0);
      positive(link.bandwidth_bytes_per_s, l.at("bandwidth_bytes_per_s"));
      l.finish();
      d.links.push_back(link);
    }
  } else if (d.kind == "links") {
    schema_error(n.at("links"), "required field missing");
  }
  n.finish();
  return d;
}

serve::InstanceSpec parse_instance(const json& j, std::size_t index) {
  const std::string path = fmt::format("instances[{}]", index);
  Node n(j, path);
  serve::InstanceSpec s;
  s.id = n.get<InstanceId>("id", static_cast<InstanceId>(index));
  s.role = n.choice("role", "unified", parse_role);
  s.model_id = n.require<std::string>("model");
  s.hw_id = n.require<std::string>("hardware");
  s.devices = n.require<std::vector<DeviceId>>("devices");
  s.tp_degree = n.get<std::int32_t>("tp", 1);
  s.pp_degree = n.get<std::int32_t>("pp", 1);
  s.dp_degree = n.get<std::int32_t>("dp", 1);
  for (const char* key : {"tp", "pp", "dp"}) {
    const std::int32_t v = key[0] == 't' ? s.tp_degree : key[0] == 'p' ? s.pp_degree : s.dp_degree;
    if (v < 1) schema_error(n.at(key), "must be at least 1");
  }
  if (static_cast<std::int64_t>(s.devices.size()) != std::int64_t{s.tp_degree} * s.pp_degree * s.dp_degree) {
    schema_error(n.at("devices"), fmt::format("expected tp*pp*dp = {} devices, got {}",
                                              s.tp_degree * s.pp_degree * s.dp_degree, s.devices.size()));
  }
  if (const json* mj = n.child("memory")) {
    Node m(*mj, path + ".memory");
    auto& mem = s.memory;
    mem.device_memory_bytes = m.get<Bytes>("device_bytes", mem.device_memory_bytes);
    mem.memory_bandwidth_bytes_per_s = m.get<double>("bandwidth_bytes_per_s", mem.memory_bandwidth_bytes_per_s);
    mem.host_memory_bytes = m.get<Bytes>("host_bytes", mem.host_memory_bytes);
    mem.host_link_bandwidth_bytes_per_s = m.get<double>("host_link_bytes_per_s", mem.host_link_bandwidth_bytes_per_s);
    mem.reserved_bytes = m.get<Bytes>("reserved_bytes", mem.reserved_bytes);
    positive(static_cast<double>(mem.device_memory_bytes), m.at("device_bytes"));
    positive(mem.memory_bandwidth_bytes_per_s, m.at("bandwidth_bytes_per_s"));
    non_negative(static_cast<double>(mem.host_memory_bytes), m.at("host_bytes"));
    positive(mem.host_link_bandwidth_bytes_per_s, m.at("host_link_bytes_per_s"));
    non_negative(static_cast<double>(mem.reserved_bytes), m.at("reserved_bytes"));
    m.finish();
  }
  if (const json* sj = n.child("scheduler")) {
    Node sch(*sj, path + ".scheduler");
    auto& c = s.scheduler;
    c.policy = sch.choice("policy", "fifo", serve::parse_scheduler_policy);
    c.max_batch_tokens = sch.get<std::int64_t>("max_batch_tokens", c.max_batch_tokens);
    c.max_batch_seqs = sch.get<std::int64_t>("max_batch_seqs", c.max_batch_seqs);
    c.prefill_chunk = sch.get<std::int64_t>("prefill_chunk", c.prefill_chunk);
    for (const char* key : {"max_batch_tokens", "max_batch_seqs", "prefill_chunk"}) {
      if (sj->contains(key) && (*sj)[key].get<std::int64_t>() < 1) schema_error(sch.at(key), "must be at least 1");
    }
    sch.finish();
  }
  if (const json* ej = n.child("moe")) {
    Node m(*ej, path + ".moe");
    serve::MoeSpec moe;
    moe.ep_degree = m.get<std::int32_t>("ep", 1);
    if (moe.ep_degree < 1) schema_error(m.at("ep"), "must be at least 1");
    moe.gate.kind = m.choice("gate", "uniform", moe::parse_gate_kind);
    moe.gate.zipf_s = m.get<double>("zipf_s", moe.gate.zipf_s);
    moe.gate.trace_path = m.get<std::string>("routing_trace", "");
    if (moe.gate.kind == moe::GateKind::kTraceReplay && moe.gate.trace_path.empty()) {
      schema_error(m.at("routing_trace"), "required for gate 'trace'");
    }
    moe.offload = m.choice("offload", "none", moe::parse_offload_policy);
    moe.offloaded_fraction = m.get<double>("offloaded_fraction", 0.0);
    if (moe.offloaded_fraction < 0 || moe.offloaded_fraction > 1) {
      schema_error(m.at("offloaded_fraction"), "must be within [0, 1]");
    }
    m.finish();
    s.moe = moe;
  }
  n.finish();
  return s;
}

void check_cross_refs(const RunConfig& c) {
  std::set<InstanceId> ids;
  std::set<DeviceId> used;
  const std::set<DeviceId> declared(c.topology.devices.begin(), c.topology.devices.end());
  for (std::size_t i = 0; i < c.cluster.instances.size(); ++i) {
    const auto& s = c.cluster.instances[i];
    if (!ids.insert(s.id).second) {
      fail(ErrorCode::kCrossRefError, fmt::format("instances[{}].id: duplicate instance id {}", i, s.id));
    }
    for (DeviceId d : s.devices) {
      if (c.topology.kind != "links" && !declared.count(d)) {
        fail(ErrorCode::kCrossRefError,
             fmt::format("instances[{}].devices: device {} is not declared in topology.devices", i, d));
      }
      if (!used.insert(d).second) {
        fail(ErrorCode::kCrossRefError, fmt::format("instances[{}].devices: device {} is already in use", i, d));
      }
    }
  }
  std::map<std::string, std::array<int, 3>> roles;  // unified, prefill, decode per model
  for (const auto& s : c.cluster.instances) ++roles[s.model_id][static_cast<int>(s.role)];
  bool pd = false;
  for (const auto& [model, n] : roles) pd = pd || n[1] > 0 || n[2] > 0;
  if (!pd) return;
  for (const auto& [model, n] : roles) {
    if (n[0] > 0) {
      fail(ErrorCode::kCrossRefError, fmt::format("model '{}': unified instances cannot be mixed with prefill/decode", model));
    }
    if (n[1] == 0 || n[2] == 0) {
      fail(ErrorCode::kCrossRefError,
           fmt::format("model '{}': disaggregated serving needs at least one prefill and one decode instance "
                       "(have {} prefill, {} decode)",
                       model, n[1], n[2]));
    }
  }
  for (const auto& [p, d] : c.cluster.pd.pairing.fixed) {
    if (!ids.count(p) || !ids.count(d)) {
      fail(ErrorCode::kCrossRefError, fmt::format("pd.static_pairs: {} -> {} names an unknown instance", p, d));
    }
  }
}

}  // namespace

net::Topology build_topology(const TopologyDecl& d) {
  if (d.kind == "fully_connected") return net::Topology::fully_connected(d.devices, d.bandwidth_bytes_per_s, d.latency_us);
  if (d.kind == "ring") return net::Topology::ring(d.devices, d.bandwidth_bytes_per_s, d.latency_us);
  if (d.kind == "host_bridge") {
    return net::Topology::host_bridge(d.devices, d.bridge, d.bandwidth_bytes_per_s, d.latency_us);
  }
  net::Topology t;
  for (DeviceId dev : d.devices) t.add_node(dev);
  for (const net::Link& l : d.links) t.add_link(l);
  return t;
}

RunConfig parse_config(const json& doc) {
  Node root(doc, "");
  const std::string schema = root.require<std::string>("schema");
  if (schema != kConfigSchema) {
    schema_error("schema", fmt::format("unsupported schema '{}', expected '{}'", schema, kConfigSchema));
  }
  RunConfig c;
  auto& cl = c.cluster;
  cl.seed = root.get<std::uint64_t>("seed", 0);
  cl.livelock_cap = root.get<std::uint64_t>("livelock_cap", sim::Engine::kDefaultLivelockCap);
  if (cl.livelock_cap == 0) schema_error("livelock_cap", "must be positive");
  c.traces = root.get<std::string>("traces", "");

  const json* instances = root.child("instances");
  if (instances == nullptr) schema_error("instances", "required field missing");
  if (!instances->is_array() || instances->empty()) schema_error("instances", "expected a non-empty array");
  std::vector<DeviceId> all_devices;
  for (std::size_t i = 0; i < instances->size(); ++i) {
    cl.instances.push_back(parse_instance((*instances)[i], i));
    for (DeviceId d : cl.instances.back().devices) all_devices.push_back(d);
  }
  std::sort(all_devices.begin(), all_devices.end());
  all_devices.erase(std::unique(all_devices.begin(), all_devices.end()), all_devices.end());

  const json empty = json::object();
  const json* topo = root.child("topology");
  c.topology = parse_topology(topo ? *topo : empty, all_devices);

  {
    const json* rj = root.child("router");
    Node r(rj ? *rj : empty, "router");
    cl.router = r.choice("policy", "round_robin", route::parse_policy);
    r.finish();
  }
  if (const json* pj = root.child("pd")) {
    Node p(*pj, "pd");
    const std::string pairing = p.get<std::string>("pairing", "least_tokens");
    if (pairing == "least_tokens") {
      cl.pd.pairing.kind = route::PairingKind::kLeastOutstandingTokens;
    } else if (pairing == "static") {
      cl.pd.pairing.kind = route::PairingKind::kStatic;
    } else {
      schema_error(p.at("pairing"), fmt::format("unknown value '{}'", pairing));
    }
    if (const json* sp = p.child("static_pairs")) {
      if (!sp->is_array()) schema_error(p.at("static_pairs"), "expected an array of [prefill, decode] pairs");
      for (std::size_t i = 0; i < sp->size(); ++i) {
        const json& e = (*sp)[i];
        if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
          schema_error(fmt::format("pd.static_pairs[{}]", i), "expected [prefill, decode]");
        }
        cl.pd.pairing.fixed[e[0].get<InstanceId>()] = e[1].get<InstanceId>();
      }
    }
    if (cl.pd.pairing.kind == route::PairingKind::kStatic && cl.pd.pairing.fixed.empty()) {
      schema_error(p.at("static_pairs"), "required for pairing 'static'");
    }
    cl.pd.transfer = p.choice("transfer", "full_blocking", serve::parse_transfer_policy);
    cl.pd.select_at = p.choice("select_at", "prefill_complete", serve::parse_decode_selection);
    p.finish();
  }
  {
    const json* cj = root.child("prefix_cache");
    Node pc(cj ? *cj : empty, "prefix_cache");
    cl.cache.enabled = pc.get<bool>("enabled", false);
    cl.cache.shared = pc.get<bool>("shared", false);
    cl.cache.block_size = pc.get<std::int32_t>("block_size", 16);
    cl.cache.eviction_policy = pc.get<std::string>("eviction", "lru");
    if (cl.cache.block_size < 1) schema_error(pc.at("block_size"), "must be at least 1");
    if (cl.cache.eviction_policy != "lru") {
      schema_error(pc.at("eviction"), fmt::format("unknown value '{}'", cl.cache.eviction_policy));
    }
    pc.finish();
  }
  {
    const json* wj = root.child("workload");
    Node w(wj ? *wj : empty, "workload");
    c.arrival_rate_per_s = w.get<double>("arrival_rate_per_s", 10.0);
    positive(c.arrival_rate_per_s, w.at("arrival_rate_per_s"));
    w.finish();
  }
  {
    const json* mj = root.child("metrics");
    Node m(mj ? *mj : empty, "metrics");
    c.window = m.choice("throughput_window", "full", metrics::parse_throughput_window);
    m.finish();
  }
  {
    const json* lj = root.child("lookup");
    Node l(lj ? *lj : empty, "lookup");
    cl.lookup.tp_scaling_fallback = l.get<bool>("tp_scaling_fallback", false);
    l.finish();
  }
  root.finish();

  check_cross_refs(c);
  try {
    cl.topology = build_topology(c.topology);
  } catch (const Error& e) {
    fail(ErrorCode::kCrossRefError, fmt::format("topology: {}", e.what()));
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorCode::kIoError, fmt::format("cannot open config '{}'", path.string()));
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorCode::kSchemaError, fmt::format("{}: not valid JSON: {}", path.string(), e.what()));
  }
  RunConfig c = parse_config(doc);
  const auto base = path.parent_path();
  auto resolve = [&](std::filesystem::path& p) {
    if (!p.empty() && p.is_relative()) p = (base / p).lexically_normal();
  };
  for (auto& s : c.cluster.instances) {
    if (s.moe) resolve(s.moe->gate.trace_path);
  }
  if (!c.traces.empty()) {
    std::filesystem::path t = c.traces;
    resolve(t);
    c.traces = t.string();
  }
  return c;
}

ordered_json echo_config(const RunConfig& c) {
  const auto& cl = c.cluster;
  ordered_json j;
  j["schema"] = kConfigSchema;
  j["seed"] = cl.seed;
  j["livelock_cap"] = cl.livelock_cap;
  if (!c.traces.empty()) j["traces"] = c.traces;
  ordered_json topo;
  topo["kind"] = c.topology.kind;
  topo["devices"] = c.topology.devices;
  topo["bandwidth_bytes_per_s"] = c.topology.bandwidth_bytes_per_s;
  topo["latency_us"] = c.topology.latency_us;
  if (c.topology.kind == "host_bridge") topo["bridge"] = c.topology.bridge;
  if (c.topology.kind == "links") {
    topo["links"] = ordered_json::array();
    for (const auto& l : c.topology.links) {
      topo["links"].push_back(
          {{"a", l.a}, {"b", l.b}, {"bandwidth_bytes_per_s", l.bandwidth_bytes_per_s}, {"latency_us", l.base_latency_us}});
    }
  }
  j["topology"] = topo;
  j["instances"] = ordered_json::array();
  for (const auto& s : cl.instances) {
    ordered_json i;
    i["id"] = s.id;
    i["role"] = role_name(s.role);
    i["model"] = s.model_id;
    i["hardware"] = s.hw_id;
    i["devices"] = s.devices;
    i["tp"] = s.tp_degree;
    i["pp"] = s.pp_degree;
    i["dp"] = s.dp_degree;
    i["memory"] = {{"device_bytes", s.memory.device_memory_bytes},
                   {"bandwidth_bytes_per_s", s.memory.memory_bandwidth_bytes_per_s},
                   {"host_bytes", s.memory.host_memory_bytes},
                   {"host_link_bytes_per_s", s.memory.host_link_bandwidth_bytes_per_s},
                   {"reserved_bytes", s.memory.reserved_bytes}};
    i["scheduler"] = {{"policy", serve::scheduler_policy_name(s.scheduler.policy)},
                      {"max_batch_tokens", s.scheduler.max_batch_tokens},
                      {"max_batch_seqs", s.scheduler.max_batch_seqs},
                      {"prefill_chunk", s.scheduler.prefill_chunk}};
    if (s.moe) {
      ordered_json m;
      m["ep"] = s.moe->ep_degree;
      m["gate"] = moe::gate_kind_name(s.moe->gate.kind);
      m["zipf_s"] = s.moe->gate.zipf_s;
      if (!s.moe->gate.trace_path.empty()) m["routing_trace"] = s.moe->gate.trace_path.string();
      m["offload"] = moe::offload_policy_name(s.moe->offload);
      m["offloaded_fraction"] = s.moe->offloaded_fraction;
      i["moe"] = m;
    }
    j["instances"].push_back(i);
  }
  j["router"] = {{"policy", route::policy_name(cl.router)}};
  bool pd = false;
  for (const auto& s : cl.instances) pd = pd || s.role != Role::kUnified;
  if (pd) {
    ordered_json p;
    p["pairing"] = cl.pd.pairing.kind == route::PairingKind::kStatic ? "static" : "least_tokens";
    if (!cl.pd.pairing.fixed.empty()) {
      p["static_pairs"] = ordered_json::array();
      for (const auto& [a, b] : cl.pd.pairing.fixed) p["static_pairs"].push_back({a, b});
    }
    p["transfer"] = serve::transfer_policy_name(cl.pd.transfer);
    p["select_at"] = serve::decode_selection_name(cl.pd.select_at);
    j["pd"] = p;
  }
  j["prefix_cache"] = {{"enabled", cl.cache.enabled},
                       {"shared", cl.cache.shared},
                       {"block_size", cl.cache.block_size},
                       {"eviction", cl.cache.eviction_policy}};
  j["workload"] = {{"arrival_rate_per_s", c.arrival_rate_per_s}};
  j["metrics"] = {{"throughput_window", metrics::throughput_window_name(c.window)}};
  j["lookup"] = {{"tp_scaling_fallback", cl.lookup.tp_scaling_fallback}};
  return j;
}

}  // namespace servesim::cli
