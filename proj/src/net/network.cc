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

#include "servesim/net/network.h"

#include <algorithm>
#include <deque>
#include <limits>

#include <fmt/format.h>

namespace servesim::net {

const char* topology_kind_name(TopologyKind kind) {
  switch (kind) {
    case TopologyKind::kFullyConnected: return "fully_connected";
    case TopologyKind::kRing: return "ring";
    case TopologyKind::kHostBridge: return "host_bridge";
    case TopologyKind::kComposite: return "composite";
  }
  return "composite";
}

const char* collective_kind_name(CollectiveKind kind) {
  switch (kind) {
    case CollectiveKind::kAllReduce: return "all_reduce";
    case CollectiveKind::kAllToAll: return "all_to_all";
    case CollectiveKind::kAllGather: return "all_gather";
  }
  return "collective";
}

Topology Topology::fully_connected(std::span<const DeviceId> devices, double bandwidth,
                                   Micros latency) {
  Topology t(TopologyKind::kFullyConnected);
  for (DeviceId d : devices) t.add_node(d);
  for (std::size_t i = 0; i < devices.size(); ++i) {
    for (std::size_t j = i + 1; j < devices.size(); ++j) {
      t.add_link({devices[i], devices[j], bandwidth, latency});
    }
  }
  return t;
}

Topology Topology::ring(std::span<const DeviceId> devices, double bandwidth, Micros latency) {
  Topology t(TopologyKind::kRing);
  for (DeviceId d : devices) t.add_node(d);
  if (devices.size() == 2) {
    t.add_link({devices[0], devices[1], bandwidth, latency});
  } else if (devices.size() > 2) {
    for (std::size_t i = 0; i < devices.size(); ++i) {
      t.add_link({devices[i], devices[(i + 1) % devices.size()], bandwidth, latency});
    }
  }
  return t;
}

Topology Topology::host_bridge(std::span<const DeviceId> devices, DeviceId bridge, double bandwidth,
                               Micros latency) {
  Topology t(TopologyKind::kHostBridge);
  t.add_node(bridge);
  for (DeviceId d : devices) {
    t.add_node(d);
    t.add_link({d, bridge, bandwidth, latency});
  }
  return t;
}

Topology Topology::compose(const Topology& a, const Topology& b) {
  Topology t(TopologyKind::kComposite);
  for (const Topology* part : {&a, &b}) {
    for (DeviceId n : part->nodes()) t.add_node(n);
    for (const Link& l : part->links()) t.add_link(l);
  }
  return t;
}

void Topology::add_node(DeviceId node) {
  auto it = std::lower_bound(nodes_.begin(), nodes_.end(), node);
  if (it == nodes_.end() || *it != node) nodes_.insert(it, node);
}

LinkId Topology::add_link(const Link& link) {
  if (!(link.bandwidth_bytes_per_s > 0)) {
    fail(ErrorCode::kInvalidArgument, fmt::format("link {}-{} needs positive bandwidth", link.a, link.b));
  }
  if (link.base_latency_us < 0) {
    fail(ErrorCode::kInvalidArgument, fmt::format("link {}-{} has negative latency", link.a, link.b));
  }
  if (link.a == link.b) {
    fail(ErrorCode::kInvalidArgument, fmt::format("self-link on node {}", link.a));
  }
  add_node(link.a);
  add_node(link.b);
  const auto id = static_cast<LinkId>(links_.size());
  links_.push_back(link);
  auto insert_sorted = [](auto& vec, std::pair<DeviceId, LinkId> entry) {
    vec.insert(std::upper_bound(vec.begin(), vec.end(), entry), entry);
  };
  insert_sorted(adjacency_[link.a], {link.b, id});
  insert_sorted(adjacency_[link.b], {link.a, id});
  return id;
}

bool Topology::has_node(DeviceId node) const {
  return std::binary_search(nodes_.begin(), nodes_.end(), node);
}

std::vector<LinkId> Topology::route(DeviceId src, DeviceId dst) const {
  if (!has_node(src) || !has_node(dst)) {
    fail(ErrorCode::kUnreachable, fmt::format("node {} or {} not in topology", src, dst));
  }
  if (src == dst) return {};
  // BFS visiting neighbours in ascending id order gives the lowest-id path
  // among the minimum-hop ones.
  std::map<DeviceId, std::pair<DeviceId, LinkId>> parent;
  std::deque<DeviceId> frontier{src};
  parent[src] = {src, -1};
  while (!frontier.empty()) {
    DeviceId u = frontier.front();
    frontier.pop_front();
    if (u == dst) break;
    auto adj = adjacency_.find(u);
    if (adj == adjacency_.end()) continue;
    for (const auto& [v, link] : adj->second) {
      if (parent.count(v) != 0) continue;
      parent[v] = {u, link};
      frontier.push_back(v);
    }
  }
  if (parent.count(dst) == 0) {
    fail(ErrorCode::kUnreachable, fmt::format("no path from {} to {}", src, dst));
  }
  std::vector<LinkId> path;
  for (DeviceId v = dst; v != src; v = parent[v].first) path.push_back(parent[v].second);
  std::reverse(path.begin(), path.end());
  return path;
}

bool Topology::connected(std::span<const DeviceId> devices) const {
  for (std::size_t i = 1; i < devices.size(); ++i) {
    try {
      route(devices[0], devices[i]);
    } catch (const Error&) {
      return false;
    }
  }
  return true;
}

Micros LinkSchedule::earliest_slot(std::size_t resource, Micros from, Micros duration) const {
  const auto& list = intervals_.at(resource);
  Micros start = from;
  // First interval that ends after `from`; earlier ones cannot block.
  auto it = std::lower_bound(list.begin(), list.end(), from,
                             [](const Reservation& r, Micros t) { return r.end <= t; });
  for (; it != list.end(); ++it) {
    if (it->start >= start + duration) break;
    start = std::max(start, it->end);
  }
  return start;
}

void LinkSchedule::reserve(std::size_t resource, Micros start, Micros end, std::uint64_t owner) {
  if (end <= start) return;
  auto& list = intervals_.at(resource);
  Reservation r{start, end, owner};
  auto it = std::upper_bound(list.begin(), list.end(), r,
                             [](const Reservation& a, const Reservation& b) { return a.start < b.start; });
  if ((it != list.end() && it->start < end) || (it != list.begin() && std::prev(it)->end > start)) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("reservation [{}, {}) overlaps on resource {}", start, end, resource));
  }
  list.insert(it, r);
}

Network::Network(Topology topology) : topology_(std::move(topology)) {
  schedule_.resize(topology_.links().size());
}

std::size_t Network::add_channel(std::string name, double bandwidth_bytes_per_s) {
  if (!(bandwidth_bytes_per_s > 0)) {
    fail(ErrorCode::kInvalidArgument, fmt::format("channel '{}' needs positive bandwidth", name));
  }
  channels_.push_back({std::move(name), bandwidth_bytes_per_s});
  schedule_.resize(topology_.links().size() + channels_.size());
  return schedule_.size() - 1;
}

const std::string& Network::channel_name(std::size_t resource) const {
  return channels_.at(resource - topology_.links().size()).name;
}

TransferResult Network::p2p_transfer(DeviceId src, DeviceId dst, Bytes bytes, Micros earliest,
                                     std::uint64_t owner) {
  if (src == dst) {
    fail(ErrorCode::kInvalidArgument, fmt::format("p2p transfer from {} to itself", src));
  }
  const auto path = topology_.route(src, dst);
  TransferResult result;
  Micros t = earliest;
  for (LinkId id : path) {
    const Link& link = topology_.links()[id];
    const Micros duration = link.base_latency_us + transfer_micros(bytes, link.bandwidth_bytes_per_s);
    const auto resource = static_cast<std::size_t>(id);
    const Micros start = schedule_.earliest_slot(resource, t, duration);
    schedule_.reserve(resource, start, start + duration, owner);
    result.hops.push_back({resource, start, start + duration});
    t = start + duration;
  }
  result.start = result.hops.empty() ? earliest : result.hops.front().start;
  result.completion = t;
  ++transfers_;
  return result;
}

TransferResult Network::channel_transfer(std::size_t channel, Bytes bytes, Micros earliest,
                                         std::uint64_t owner) {
  const Channel& c = channels_.at(channel - topology_.links().size());
  const Micros duration = transfer_micros(bytes, c.bandwidth_bytes_per_s);
  const Micros start = schedule_.earliest_slot(channel, earliest, duration);
  schedule_.reserve(channel, start, start + duration, owner);
  ++transfers_;
  return {start, start + duration, {{channel, start, start + duration}}};
}

Micros Network::p2p_duration(DeviceId src, DeviceId dst, Bytes bytes) const {
  Micros total = 0;
  for (LinkId id : topology_.route(src, dst)) {
    const Link& link = topology_.links()[id];
    total += link.base_latency_us + transfer_micros(bytes, link.bandwidth_bytes_per_s);
  }
  return total;
}

Micros Network::channel_duration(std::size_t channel, Bytes bytes) const {
  return transfer_micros(bytes, channels_.at(channel - topology_.links().size()).bandwidth_bytes_per_s);
}

Micros collective_time(const Topology& topology, CollectiveKind kind,
                       std::span<const DeviceId> participants, Bytes bytes_per_node) {
  if (participants.empty()) {
    fail(ErrorCode::kInvalidArgument, "collective needs at least one participant");
  }
  if (bytes_per_node < 0) fail(ErrorCode::kInvalidArgument, "negative collective size");
  const auto p = static_cast<double>(participants.size());
  if (participants.size() == 1 || bytes_per_node == 0) return 0;

  double bandwidth = std::numeric_limits<double>::infinity();
  Micros base = 0;
  for (std::size_t i = 0; i < participants.size(); ++i) {
    for (std::size_t j = 0; j < participants.size(); ++j) {
      if (i == j || participants[i] == participants[j]) continue;
      Micros path_latency = 0;
      for (LinkId id : topology.route(participants[i], participants[j])) {
        const Link& link = topology.links()[id];
        bandwidth = std::min(bandwidth, link.bandwidth_bytes_per_s);
        path_latency += link.base_latency_us;
      }
      base = std::max(base, path_latency);
    }
  }
  if (std::isinf(bandwidth)) return 0;  // every participant on the same device

  const double bytes = static_cast<double>(bytes_per_node);
  double volume = 0;
  switch (kind) {
    case CollectiveKind::kAllToAll: volume = bytes * (p - 1) / p; break;
    case CollectiveKind::kAllReduce: volume = 2 * bytes * (p - 1) / p; break;
    case CollectiveKind::kAllGather: volume = bytes * (p - 1); break;
  }
  return base + round_half_up(volume * 1e6 / bandwidth);
}

}  // namespace servesim::net
