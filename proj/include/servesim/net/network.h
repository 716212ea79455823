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
#include <map>
#include <span>
#include <string>
#include <vector>

#include "servesim/common.h"

namespace servesim::net {

using LinkId = std::int32_t;

enum class TopologyKind { kFullyConnected, kRing, kHostBridge, kComposite };

const char* topology_kind_name(TopologyKind kind);

struct Link {
  DeviceId a = 0;
  DeviceId b = 0;
  double bandwidth_bytes_per_s = 0;
  Micros base_latency_us = 0;
};

class Topology {
 public:
  explicit Topology(TopologyKind kind = TopologyKind::kComposite) : kind_(kind) {}

  static Topology fully_connected(std::span<const DeviceId> devices, double bandwidth_bytes_per_s,
                                  Micros base_latency_us);
  static Topology ring(std::span<const DeviceId> devices, double bandwidth_bytes_per_s,
                       Micros base_latency_us);
  // Star through a switch node (PCIe-like root complex).
  static Topology host_bridge(std::span<const DeviceId> devices, DeviceId bridge,
                              double bandwidth_bytes_per_s, Micros base_latency_us);
  // Union of nodes and links; the kind becomes Composite.
  static Topology compose(const Topology& a, const Topology& b);

  void add_node(DeviceId node);
  LinkId add_link(const Link& link);

  TopologyKind kind() const { return kind_; }
  const std::vector<DeviceId>& nodes() const { return nodes_; }
  const std::vector<Link>& links() const { return links_; }
  bool has_node(DeviceId node) const;

  // Minimum-hop path as link ids; lowest node id wins ties. Empty when
  // src == dst. Throws Unreachable.
  std::vector<LinkId> route(DeviceId src, DeviceId dst) const;
  bool connected(std::span<const DeviceId> devices) const;

 private:
  TopologyKind kind_;
  std::vector<DeviceId> nodes_;  // sorted
  std::vector<Link> links_;
  std::map<DeviceId, std::vector<std::pair<DeviceId, LinkId>>> adjacency_;  // sorted by neighbour
};

struct Reservation {
  Micros start = 0;
  Micros end = 0;
  std::uint64_t owner = 0;
};

// Exclusive, serialized reservations per resource; intervals on one resource
// never overlap.
class LinkSchedule {
 public:
  void resize(std::size_t resources) { intervals_.resize(resources); }
  std::size_t size() const { return intervals_.size(); }

  // Earliest start >= from where [start, start + duration) is free.
  Micros earliest_slot(std::size_t resource, Micros from, Micros duration) const;
  void reserve(std::size_t resource, Micros start, Micros end, std::uint64_t owner);
  const std::vector<Reservation>& intervals(std::size_t resource) const {
    return intervals_.at(resource);
  }

 private:
  std::vector<std::vector<Reservation>> intervals_;  // sorted by start
};

struct Hop {
  std::size_t resource = 0;
  Micros start = 0;
  Micros end = 0;
};

struct TransferResult {
  Micros start = 0;       // first hop start
  Micros completion = 0;  // last hop end
  std::vector<Hop> hops;
};

// Topology links plus degenerate single-endpoint channels (device memory,
// host links) that share the same reservation mechanism.
class Network {
 public:
  explicit Network(Topology topology);

  const Topology& topology() const { return topology_; }
  LinkSchedule& schedule() { return schedule_; }
  const LinkSchedule& schedule() const { return schedule_; }

  std::size_t add_channel(std::string name, double bandwidth_bytes_per_s);
  const std::string& channel_name(std::size_t resource) const;

  // Store-and-forward along the minimum-hop route. Each hop occupies its link
  // for base_latency + bytes / bandwidth.
  TransferResult p2p_transfer(DeviceId src, DeviceId dst, Bytes bytes, Micros earliest_start,
                              std::uint64_t owner = 0);
  TransferResult channel_transfer(std::size_t channel, Bytes bytes, Micros earliest_start,
                                  std::uint64_t owner = 0);
  // Duration a transfer would take on an idle path, no reservation made.
  Micros p2p_duration(DeviceId src, DeviceId dst, Bytes bytes) const;
  Micros channel_duration(std::size_t channel, Bytes bytes) const;

  std::uint64_t transfers() const { return transfers_; }

 private:
  struct Channel {
    std::string name;
    double bandwidth_bytes_per_s = 0;
  };

  Topology topology_;
  std::vector<Channel> channels_;  // index = resource - links
  LinkSchedule schedule_;
  std::uint64_t transfers_ = 0;
};

enum class CollectiveKind { kAllReduce, kAllToAll, kAllGather };

const char* collective_kind_name(CollectiveKind kind);

// Analytic alpha+beta costs over the bottleneck bandwidth among participants:
//   AllToAll:  base + bytes * (P-1)/P / bw
//   AllReduce: base + 2 * bytes * (P-1)/P / bw
//   AllGather: base + bytes * (P-1) / bw
// with P = |participants|; zero when P = 1 or bytes = 0.
Micros collective_time(const Topology& topology, CollectiveKind kind,
                       std::span<const DeviceId> participants, Bytes bytes_per_node);

}  // namespace servesim::net
