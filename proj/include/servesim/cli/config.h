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

#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "servesim/metrics/metrics.h"
#include "servesim/net/network.h"
#include "servesim/serve/cluster.h"

namespace servesim::cli {

inline constexpr const char* kConfigSchema = "servesim.config/v1";

// Topology as written in the config; built into a net::Topology on parse.
struct TopologyDecl {
  std::string kind = "fully_connected";  // fully_connected | ring | host_bridge | links
  std::vector<DeviceId> devices;
  double bandwidth_bytes_per_s = 300e9;
  Micros latency_us = 0;
  DeviceId bridge = -1;  // host_bridge only
  std::vector<net::Link> links;  // links only
};

struct RunConfig {
  serve::ClusterSpec cluster;
  TopologyDecl topology;
  double arrival_rate_per_s = 10.0;
  metrics::ThroughputWindow window = metrics::ThroughputWindow::kFull;
  std::string traces;  // trace directory, optional
};

// Throws SchemaError naming the offending field path (e.g.
// `instances[1].memory.device_bytes`) and CrossRefError for inconsistent
// references between sections.
RunConfig parse_config(const nlohmann::json& doc);

// Reads and parses a config file. Relative paths inside it resolve against
// the file's directory.
RunConfig load_config(const std::filesystem::path& path);

// Every field with defaults filled in; parse_config(echo_config(c)) yields c.
nlohmann::ordered_json echo_config(const RunConfig& config);

net::Topology build_topology(const TopologyDecl& decl);

}  // namespace servesim::cli
