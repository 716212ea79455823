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

#include <filesystem>
#include <functional>

#include <gtest/gtest.h>

#include "servesim/cli/config.h"
#include "servesim/cli/plot.h"
#include "servesim/cli/runner.h"

namespace servesim::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

const fs::path kRoot = SERVESIM_SOURCE_DIR;

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

std::string message_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.what();
  }
  return {};
}

json minimal() {
  return json::parse(R"({
    "schema": "servesim.config/v1",
    "instances": [{"model": "llama3.1-8b", "hardware": "a100-80g", "devices": [0]}]
  })");
}

const std::map<std::string, perf::PerfTable>& tables() {
  static const auto t = perf::load_trace_dir(kRoot / "traces/synthetic");
  return t;
}

TEST(ConfigTest, MinimalSingleDenseConfigIsOneUnifiedInstance) {
  RunConfig c = parse_config(minimal());
  ASSERT_EQ(c.cluster.instances.size(), 1u);
  EXPECT_EQ(c.cluster.instances[0].role, Role::kUnified);
  EXPECT_EQ(c.cluster.instances[0].scheduler.max_batch_tokens, 8192);
  EXPECT_EQ(c.cluster.instances[0].scheduler.prefill_chunk, 512);
  EXPECT_EQ(c.cluster.cache.block_size, 16);
  EXPECT_EQ(c.topology.devices, std::vector<DeviceId>{0});
}

TEST(ConfigTest, UnknownFieldIsNamedWithItsPath) {
  json j = minimal();
  j["instances"][0]["memory"] = {{"device_byts", 1}};
  EXPECT_EQ(code_of([&] { parse_config(j); }), ErrorCode::kSchemaError);
  EXPECT_NE(message_of([&] { parse_config(j); }).find("instances[0].memory.device_byts"), std::string::npos);
  json top = minimal();
  top["extra"] = true;
  EXPECT_NE(message_of([&] { parse_config(top); }).find("extra: unknown field"), std::string::npos);
}

TEST(ConfigTest, WrongTypesAndValuesAreSchemaErrors) {
  json j = minimal();
  j["instances"][0]["tp"] = "2";
  EXPECT_EQ(code_of([&] { parse_config(j); }), ErrorCode::kSchemaError);
  j = minimal();
  j["router"] = {{"policy", "random"}};
  EXPECT_NE(message_of([&] { parse_config(j); }).find("router.policy"), std::string::npos);
  j = minimal();
  j["instances"][0]["tp"] = 2;
  EXPECT_NE(message_of([&] { parse_config(j); }).find("instances[0].devices"), std::string::npos);
  j = minimal();
  j["schema"] = "servesim.config/v0";
  EXPECT_EQ(code_of([&] { parse_config(j); }), ErrorCode::kSchemaError);
}

TEST(ConfigTest, PdWithoutDecodeInstanceIsCrossRefError) {
  json j = minimal();
  j["instances"][0]["role"] = "prefill";
  EXPECT_EQ(code_of([&] { parse_config(j); }), ErrorCode::kCrossRefError);
}

TEST(ConfigTest, UndeclaredOrSharedDevicesAreCrossRefErrors) {
  json j = minimal();
  j["topology"] = {{"devices", {1}}};
  EXPECT_EQ(code_of([&] { parse_config(j); }), ErrorCode::kCrossRefError);
  j = minimal();
  j["instances"].push_back(j["instances"][0]);
  j["instances"][1]["id"] = 1;
  EXPECT_EQ(code_of([&] { parse_config(j); }), ErrorCode::kCrossRefError);
}

TEST(ConfigTest, MissingTraceTableIsCrossRefError) {
  json j = minimal();
  j["instances"][0]["model"] = "unprofiled";
  RunConfig c = parse_config(j);
  EXPECT_EQ(code_of([&] { run_simulation(c, {}, tables()); }), ErrorCode::kCrossRefError);
}

// Echoing a parsed config and parsing it again is a fixed point.
TEST(ConfigProperty, EchoIsAFixedPointForEveryPreset) {
  int n = 0;
  for (const auto& entry : fs::directory_iterator(kRoot / "configs/presets")) {
    const auto echoed = echo_config(load_config(entry.path()));
    EXPECT_EQ(echo_config(parse_config(json::parse(echoed.dump()))).dump(), echoed.dump()) << entry.path();
    ++n;
  }
  EXPECT_EQ(n, 12);
}

TEST(RunnerTest, ExitCodesByErrorClass) {
  EXPECT_EQ(exit_code_for(ErrorCode::kSchemaError), kExitConfig);
  EXPECT_EQ(exit_code_for(ErrorCode::kCrossRefError), kExitConfig);
  EXPECT_EQ(exit_code_for(ErrorCode::kParseError), kExitInput);
  EXPECT_EQ(exit_code_for(ErrorCode::kDeadlock), kExitSimulation);
  EXPECT_EQ(exit_code_for(ErrorCode::kLivelockGuard), kExitSimulation);
  EXPECT_EQ(exit_code_for(ErrorCode::kIoError), kExitIo);
}

TEST(RunnerTest, EmptyWorkloadGivesEmptyReport) {
  RunResult r = run_simulation(parse_config(minimal()), {}, tables());
  EXPECT_EQ(r.summary["requests"], 0);
  EXPECT_EQ(r.requests_jsonl, "{\"schema\":\"servesim.requests/v1\"}\n");
}

TEST(RunnerTest, HundredRequestsFinishOnSingleDense) {
  RunConfig c = load_config(kRoot / "configs/presets/sd.json");
  RunResult r = run_simulation(c, load_run_workload(kRoot / "workloads/sharegpt_like_100.csv"), tables());
  EXPECT_EQ(r.report.requests.size(), 100u);
  for (const auto& row : r.report.requests) EXPECT_TRUE(row.finished());
  EXPECT_EQ(r.summary["config"].dump(), echo_config(c).dump());
  EXPECT_EQ(r.summary["seed"], 42);
}

TEST(RunnerTest, LivelockCapSurfacesAsGuardError) {
  json j = minimal();
  j["livelock_cap"] = 1;
  RunConfig c = parse_config(j);
  workload::WorkloadRecord rec;
  rec.request_id = 0;
  rec.input_len = 8;
  rec.output_len = 2;
  rec.arrival_time_us = 0;
  workload::WorkloadRecord twin = rec;
  twin.request_id = 1;
  // Two arrivals and a batch start share t=0: a streak of two exceeds the cap.
  EXPECT_EQ(code_of([&] { run_simulation(c, {rec, twin}, tables()); }), ErrorCode::kLivelockGuard);
}

TEST(PlotTest, SvgHasThreeCdfPanels) {
  metrics::RequestRecord r;
  r.output_len = 3;
  r.token_times = {1000, 2000, 3500};
  const std::string svg = render_cdf_svg({r}, "a<b");
  EXPECT_EQ(svg.rfind("<svg", 0), 0u);
  EXPECT_NE(svg.find("TTFT (ms), n=1"), std::string::npos);
  EXPECT_NE(svg.find("TPOT (ms), n=1"), std::string::npos);
  EXPECT_NE(svg.find("ITL (ms), n=2"), std::string::npos);
  EXPECT_NE(svg.find("a&lt;b"), std::string::npos);
}

}  // namespace
}  // namespace servesim::cli
