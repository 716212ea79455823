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
#include <fstream>
#include <functional>

#include <gtest/gtest.h>

#include "servesim/workload/workload.h"

namespace servesim::workload {
namespace {

namespace fs = std::filesystem;

class WorkloadFile {
 public:
  explicit WorkloadFile(const std::string& body, const std::string& tokens = {})
      : path_(fs::temp_directory_path() / ("servesim_wl_" + std::to_string(::getpid()) + ".csv")) {
    std::ofstream(path_) << body;
    if (!tokens.empty()) std::ofstream(token_sidecar_path(path_)) << tokens;
  }
  ~WorkloadFile() {
    fs::remove(path_);
    fs::remove(token_sidecar_path(path_));
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorCode::kInvalidArgument;
}

TEST(WorkloadTest, HundredRecordsLoad) {
  std::string body = "request_id,input_len,output_len,arrival_time_us\n";
  for (int i = 0; i < 100; ++i) {
    body += std::to_string(i) + ",128,64," + std::to_string(i * 100) + "\n";
  }
  WorkloadFile f(body);
  auto recs = load_workload(f.path());
  ASSERT_EQ(recs.size(), 100u);
  EXPECT_EQ(recs[42].request_id, 42);
  EXPECT_EQ(recs[42].arrival_time_us, 4200);
}

TEST(WorkloadTest, EmptyFileIsEmptyWorkload) {
  WorkloadFile f("");
  EXPECT_TRUE(load_workload(f.path()).empty());
}

TEST(WorkloadTest, FourthFieldIsArrivalOrModel) {
  WorkloadFile f("# comment\n1,10,5,250\n2,10,5,llama\n3,10,5,,phi\n4,10,5,7,phi\n");
  auto recs = load_workload(f.path());
  ASSERT_EQ(recs.size(), 4u);
  EXPECT_EQ(recs[0].arrival_time_us, 250);
  EXPECT_EQ(recs[1].model_id, "llama");
  EXPECT_FALSE(recs[1].arrival_time_us.has_value());
  EXPECT_FALSE(recs[2].arrival_time_us.has_value());
  EXPECT_EQ(recs[2].model_id, "phi");
  EXPECT_EQ(recs[3].arrival_time_us, 7);
}

TEST(WorkloadTest, MalformedAndDuplicateLinesAreRejected) {
  {
    WorkloadFile f("1,x,5\n");
    EXPECT_EQ(code_of([&] { load_workload(f.path()); }), ErrorCode::kParseError);
  }
  {
    WorkloadFile f("1,2\n");
    EXPECT_EQ(code_of([&] { load_workload(f.path()); }), ErrorCode::kParseError);
  }
  {
    WorkloadFile f("1,2,3\n1,4,5\n");
    EXPECT_EQ(code_of([&] { load_workload(f.path()); }), ErrorCode::kDuplicateId);
  }
}

TEST(WorkloadTest, TokenSidecarAttachesIdsAndChecksCounts) {
  WorkloadFile f("1,3,2\n2,2,2\n", "1: 5 6 7\n2: 8 9\n");
  auto recs = load_workload(f.path());
  load_token_sidecar(token_sidecar_path(f.path()), recs);
  EXPECT_EQ(recs[0].input_token_ids, (std::vector<TokenId>{5, 6, 7}));
  WorkloadFile bad("1,3,2\n", "1: 5 6\n");
  auto recs2 = load_workload(bad.path());
  EXPECT_EQ(code_of([&] { load_token_sidecar(token_sidecar_path(bad.path()), recs2); }),
            ErrorCode::kTokenCountMismatch);
}

TEST(ArrivalTest, MeanGapWithinThreePercentAtTenPerSecond) {
  double sum = 0;
  for (std::uint64_t i = 0; i < 10'000; ++i) sum += poisson_gap_seconds(i, 10.0, 2024);
  const double mean = sum / 10'000;
  EXPECT_GE(mean, 0.097);
  EXPECT_LE(mean, 0.103);
}

TEST(ArrivalTest, SynthesisIsDeterministicSortedAndKeepsExplicitTimes) {
  std::vector<WorkloadRecord> recs(50);
  for (int i = 0; i < 50; ++i) {
    recs[i].request_id = i;
    recs[i].input_len = recs[i].output_len = 1;
  }
  recs[10].arrival_time_us = 1;
  auto a = synthesize_arrivals(recs, 10.0, 7);
  auto b = synthesize_arrivals(recs, 10.0, 7);
  auto c = synthesize_arrivals(recs, 10.0, 8);
  ASSERT_EQ(a.size(), 50u);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].arrival_time_us, b[i].arrival_time_us);
    differs = differs || a[i].arrival_time_us != c[i].arrival_time_us;
    if (i > 0) EXPECT_LE(*a[i - 1].arrival_time_us, *a[i].arrival_time_us);
  }
  EXPECT_TRUE(differs);
  EXPECT_EQ(a.front().request_id, 10);
  EXPECT_EQ(a.front().arrival_time_us, 1);
  // First synthetic arrival is the first gap rounded to microseconds.
  EXPECT_EQ(a[1].arrival_time_us, round_half_up(poisson_gap_seconds(0, 10.0, 7) * 1e6));
  EXPECT_THROW(poisson_gap_seconds(0, 0.0, 1), Error);
}

}  // namespace
}  // namespace servesim::workload
