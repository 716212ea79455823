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

#include <gtest/gtest.h>

#include "servesim/net/network.h"
#include "servesim/perf/iteration.h"
#include "servesim/perf/perf_table.h"
#include "servesim/rng.h"

namespace servesim::perf {
namespace {

namespace fs = std::filesystem;

// Scalar reference: straight-line value through two points.
double lerp_oracle(double x0, double y0, double x1, double y1, double x) {
  return y0 + (y1 - y0) * (x - x0) / (x1 - x0);
}

PerfKey key(OpKind::Tag tag, Phase phase, std::int64_t batch, std::int64_t context, std::int32_t tp = 1) {
  return PerfKey{"m", "gpu", op(tag), phase, batch, context, tp};
}

ModelMeta meta(std::int32_t layers, std::int64_t hidden = 4096) {
  ModelMeta m;
  m.model_id = "m";
  m.layer_count = layers;
  m.hidden_size = hidden;
  m.kv_bytes_per_token_per_layer = 1024;
  return m;
}

ExecutionSpec exec_spec(std::int32_t tp = 1, std::int32_t pp = 1, std::vector<DeviceId> group = {},
                        const net::Topology* topology = nullptr) {
  ExecutionSpec spec;
  spec.model_id = "m";
  spec.hw_id = "gpu";
  spec.tp_degree = tp;
  spec.pp_degree = pp;
  spec.tp_group = std::move(group);
  spec.topology = topology;
  return spec;
}

class TempDir {
 public:
  TempDir() : path_(fs::temp_directory_path() / fs::path("servesim_perf_" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path file(const std::string& name, const std::string& body) const {
    std::ofstream(path_ / name) << body;
    return path_ / name;
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

constexpr const char* kHeader = "model_id,hw_id,op_kind,phase,batch,context,tp_degree,latency_us\n";
constexpr const char* kMeta = R"({"model_id":"m","layer_count":2,"hidden_size":64,"kv_bytes_per_token_per_layer":256})";

TEST(TraceLoadTest, WellFormedFileLoadsEveryRow) {
  TempDir dir;
  dir.file("t.meta.json", kMeta);
  auto path = dir.file("t.csv", std::string(kHeader) +
                                    "m,gpu,attention,decode,1,0,1,10\n"
                                    "m,gpu,attention,decode,2,0,1,12\n"
                                    "m,gpu,ffn,decode,1,0,1,20\n");
  PerfTable table = load_trace(path);
  EXPECT_EQ(table.size(), 3u);
  EXPECT_EQ(table.meta().layer_count, 2);
  EXPECT_EQ(table.exact(key(OpKind::Tag::kFFN, Phase::kDecode, 1, 0)), 20);
}

TEST(TraceLoadTest, DuplicateKeyIsRejected) {
  TempDir dir;
  dir.file("t.meta.json", kMeta);
  auto path = dir.file("t.csv", std::string(kHeader) + "m,gpu,ffn,decode,1,0,1,20\nm,gpu,ffn,decode,1,0,1,21\n");
  try {
    load_trace(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDuplicateKey);
    EXPECT_NE(std::string(e.what()).find(":3"), std::string::npos) << e.what();
  }
}

TEST(TraceLoadTest, HeaderOnlyFileIsEmptyTable) {
  TempDir dir;
  dir.file("t.meta.json", kMeta);
  auto path = dir.file("t.csv", kHeader);
  try {
    load_trace(path);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyTable);
  }
}

TEST(TraceLoadTest, MalformedRowsAreParseErrors) {
  TempDir dir;
  dir.file("t.meta.json", kMeta);
  for (const char* row : {"m,gpu,ffn,decode,1,0,1\n", "m,gpu,ffn,decode,x,0,1,5\n",
                          "m,gpu,ffn,sideways,1,0,1,5\n", "m,gpu,ffn,decode,1,0,1,0\n",
                          "other,gpu,ffn,decode,1,0,1,5\n"}) {
    auto path = dir.file("t.csv", std::string(kHeader) + row);
    try {
      load_trace(path);
      FAIL() << row;
    } catch (const Error& e) {
      EXPECT_EQ(e.code(), ErrorCode::kParseError) << row;
    }
  }
}

TEST(TraceLoadTest, WriteThenLoadRoundTrips) {
  TempDir dir;
  PerfTable table(meta(2, 64));
  table.add(key(OpKind::Tag::kAttention, Phase::kPrefill, 16, 0), 33);
  table.add(key(OpKind::Tag::kAttention, Phase::kPrefill, 32, 128), 61);
  table.add(PerfKey{"m", "gpu", OpKind::parse("rotary"), Phase::kDecode, 1, 0, 2}, 4);
  write_trace(table, dir.path() / "m.csv");
  write_model_meta(table.meta(), dir.path() / "m.meta.json");
  PerfTable back = load_trace(dir.path() / "m.csv");
  std::vector<std::pair<PerfKey, Micros>> a, b;
  table.for_each([&](const PerfKey& k, Micros v) { a.emplace_back(k, v); });
  back.for_each([&](const PerfKey& k, Micros v) { b.emplace_back(k, v); });
  EXPECT_EQ(a, b);
  EXPECT_EQ(back.meta().hidden_size, 64);
}

TEST(LookupTest, ExactEntryReturnsStoredValue) {
  PerfTable table(meta(1));
  table.add(key(OpKind::Tag::kAttention, Phase::kDecode, 8, 512), 100);
  LookupResult r = table.lookup(key(OpKind::Tag::kAttention, Phase::kDecode, 8, 512));
  EXPECT_EQ(r.latency_us, 100);
  EXPECT_TRUE(r.exact);
}

TEST(LookupTest, BatchMidpointInterpolates) {
  PerfTable table(meta(1));
  table.add(key(OpKind::Tag::kAttention, Phase::kDecode, 8, 512), 100);
  table.add(key(OpKind::Tag::kAttention, Phase::kDecode, 16, 512), 180);
  const double expected = lerp_oracle(8, 100, 16, 180, 12);
  EXPECT_EQ(expected, 140.0);
  EXPECT_EQ(lookup_latency(table, key(OpKind::Tag::kAttention, Phase::kDecode, 12, 512)), 140);
}

TEST(LookupTest, MissingTpSliceIsNoDataUnlessFallbackEnabled) {
  PerfTable table(meta(1));
  table.add(key(OpKind::Tag::kFFN, Phase::kDecode, 4, 0, 1), 80);
  try {
    table.lookup(key(OpKind::Tag::kFFN, Phase::kDecode, 4, 0, 2));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoDataForOperator);
  }
  LookupResult r = table.lookup(key(OpKind::Tag::kFFN, Phase::kDecode, 4, 0, 2), {true});
  EXPECT_TRUE(r.tp_approximated);
  EXPECT_EQ(r.latency_us, 40);
}

TEST(LookupTest, ExtrapolationIsClampedAtSliceMinimum) {
  PerfTable table(meta(1));
  table.add(key(OpKind::Tag::kFFN, Phase::kDecode, 4, 0), 50);
  table.add(key(OpKind::Tag::kFFN, Phase::kDecode, 8, 0), 90);
  EXPECT_EQ(lookup_latency(table, key(OpKind::Tag::kFFN, Phase::kDecode, 1, 0)), 50);
  EXPECT_EQ(lookup_latency(table, key(OpKind::Tag::kFFN, Phase::kDecode, 12, 0)),
            round_half_up(lerp_oracle(4, 50, 8, 90, 12)));
}

// Bilinear lookups of a plane a + b*x + c*y are exact, and grid points are
// reproduced, for random grids.
TEST(LookupProperty, PlanesAreReproducedAndGridPointsExact) {
  for (std::uint64_t seed = 0; seed < 25; ++seed) {
    CounterRng rng(seed, 7);
    std::uint64_t n = 0;
    const double a = 20 + static_cast<double>(rng.bits(n++) % 50);
    const double b = 1 + static_cast<double>(rng.bits(n++) % 8);
    const double c = static_cast<double>(rng.bits(n++) % 4) / 8.0;
    PerfTable table(meta(1));
    std::vector<std::int64_t> batches{1, 4, 16, 64};
    std::vector<std::int64_t> contexts{0, 256, 1024, 4096};
    for (auto x : batches) {
      for (auto y : contexts) {
        table.add(key(OpKind::Tag::kAttention, Phase::kDecode, x, y),
                  static_cast<Micros>(a + b * x + c * y));
      }
    }
    for (auto x : batches) {
      for (auto y : contexts) {
        EXPECT_EQ(lookup_latency(table, key(OpKind::Tag::kAttention, Phase::kDecode, x, y)),
                  static_cast<Micros>(a + b * x + c * y));
      }
    }
    for (int i = 0; i < 20; ++i) {
      std::int64_t x = 1 + static_cast<std::int64_t>(rng.bits(n++) % 64);
      std::int64_t y = static_cast<std::int64_t>(rng.bits(n++) % 4097);
      double plane = a + b * static_cast<double>(x) + c * static_cast<double>(y);
      EXPECT_NEAR(lookup_latency(table, key(OpKind::Tag::kAttention, Phase::kDecode, x, y)), plane, 1.0)
          << x << "," << y;
    }
  }
}

TEST(IterationTest, SingleOperatorDecode) {
  PerfTable table(meta(1));
  table.add(key(OpKind::Tag::kAttention, Phase::kDecode, 4, 100), 50);
  BatchComposition batch;
  batch.decode_contexts = {100, 100, 100, 100};
  ExecutionSpec spec = exec_spec();
  EXPECT_EQ(iteration_latency(table, batch, spec), (std::vector<Micros>{50}));
}

TEST(IterationTest, TwoLayersSplitEvenlyOverTwoStages) {
  PerfTable table(meta(2));
  table.add(key(OpKind::Tag::kAttention, Phase::kDecode, 1, 10), 50);
  BatchComposition batch;
  batch.decode_contexts = {10};
  ExecutionSpec spec = exec_spec(1, 2);
  EXPECT_EQ(iteration_latency(table, batch, spec), (std::vector<Micros>{50, 50}));
}

TEST(IterationTest, TensorParallelAddsAllReduce) {
  // 4 decode tokens x 4096 hidden x 2 bytes = 32 KiB per rank; over a
  // 4.096 GB/s link a 2-rank ring all-reduce takes 8 us.
  PerfTable table(meta(1, 4096));
  table.add(key(OpKind::Tag::kAttention, Phase::kDecode, 4, 0, 2), 30);
  std::vector<DeviceId> devices{0, 1};
  net::Topology topo = net::Topology::fully_connected(devices, 4.096e9, 0);
  const Micros all_reduce = net::collective_time(topo, net::CollectiveKind::kAllReduce, devices, 4 * 4096 * 2);
  ASSERT_EQ(all_reduce, 8);
  BatchComposition batch;
  batch.decode_contexts = {0, 0, 0, 0};
  ExecutionSpec spec = exec_spec(2, 1, devices, &topo);
  EXPECT_EQ(iteration_latency(table, batch, spec), (std::vector<Micros>{30 + all_reduce}));
}

TEST(IterationTest, EmbeddingAndHeadLandOnOuterStages) {
  PerfTable table(meta(3));
  table.add(key(OpKind::Tag::kEmbedding, Phase::kDecode, 1, 0), 5);
  table.add(key(OpKind::Tag::kFFN, Phase::kDecode, 1, 0), 10);
  table.add(key(OpKind::Tag::kLMHead, Phase::kDecode, 1, 0), 7);
  BatchComposition batch;
  batch.decode_contexts = {0};
  ExecutionSpec spec = exec_spec(1, 2);
  EXPECT_EQ(layers_per_stage(3, 2), (std::vector<std::int32_t>{2, 1}));
  EXPECT_EQ(iteration_latency(table, batch, spec), (std::vector<Micros>{5 + 20, 10 + 7}));
}

TEST(IterationTest, MixedBatchSumsPrefillAndDecodeWork) {
  PerfTable table(meta(1));
  table.add(key(OpKind::Tag::kAttention, Phase::kPrefill, 100, 0), 300);
  table.add(key(OpKind::Tag::kAttention, Phase::kDecode, 2, 40), 60);
  BatchComposition batch;
  batch.prefill = {{100, 0}};
  batch.decode_contexts = {20, 40};
  ExecutionSpec spec = exec_spec();
  EXPECT_EQ(iteration_latency(table, batch, spec), (std::vector<Micros>{360}));
}

TEST(IterationTest, EmptyBatchIsRejected) {
  PerfTable table(meta(1));
  table.add(key(OpKind::Tag::kAttention, Phase::kDecode, 1, 0), 1);
  EXPECT_THROW(iteration_latency(table, BatchComposition{}, exec_spec()), Error);
}

}  // namespace
}  // namespace servesim::perf
