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
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "servesim/common.h"
#include "servesim/mem/block_pool.h"
#include "servesim/net/network.h"

namespace servesim::mem {

// One edge of the prefix tree. Labels always hold whole blocks; children
// are keyed by their first block of tokens.
struct RadixNode {
  std::int64_t id = 0;
  std::vector<TokenId> label;
  BlockPool* pool = nullptr;
  std::vector<BlockId> blocks;  // blocks[i] holds label[i*B, (i+1)*B)
  RadixNode* parent = nullptr;
  std::map<std::vector<TokenId>, std::unique_ptr<RadixNode>> children;
  Micros last_access = 0;
  Micros inserted_at = 0;

  bool pinned() const;
  bool on_device() const;  // any block on the device tier
  Bytes device_bytes() const;
};

// Orders eviction candidates; the smallest candidate goes first.
class EvictionPolicy {
 public:
  virtual ~EvictionPolicy() = default;
  virtual std::string name() const = 0;
  virtual bool before(const RadixNode& a, const RadixNode& b) const = 0;
};

// "lru" (last access) or "fifo" (insertion time).
std::unique_ptr<EvictionPolicy> make_eviction_policy(const std::string& name);

struct MatchResult {
  std::int64_t matched_tokens = 0;
  std::vector<BlockRef> blocks;
};

struct EvictedNode {
  std::int64_t node_id = 0;
  std::int64_t blocks = 0;
  Bytes bytes = 0;
  bool spilled = false;  // moved to host; otherwise discarded
  Micros transfer_start = 0;
  Micros transfer_end = 0;
};

struct EvictResult {
  Bytes freed_device_bytes = 0;
  std::vector<EvictedNode> nodes;
};

struct LoadResult {
  Micros latency_us = 0;
  Bytes device_bytes = 0;   // read from the local device tier
  Bytes host_bytes = 0;     // promoted from the host tier
  Bytes remote_bytes = 0;   // copied from another instance
  std::vector<net::TransferResult> transfers;
};

// Radix tree over cached token prefixes at block granularity. With a shared
// scope one tree indexes blocks of several pools.
class RadixCache {
 public:
  RadixCache(std::int32_t block_size, std::unique_ptr<EvictionPolicy> policy);
  ~RadixCache();

  RadixCache(const RadixCache&) = delete;
  RadixCache& operator=(const RadixCache&) = delete;

  std::int32_t block_size() const { return block_size_; }
  const EvictionPolicy& policy() const { return *policy_; }

  // Longest cached prefix of `tokens`, truncated to whole blocks. Matched
  // blocks are retained and their nodes touched.
  MatchResult match(std::span<const TokenId> tokens, Micros now);
  // Same length computation without side effects.
  std::int64_t peek(std::span<const TokenId> tokens) const;

  // Inserts the whole-block prefix of `tokens`; `blocks[i]` covers block i.
  // Existing path segments are reused, so identical prefixes are stored once.
  // Returns the number of blocks adopted by the tree.
  std::int64_t insert(std::span<const TokenId> tokens, std::span<const BlockRef> blocks, Micros now);

  // Frees at least `bytes_needed` device bytes of `pool` by evicting unpinned
  // device-resident leaves in policy order. Evicted blocks spill to the host
  // tier when it has room, otherwise they are discarded together with their
  // subtree. Throws CannotSatisfy, leaving the tree untouched, when the
  // unpinned blocks cannot cover the request.
  EvictResult evict(BlockPool& pool, Bytes bytes_needed, Micros now, net::Network* network);
  Bytes evictable_device_bytes(const BlockPool& pool) const;

  std::int64_t node_count() const;
  std::int64_t block_count() const;
  const RadixNode& root() const { return *root_; }

 private:
  RadixNode* split(RadixNode* node, std::size_t keep_blocks);
  void discard_subtree(RadixNode* node);
  void collect_candidates(RadixNode* node, const BlockPool& pool, std::vector<RadixNode*>& out) const;

  std::int32_t block_size_;
  std::unique_ptr<EvictionPolicy> policy_;
  std::unique_ptr<RadixNode> root_;
  std::int64_t next_node_id_ = 1;
};

// Latency of bringing matched blocks into `pool`'s compute: device-tier hits
// read over the device memory channel, host-tier hits are promoted over the
// host link, and blocks of other pools are copied point to point. The three
// paths start at `now` in parallel; the result is the latest completion
// minus `now`. Throws InsufficientMemory when promotion does not fit.
LoadResult hit_load_events(BlockPool& pool, std::span<const BlockRef> blocks, Micros now,
                           net::Network& network, std::uint64_t owner = 0);

}  // namespace servesim::mem
