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
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "servesim/common.h"

namespace servesim::mem {

using BlockId = std::int64_t;
using TokenId = std::int32_t;

enum class Tier { kDevice, kHost };

const char* tier_name(Tier tier);

struct KVBlock {
  BlockId id = 0;
  Bytes bytes = 0;
  Tier tier = Tier::kDevice;
  std::int32_t refcount = 0;
  bool in_tree = false;
};

struct PoolConfig {
  std::int32_t block_size = 16;  // tokens per block
  Bytes block_bytes = 0;         // per device shard
  Bytes device_capacity_bytes = 0;
  Bytes host_capacity_bytes = 0;
  double device_bandwidth_bytes_per_s = 0;
  double host_link_bandwidth_bytes_per_s = 0;
};

// Paged KV storage of one replica, tracked on a representative device shard.
// Blocks live on the device tier or spill to the host tier.
class BlockPool {
 public:
  BlockPool(std::int32_t id, DeviceId device, PoolConfig config);

  std::int32_t id() const { return id_; }
  DeviceId device() const { return device_; }
  const PoolConfig& config() const { return config_; }
  std::int32_t block_size() const { return config_.block_size; }
  Bytes block_bytes() const { return config_.block_bytes; }

  Bytes capacity(Tier tier) const;
  Bytes used(Tier tier) const { return tier == Tier::kDevice ? device_used_ : host_used_; }
  Bytes free_bytes(Tier tier) const { return capacity(tier) - used(tier); }
  std::int64_t free_device_blocks() const { return free_bytes(Tier::kDevice) / config_.block_bytes; }

  bool can_allocate(std::int64_t blocks) const;
  // New device blocks with refcount 1. Throws InsufficientMemory.
  std::vector<BlockId> allocate(std::int64_t blocks);

  void retain(BlockId id);
  // Drops one reference; a block outside the prefix tree is freed at zero.
  void release(BlockId id);
  void set_in_tree(BlockId id, bool in_tree);
  // Frees an unreferenced block regardless of tree membership.
  void discard(BlockId id);
  // Returns false when the destination tier lacks room.
  bool move(BlockId id, Tier to);

  const KVBlock& block(BlockId id) const;
  bool contains(BlockId id) const { return blocks_.count(id) != 0; }
  std::size_t live_blocks() const { return blocks_.size(); }

  // Sum of live block bytes per tier equals the usage counters.
  bool audit() const;

  // Network resources used for loads and spills; set by the owner.
  std::size_t device_channel = 0;
  std::size_t host_channel = 0;

 private:
  KVBlock& mutable_block(BlockId id);
  void free_block(BlockId id);

  std::int32_t id_;
  DeviceId device_;
  PoolConfig config_;
  std::unordered_map<BlockId, KVBlock> blocks_;
  BlockId next_id_ = 0;
  Bytes device_used_ = 0;
  Bytes host_used_ = 0;
};

struct BlockRef {
  BlockPool* pool = nullptr;
  BlockId id = 0;

  const KVBlock& get() const { return pool->block(id); }
  bool operator==(const BlockRef&) const = default;
};

// KV blocks held by one request on one pool.
struct KvHandle {
  BlockPool* pool = nullptr;
  // Prefix blocks obtained from a cache match; with a cache shared across
  // instances they may live on other pools.
  std::vector<BlockRef> shared;
  std::int64_t shared_tokens = 0;
  // Blocks allocated for this request on `pool`.
  std::vector<BlockId> own;
  // Tokens whose KV is stored.
  std::int64_t tokens = 0;

  bool shared_is_local() const;
  // Token offset from which `own` blocks start.
  std::int64_t own_base_tokens() const { return shared_is_local() ? shared_tokens : 0; }
  std::int64_t block_count() const;
};

// Blocks needed so that `handle` can store `new_tokens` more tokens.
std::int64_t blocks_needed(const KvHandle& handle, std::int64_t new_tokens);

// Allocates ceil-granular blocks for `new_tokens` additional tokens.
// Throws InsufficientMemory without side effects.
std::vector<BlockId> allocate_kv(BlockPool& pool, KvHandle& handle, std::int64_t new_tokens);
std::optional<std::vector<BlockId>> try_allocate_kv(BlockPool& pool, KvHandle& handle,
                                                    std::int64_t new_tokens);

// Drops every reference `handle` holds and resets it.
void release_kv(KvHandle& handle);

}  // namespace servesim::mem
