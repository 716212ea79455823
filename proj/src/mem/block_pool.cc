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

#include "servesim/mem/block_pool.h"

#include <fmt/format.h>

namespace servesim::mem {

const char* tier_name(Tier tier) { return tier == Tier::kDevice ? "device" : "host"; }

BlockPool::BlockPool(std::int32_t id, DeviceId device, PoolConfig config)
    : id_(id), device_(device), config_(config) {
  if (config_.block_size < 1) fail(ErrorCode::kInvalidArgument, "block_size must be >= 1");
  if (config_.block_bytes <= 0) fail(ErrorCode::kInvalidArgument, "block bytes must be > 0");
  if (config_.device_capacity_bytes < 0 || config_.host_capacity_bytes < 0) {
    fail(ErrorCode::kInvalidArgument, "negative tier capacity");
  }
}

Bytes BlockPool::capacity(Tier tier) const {
  return tier == Tier::kDevice ? config_.device_capacity_bytes : config_.host_capacity_bytes;
}

bool BlockPool::can_allocate(std::int64_t blocks) const {
  return blocks * config_.block_bytes <= free_bytes(Tier::kDevice);
}

std::vector<BlockId> BlockPool::allocate(std::int64_t blocks) {
  if (!can_allocate(blocks)) {
    fail(ErrorCode::kInsufficientMemory,
         fmt::format("pool {}: {} blocks requested, {} free", id_, blocks, free_device_blocks()));
  }
  std::vector<BlockId> out;
  out.reserve(blocks);
  for (std::int64_t i = 0; i < blocks; ++i) {
    KVBlock b{next_id_++, config_.block_bytes, Tier::kDevice, 1, false};
    device_used_ += b.bytes;
    out.push_back(b.id);
    blocks_.emplace(b.id, b);
  }
  return out;
}

KVBlock& BlockPool::mutable_block(BlockId id) {
  auto it = blocks_.find(id);
  if (it == blocks_.end()) fail(ErrorCode::kInvalidArgument, fmt::format("pool {}: no block {}", id_, id));
  return it->second;
}

const KVBlock& BlockPool::block(BlockId id) const {
  auto it = blocks_.find(id);
  if (it == blocks_.end()) fail(ErrorCode::kInvalidArgument, fmt::format("pool {}: no block {}", id_, id));
  return it->second;
}

void BlockPool::retain(BlockId id) { ++mutable_block(id).refcount; }

void BlockPool::release(BlockId id) {
  KVBlock& b = mutable_block(id);
  if (b.refcount <= 0) {
    fail(ErrorCode::kInvalidArgument, fmt::format("pool {}: block {} released too often", id_, id));
  }
  if (--b.refcount == 0 && !b.in_tree) free_block(id);
}

void BlockPool::set_in_tree(BlockId id, bool in_tree) { mutable_block(id).in_tree = in_tree; }

void BlockPool::discard(BlockId id) {
  const KVBlock& b = block(id);
  if (b.refcount > 0) {
    fail(ErrorCode::kInvalidArgument, fmt::format("pool {}: discarding pinned block {}", id_, id));
  }
  free_block(id);
}

void BlockPool::free_block(BlockId id) {
  auto it = blocks_.find(id);
  (it->second.tier == Tier::kDevice ? device_used_ : host_used_) -= it->second.bytes;
  blocks_.erase(it);
}

bool BlockPool::move(BlockId id, Tier to) {
  KVBlock& b = mutable_block(id);
  if (b.tier == to) return true;
  if (b.bytes > free_bytes(to)) return false;
  (b.tier == Tier::kDevice ? device_used_ : host_used_) -= b.bytes;
  (to == Tier::kDevice ? device_used_ : host_used_) += b.bytes;
  b.tier = to;
  return true;
}

bool BlockPool::audit() const {
  Bytes device = 0;
  Bytes host = 0;
  for (const auto& [id, b] : blocks_) {
    if (b.refcount < 0) return false;
    (b.tier == Tier::kDevice ? device : host) += b.bytes;
  }
  return device == device_used_ && host == host_used_ && device_used_ <= capacity(Tier::kDevice) &&
         host_used_ <= capacity(Tier::kHost);
}

bool KvHandle::shared_is_local() const {
  for (const auto& ref : shared) {
    if (ref.pool != pool) return false;
  }
  return true;
}

std::int64_t KvHandle::block_count() const {
  return static_cast<std::int64_t>(shared.size() + own.size());
}

std::int64_t blocks_needed(const KvHandle& handle, std::int64_t new_tokens) {
  const std::int64_t b = handle.pool->block_size();
  const std::int64_t covered = handle.tokens + new_tokens - handle.own_base_tokens();
  const std::int64_t need = ceil_div(std::max<std::int64_t>(covered, 0), b);
  return std::max<std::int64_t>(0, need - static_cast<std::int64_t>(handle.own.size()));
}

std::optional<std::vector<BlockId>> try_allocate_kv(BlockPool& pool, KvHandle& handle,
                                                    std::int64_t new_tokens) {
  if (new_tokens < 1) fail(ErrorCode::kInvalidArgument, "allocate_kv needs new_tokens >= 1");
  if (handle.pool == nullptr) handle.pool = &pool;
  const std::int64_t need = blocks_needed(handle, new_tokens);
  if (!pool.can_allocate(need)) return std::nullopt;
  auto blocks = pool.allocate(need);
  handle.own.insert(handle.own.end(), blocks.begin(), blocks.end());
  handle.tokens += new_tokens;
  return blocks;
}

std::vector<BlockId> allocate_kv(BlockPool& pool, KvHandle& handle, std::int64_t new_tokens) {
  auto blocks = try_allocate_kv(pool, handle, new_tokens);
  if (!blocks) {
    fail(ErrorCode::kInsufficientMemory,
         fmt::format("pool {}: {} tokens need {} blocks, {} free", pool.id(), new_tokens,
                     blocks_needed(handle, new_tokens), pool.free_device_blocks()));
  }
  return *blocks;
}

void release_kv(KvHandle& handle) {
  for (const auto& ref : handle.shared) ref.pool->release(ref.id);
  if (handle.pool != nullptr) {
    for (BlockId id : handle.own) handle.pool->release(id);
  }
  BlockPool* pool = handle.pool;
  handle = KvHandle{};
  handle.pool = pool;
}

}  // namespace servesim::mem
