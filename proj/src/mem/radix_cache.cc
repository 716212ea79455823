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

#include "servesim/mem/radix_cache.h"

#include <algorithm>
#include <map>

#include <fmt/format.h>

namespace servesim::mem {

bool RadixNode::pinned() const {
  for (BlockId id : blocks) {
    if (pool->block(id).refcount > 0) return true;
  }
  return false;
}

bool RadixNode::on_device() const {
  for (BlockId id : blocks) {
    if (pool->block(id).tier == Tier::kDevice) return true;
  }
  return false;
}

Bytes RadixNode::device_bytes() const {
  Bytes total = 0;
  for (BlockId id : blocks) {
    const KVBlock& b = pool->block(id);
    if (b.tier == Tier::kDevice) total += b.bytes;
  }
  return total;
}

namespace {

class LruPolicy : public EvictionPolicy {
 public:
  std::string name() const override { return "lru"; }
  bool before(const RadixNode& a, const RadixNode& b) const override {
    if (a.last_access != b.last_access) return a.last_access < b.last_access;
    return a.id < b.id;
  }
};

class FifoPolicy : public EvictionPolicy {
 public:
  std::string name() const override { return "fifo"; }
  bool before(const RadixNode& a, const RadixNode& b) const override {
    if (a.inserted_at != b.inserted_at) return a.inserted_at < b.inserted_at;
    return a.id < b.id;
  }
};

bool same_block(std::span<const TokenId> a, std::span<const TokenId> b) {
  return std::equal(a.begin(), a.end(), b.begin(), b.end());
}

}  // namespace

std::unique_ptr<EvictionPolicy> make_eviction_policy(const std::string& name) {
  if (name == "lru") return std::make_unique<LruPolicy>();
  if (name == "fifo") return std::make_unique<FifoPolicy>();
  fail(ErrorCode::kInvalidArgument, fmt::format("unknown eviction policy '{}'", name));
}

RadixCache::RadixCache(std::int32_t block_size, std::unique_ptr<EvictionPolicy> policy)
    : block_size_(block_size), policy_(std::move(policy)), root_(std::make_unique<RadixNode>()) {
  if (block_size_ < 1) fail(ErrorCode::kInvalidArgument, "block_size must be >= 1");
  if (!policy_) policy_ = make_eviction_policy("lru");
}

RadixCache::~RadixCache() = default;

MatchResult RadixCache::match(std::span<const TokenId> tokens, Micros now) {
  MatchResult result;
  const std::size_t b = static_cast<std::size_t>(block_size_);
  RadixNode* node = root_.get();
  std::size_t pos = 0;
  while (tokens.size() - pos >= b) {
    auto it = node->children.find(std::vector<TokenId>(tokens.begin() + pos, tokens.begin() + pos + b));
    if (it == node->children.end()) break;
    RadixNode* child = it->second.get();
    std::size_t m = 0;
    while (m < child->blocks.size() && pos + (m + 1) * b <= tokens.size() &&
           same_block(std::span(child->label).subspan(m * b, b), tokens.subspan(pos + m * b, b))) {
      ++m;
    }
    for (std::size_t i = 0; i < m; ++i) {
      child->pool->retain(child->blocks[i]);
      result.blocks.push_back({child->pool, child->blocks[i]});
    }
    child->last_access = now;
    pos += m * b;
    if (m < child->blocks.size()) break;
    node = child;
  }
  result.matched_tokens = static_cast<std::int64_t>(pos);
  return result;
}

std::int64_t RadixCache::peek(std::span<const TokenId> tokens) const {
  const std::size_t b = static_cast<std::size_t>(block_size_);
  const RadixNode* node = root_.get();
  std::size_t pos = 0;
  while (tokens.size() - pos >= b) {
    auto it = node->children.find(std::vector<TokenId>(tokens.begin() + pos, tokens.begin() + pos + b));
    if (it == node->children.end()) break;
    const RadixNode* child = it->second.get();
    std::size_t m = 0;
    while (m < child->blocks.size() && pos + (m + 1) * b <= tokens.size() &&
           same_block(std::span(child->label).subspan(m * b, b), tokens.subspan(pos + m * b, b))) {
      ++m;
    }
    pos += m * b;
    if (m < child->blocks.size()) break;
    node = child;
  }
  return static_cast<std::int64_t>(pos);
}

RadixNode* RadixCache::split(RadixNode* node, std::size_t keep_blocks) {
  const std::size_t b = static_cast<std::size_t>(block_size_);
  RadixNode* parent = node->parent;
  std::vector<TokenId> key(node->label.begin(), node->label.begin() + b);
  auto owned = std::move(parent->children.at(key));

  auto middle = std::make_unique<RadixNode>();
  middle->id = next_node_id_++;
  middle->label.assign(node->label.begin(), node->label.begin() + keep_blocks * b);
  middle->pool = node->pool;
  middle->blocks.assign(node->blocks.begin(), node->blocks.begin() + keep_blocks);
  middle->parent = parent;
  middle->last_access = node->last_access;
  middle->inserted_at = node->inserted_at;

  node->label.erase(node->label.begin(), node->label.begin() + keep_blocks * b);
  node->blocks.erase(node->blocks.begin(), node->blocks.begin() + keep_blocks);
  node->parent = middle.get();
  std::vector<TokenId> tail_key(node->label.begin(), node->label.begin() + b);
  middle->children.emplace(std::move(tail_key), std::move(owned));

  RadixNode* raw = middle.get();
  parent->children[key] = std::move(middle);
  return raw;
}

std::int64_t RadixCache::insert(std::span<const TokenId> tokens, std::span<const BlockRef> blocks,
                                Micros now) {
  const std::size_t b = static_cast<std::size_t>(block_size_);
  const std::size_t full_blocks = tokens.size() / b;
  if (blocks.size() < full_blocks) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("insert of {} tokens needs {} blocks, got {}", tokens.size(), full_blocks,
                     blocks.size()));
  }
  RadixNode* node = root_.get();
  std::size_t pos = 0;
  while (pos / b < full_blocks) {
    auto it = node->children.find(std::vector<TokenId>(tokens.begin() + pos, tokens.begin() + pos + b));
    if (it == node->children.end()) break;
    RadixNode* child = it->second.get();
    std::size_t m = 0;
    while (m < child->blocks.size() && pos / b + m < full_blocks &&
           same_block(std::span(child->label).subspan(m * b, b), tokens.subspan(pos + m * b, b))) {
      ++m;
    }
    child->last_access = now;
    pos += m * b;
    if (m < child->blocks.size()) {
      // Diverges inside the edge; split only if new blocks follow.
      if (pos / b < full_blocks) node = split(child, m);
      else node = child;
      break;
    }
    node = child;
  }

  std::int64_t adopted = 0;
  std::size_t index = pos / b;
  while (index < full_blocks) {
    // One leaf per run of blocks from the same pool.
    BlockPool* pool = blocks[index].pool;
    std::size_t end = index;
    while (end < full_blocks && blocks[end].pool == pool) ++end;
    auto leaf = std::make_unique<RadixNode>();
    leaf->id = next_node_id_++;
    leaf->label.assign(tokens.begin() + index * b, tokens.begin() + end * b);
    leaf->pool = pool;
    leaf->parent = node;
    leaf->last_access = now;
    leaf->inserted_at = now;
    for (std::size_t i = index; i < end; ++i) {
      if (pool->block(blocks[i].id).in_tree) {
        fail(ErrorCode::kInvalidArgument, fmt::format("block {} is already cached", blocks[i].id));
      }
      pool->set_in_tree(blocks[i].id, true);
      leaf->blocks.push_back(blocks[i].id);
      ++adopted;
    }
    std::vector<TokenId> key(leaf->label.begin(), leaf->label.begin() + b);
    RadixNode* raw = leaf.get();
    node->children.emplace(std::move(key), std::move(leaf));
    node = raw;
    index = end;
  }
  return adopted;
}

void RadixCache::collect_candidates(RadixNode* node, const BlockPool& pool,
                                    std::vector<RadixNode*>& out) const {
  bool child_on_device = false;
  for (auto& [key, child] : node->children) {
    collect_candidates(child.get(), pool, out);
    child_on_device = child_on_device || child->on_device();
  }
  if (node != root_.get() && node->pool == &pool && !child_on_device && node->on_device() &&
      !node->pinned()) {
    out.push_back(node);
  }
}

Bytes RadixCache::evictable_device_bytes(const BlockPool& pool) const {
  Bytes total = 0;
  std::vector<const RadixNode*> stack{root_.get()};
  while (!stack.empty()) {
    const RadixNode* n = stack.back();
    stack.pop_back();
    if (n != root_.get() && n->pool == &pool && !n->pinned()) total += n->device_bytes();
    for (const auto& [key, child] : n->children) stack.push_back(child.get());
  }
  return total;
}

void RadixCache::discard_subtree(RadixNode* node) {
  for (auto& [key, child] : node->children) discard_subtree(child.get());
  node->children.clear();
  for (BlockId id : node->blocks) {
    node->pool->set_in_tree(id, false);
    node->pool->discard(id);
  }
  node->blocks.clear();
}

EvictResult RadixCache::evict(BlockPool& pool, Bytes bytes_needed, Micros now, net::Network* network) {
  if (bytes_needed <= 0) fail(ErrorCode::kInvalidArgument, "evict needs bytes_needed > 0");
  if (evictable_device_bytes(pool) < bytes_needed) {
    fail(ErrorCode::kCannotSatisfy,
         fmt::format("pool {}: {} bytes needed, only {} unpinned", pool.id(), bytes_needed,
                     evictable_device_bytes(pool)));
  }
  EvictResult result;
  while (result.freed_device_bytes < bytes_needed) {
    std::vector<RadixNode*> candidates;
    collect_candidates(root_.get(), pool, candidates);
    if (candidates.empty()) {
      fail(ErrorCode::kCannotSatisfy,
           fmt::format("pool {}: eviction stalled after freeing {} bytes", pool.id(),
                       result.freed_device_bytes));
    }
    RadixNode* victim = *std::min_element(
        candidates.begin(), candidates.end(),
        [&](const RadixNode* a, const RadixNode* b) { return policy_->before(*a, *b); });

    EvictedNode record;
    record.node_id = victim->id;
    record.bytes = victim->device_bytes();
    record.blocks = static_cast<std::int64_t>(victim->blocks.size());
    if (pool.free_bytes(Tier::kHost) >= record.bytes) {
      for (BlockId id : victim->blocks) pool.move(id, Tier::kHost);
      record.spilled = true;
      if (network != nullptr) {
        auto t = network->channel_transfer(pool.host_channel, record.bytes, now);
        record.transfer_start = t.start;
        record.transfer_end = t.completion;
      }
    } else {
      RadixNode* parent = victim->parent;
      std::vector<TokenId> key(victim->label.begin(), victim->label.begin() + block_size_);
      discard_subtree(victim);
      parent->children.erase(key);
    }
    result.freed_device_bytes += record.bytes;
    result.nodes.push_back(record);
  }
  return result;
}

std::int64_t RadixCache::node_count() const {
  std::int64_t count = 0;
  std::vector<const RadixNode*> stack{root_.get()};
  while (!stack.empty()) {
    const RadixNode* n = stack.back();
    stack.pop_back();
    if (n != root_.get()) ++count;
    for (const auto& [key, child] : n->children) stack.push_back(child.get());
  }
  return count;
}

std::int64_t RadixCache::block_count() const {
  std::int64_t count = 0;
  std::vector<const RadixNode*> stack{root_.get()};
  while (!stack.empty()) {
    const RadixNode* n = stack.back();
    stack.pop_back();
    count += static_cast<std::int64_t>(n->blocks.size());
    for (const auto& [key, child] : n->children) stack.push_back(child.get());
  }
  return count;
}

LoadResult hit_load_events(BlockPool& pool, std::span<const BlockRef> blocks, Micros now,
                           net::Network& network, std::uint64_t owner) {
  LoadResult result;
  std::vector<BlockId> promote;
  std::map<BlockPool*, Bytes> remote;
  for (const BlockRef& ref : blocks) {
    const KVBlock& b = ref.get();
    if (ref.pool != &pool) {
      remote[ref.pool] += b.bytes;
      result.remote_bytes += b.bytes;
    } else if (b.tier == Tier::kDevice) {
      result.device_bytes += b.bytes;
    } else {
      promote.push_back(ref.id);
      result.host_bytes += b.bytes;
    }
  }
  if (result.host_bytes > pool.free_bytes(Tier::kDevice)) {
    fail(ErrorCode::kInsufficientMemory,
         fmt::format("pool {}: promoting {} host bytes into {} free device bytes", pool.id(),
                     result.host_bytes, pool.free_bytes(Tier::kDevice)));
  }
  Micros done = now;
  if (result.device_bytes > 0) {
    result.transfers.push_back(network.channel_transfer(pool.device_channel, result.device_bytes, now, owner));
    done = std::max(done, result.transfers.back().completion);
  }
  if (result.host_bytes > 0) {
    for (BlockId id : promote) pool.move(id, Tier::kDevice);
    result.transfers.push_back(network.channel_transfer(pool.host_channel, result.host_bytes, now, owner));
    done = std::max(done, result.transfers.back().completion);
  }
  for (const auto& [src, bytes] : remote) {
    result.transfers.push_back(network.p2p_transfer(src->device(), pool.device(), bytes, now, owner));
    done = std::max(done, result.transfers.back().completion);
  }
  result.latency_us = done - now;
  return result;
}

}  // namespace servesim::mem
