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
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "servesim/common.h"

namespace servesim::sim {

using EventId = std::uint64_t;

enum class EventKind {
  kRequestArrival,
  kBatchStart,
  kBatchComplete,
  kTransferStart,
  kTransferComplete,
  kResourceFree,
  kCustom,
};

const char* event_kind_name(EventKind kind);

// Lower value dispatches first among events at the same time. Transfers
// settle before batch completions, and batch formation runs last so that it
// sees every state change of its tick.
enum class Priority : int {
  kTransfer = 0,
  kResource = 1,
  kCompletion = 2,
  kArrival = 3,
  kCustom = 4,
  kBatchFormation = 5,
};

Priority default_priority(EventKind kind);

class Engine;

struct Event {
  EventId id = 0;
  Micros time = 0;
  EventKind kind = EventKind::kCustom;
  Priority priority = Priority::kCustom;
  std::string summary;
  std::function<void(Engine&)> action;
};

enum class DrainStatus { kDrained, kDeadlineReached };

struct DrainResult {
  DrainStatus status = DrainStatus::kDrained;
  Micros now = 0;
};

class Engine {
 public:
  static constexpr std::uint64_t kDefaultLivelockCap = 100'000'000;

  explicit Engine(std::uint64_t livelock_cap = kDefaultLivelockCap)
      : livelock_cap_(livelock_cap) {}

  Engine(const Engine&) = delete;
  Engine& operator=(const Engine&) = delete;

  EventId schedule(Micros time, EventKind kind, std::function<void(Engine&)> action,
                   std::string summary = {});
  EventId schedule(Micros time, EventKind kind, Priority priority,
                   std::function<void(Engine&)> action, std::string summary = {});

  DrainResult run_until(std::optional<Micros> deadline = std::nullopt);

  Micros now() const { return now_; }
  std::size_t pending() const { return queue_.size(); }
  std::uint64_t dispatched() const { return dispatched_; }
  std::uint64_t scheduled() const { return next_id_; }

  // One line per dispatched event: "time_us kind payload_summary".
  void set_event_log(std::ostream* sink) { log_ = sink; }

 private:
  struct Later {
    bool operator()(const Event& a, const Event& b) const {
      if (a.time != b.time) return a.time > b.time;
      if (a.priority != b.priority) return a.priority > b.priority;
      return a.id > b.id;
    }
  };

  // Binary heap ordered by Later; std::push_heap/pop_heap allow moving the
  // head out instead of copying it.
  std::vector<Event> queue_;
  Micros now_ = 0;
  EventId next_id_ = 0;
  std::uint64_t dispatched_ = 0;
  std::uint64_t livelock_cap_;
  std::uint64_t same_time_streak_ = 0;
  std::ostream* log_ = nullptr;
};

}  // namespace servesim::sim
