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

#include "servesim/sim/engine.h"

#include <algorithm>

#include <fmt/format.h>

namespace servesim::sim {

const char* event_kind_name(EventKind kind) {
  switch (kind) {
    case EventKind::kRequestArrival: return "RequestArrival";
    case EventKind::kBatchStart: return "BatchStart";
    case EventKind::kBatchComplete: return "BatchComplete";
    case EventKind::kTransferStart: return "TransferStart";
    case EventKind::kTransferComplete: return "TransferComplete";
    case EventKind::kResourceFree: return "ResourceFree";
    case EventKind::kCustom: return "Custom";
  }
  return "Unknown";
}

Priority default_priority(EventKind kind) {
  switch (kind) {
    case EventKind::kTransferStart:
    case EventKind::kTransferComplete: return Priority::kTransfer;
    case EventKind::kResourceFree: return Priority::kResource;
    case EventKind::kBatchComplete: return Priority::kCompletion;
    case EventKind::kRequestArrival: return Priority::kArrival;
    case EventKind::kBatchStart: return Priority::kBatchFormation;
    case EventKind::kCustom: return Priority::kCustom;
  }
  return Priority::kCustom;
}

EventId Engine::schedule(Micros time, EventKind kind, std::function<void(Engine&)> action,
                         std::string summary) {
  return schedule(time, kind, default_priority(kind), std::move(action), std::move(summary));
}

EventId Engine::schedule(Micros time, EventKind kind, Priority priority,
                         std::function<void(Engine&)> action, std::string summary) {
  if (time < now_) {
    fail(ErrorCode::kSchedulingInPast,
         fmt::format("event at t={} scheduled when now={}", time, now_));
  }
  Event ev;
  ev.id = next_id_++;
  ev.time = time;
  ev.kind = kind;
  ev.priority = priority;
  ev.summary = std::move(summary);
  ev.action = std::move(action);
  queue_.push_back(std::move(ev));
  std::push_heap(queue_.begin(), queue_.end(), Later{});
  return next_id_ - 1;
}

DrainResult Engine::run_until(std::optional<Micros> deadline) {
  while (!queue_.empty()) {
    if (deadline && queue_.front().time > *deadline) {
      return {DrainStatus::kDeadlineReached, now_};
    }
    std::pop_heap(queue_.begin(), queue_.end(), Later{});
    Event ev = std::move(queue_.back());
    queue_.pop_back();
    if (ev.time == now_ && dispatched_ > 0) {
      if (++same_time_streak_ > livelock_cap_) {
        fail(ErrorCode::kLivelockGuard,
             fmt::format("{} events dispatched at t={} without the clock advancing",
                         same_time_streak_, now_));
      }
    } else {
      same_time_streak_ = 0;
    }
    now_ = ev.time;
    ++dispatched_;
    if (log_ != nullptr) {
      *log_ << ev.time << ' ' << event_kind_name(ev.kind) << ' ' << ev.summary << '\n';
    }
    if (ev.action) ev.action(*this);
  }
  return {DrainStatus::kDrained, now_};
}

}  // namespace servesim::sim
