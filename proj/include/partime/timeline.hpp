// Copyright 2026 The Partime Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

namespace partime {

enum class Op { kForward, kBackward, kUpdate, kIdle, kDummy };

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kForward: return "F";
    case Op::kBackward: return "B";
    case Op::kUpdate: return "U";
    case Op::kIdle: return "idle";
    case Op::kDummy: return "dummy";
  }
  return "?";
}

// One scheduled operation. For lock-step schedules `slot` is the global step
// and every stage emits its F/B/U (or dummy) records for that step in order;
// for micro-batch schedules `slot` is the start tick and `duration` the
// number of ticks occupied.
struct TimelineEvent {
  std::int64_t slot = 0;
  std::size_t stage = 0;
  Op op = Op::kIdle;
  std::int64_t sample_id = -1;
  std::int64_t duration = 1;

  friend bool operator==(const TimelineEvent&, const TimelineEvent&) = default;
};

inline std::string to_string(const TimelineEvent& e) {
  std::ostringstream os;
  os << "{slot=" << e.slot << " stage=" << e.stage << " op=" << op_name(e.op) << " sample=" << e.sample_id
     << " dur=" << e.duration << "}";
  return os.str();
}

// Fixed-width text grid, one row per stage and one column per slot. Cells
// concatenate the ops starting in that slot ("F6B2U"); "-" marks a slot where
// the stage only has dummy work, "." an idle slot. Ops lasting several slots
// repeat their token. `width` 0 sizes columns to the widest cell.
inline std::string render_timeline(const std::vector<TimelineEvent>& events, std::size_t stages,
                                   std::size_t width = 0) {
  std::int64_t last_slot = -1;
  for (const auto& e : events) last_slot = std::max(last_slot, e.slot + std::max<std::int64_t>(e.duration, 1) - 1);
  const std::size_t cols = static_cast<std::size_t>(last_slot + 1);
  std::vector<std::vector<std::string>> cells(stages, std::vector<std::string>(cols));
  std::vector<std::vector<bool>> real(stages, std::vector<bool>(cols, false));
  std::vector<std::vector<bool>> touched(stages, std::vector<bool>(cols, false));
  for (const auto& e : events) {
    if (e.stage >= stages || e.op == Op::kIdle) continue;
    std::string tok;
    switch (e.op) {
      case Op::kForward: tok = "F" + std::to_string(e.sample_id); break;
      case Op::kBackward: tok = "B" + std::to_string(e.sample_id); break;
      case Op::kUpdate: tok = "U"; break;
      case Op::kDummy: break;
      default: break;
    }
    const std::int64_t span = std::max<std::int64_t>(e.duration, 1);
    for (std::int64_t s = e.slot; s < e.slot + span; ++s) {
      auto c = static_cast<std::size_t>(s);
      cells[e.stage][c] += tok;
      touched[e.stage][c] = true;
      if (e.op != Op::kDummy) real[e.stage][c] = true;
    }
  }
  std::size_t w = width;
  for (std::size_t h = 0; h < stages; ++h) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (!touched[h][c]) cells[h][c] = ".";
      else if (!real[h][c]) cells[h][c] = "-";
      if (width == 0) w = std::max(w, cells[h][c].size());
    }
  }
  std::ostringstream os;
  for (std::size_t h = 0; h < stages; ++h) {
    os << 'S' << (h + 1) << " |";
    for (std::size_t c = 0; c < cols; ++c) {
      os << ' ' << cells[h][c];
      for (std::size_t k = cells[h][c].size(); k < w; ++k) os << ' ';
    }
    os << '\n';
  }
  return os.str();
}

}  // namespace partime
