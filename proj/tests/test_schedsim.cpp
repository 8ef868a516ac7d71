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


#include <gtest/gtest.h>

#include <algorithm>
#include <map>

#include "oracles.hpp"
#include "partime/schedsim.hpp"

using namespace partime;

namespace {

std::vector<TimelineEvent> at(const std::vector<TimelineEvent>& ev, std::int64_t slot, std::size_t stage) {
  std::vector<TimelineEvent> out;
  for (const auto& e : ev) {
    if (e.slot == slot && e.stage == stage) out.push_back(e);
  }
  return out;
}

}  // namespace

TEST(Schedsim, WorkedSlot) {
  const auto sim = simulate(SchedulePolicy::make(PolicyKind::kPartime, 3, 10));
  const auto ev = at(sim.events, 6, 0);
  ASSERT_EQ(ev.size(), 3u);
  EXPECT_EQ(ev[0].op, Op::kForward);
  EXPECT_EQ(ev[0].sample_id, 6);
  EXPECT_EQ(ev[1].op, Op::kBackward);
  EXPECT_EQ(ev[1].sample_id, 2);
  EXPECT_EQ(ev[2].op, Op::kUpdate);
  // Last stage: forward and backward of the same sample in one slot.
  const auto tail = at(sim.events, 6, 2);
  EXPECT_EQ(tail[0].sample_id, 4);
  EXPECT_EQ(tail[1].sample_id, 4);
}

TEST(Schedsim, PartimeMatchesHandSchedule) {
  for (std::size_t D = 1; D <= 6; ++D) {
    const auto sim = simulate(SchedulePolicy::make(PolicyKind::kPartime, D, 25));
    EXPECT_EQ(sim.events, oracle::partime_events(D, 25)) << "D=" << D;
    for (std::size_t h = 0; h < D; ++h) {
      EXPECT_EQ(sim.report.staleness[h], static_cast<std::int64_t>(2 * (D - 1 - h))) << "D=" << D << " h=" << h;
      EXPECT_EQ(sim.report.weight_versions[h], 1u);
      EXPECT_EQ(sim.report.activation_stash[h], 0u);
    }
    EXPECT_NEAR(sim.report.throughput, 1.0, 1e-12);
  }
}

TEST(Schedsim, AtMostOneEventPerSlotStageOp) {
  for (auto kind : {PolicyKind::kGpipe, PolicyKind::kPipedream, PolicyKind::kPipedream2bw, PolicyKind::kPartime}) {
    const auto sim = simulate(SchedulePolicy::make(kind, 4, 32, 4));
    std::map<std::tuple<std::int64_t, std::size_t, Op>, int> seen;
    for (const auto& e : sim.events) {
      if (e.op == Op::kUpdate || e.op == Op::kDummy) continue;
      EXPECT_EQ(++seen[std::make_tuple(e.slot, e.stage, e.op)], 1) << policy_name(kind) << " " << to_string(e);
    }
  }
}

TEST(Schedsim, Causality) {
  for (auto kind : {PolicyKind::kGpipe, PolicyKind::kPipedream, PolicyKind::kPipedream2bw, PolicyKind::kPartime}) {
    const auto sim = simulate(SchedulePolicy::make(kind, 3, 24, 3));
    std::map<std::pair<std::size_t, std::int64_t>, std::int64_t> fwd_end, bwd_end;
    for (const auto& e : sim.events) {
      if (e.op == Op::kForward) fwd_end[{e.stage, e.sample_id}] = e.slot + e.duration;
      if (e.op == Op::kBackward) bwd_end[{e.stage, e.sample_id}] = e.slot + e.duration;
    }
    for (const auto& e : sim.events) {
      if (e.op == Op::kForward && e.stage > 0) {
        ASSERT_TRUE(fwd_end.count(std::make_pair(e.stage - 1, e.sample_id)));
        // Lock-step schedules hand over between slots; tick schedules within.
        const std::int64_t ready = fwd_end[std::make_pair(e.stage - 1, e.sample_id)];
        EXPECT_LE(ready - (kind == PolicyKind::kPartime ? 1 : 0), e.slot);
      }
      if (e.op == Op::kBackward) {
        ASSERT_TRUE(fwd_end.count(std::make_pair(e.stage, e.sample_id)));
        const std::int64_t done = fwd_end[std::make_pair(e.stage, e.sample_id)];
        EXPECT_LE(done, e.slot + (kind == PolicyKind::kPartime ? 1 : 0));
        if (e.stage + 1 < 3) {
          ASSERT_TRUE(bwd_end.count(std::make_pair(e.stage + 1, e.sample_id)));
        }
      }
    }
  }
}

TEST(Schedsim, GpipeBubble) {
  const auto sim = simulate(SchedulePolicy::make(PolicyKind::kGpipe, 4, 4, 4));
  for (double f : sim.report.idle_fraction) EXPECT_NEAR(f, 3.0 / 7.0, 1e-12);
  EXPECT_EQ(sim.report.staleness, std::vector<std::int64_t>(4, 0));
}

TEST(Schedsim, BaselineFootprints) {
  const auto pd = simulate(SchedulePolicy::make(PolicyKind::kPipedream, 4, 40));
  EXPECT_EQ(pd.report.weight_versions.front(), 4u);
  EXPECT_EQ(pd.report.weight_versions.back(), 1u);
  EXPECT_EQ(pd.report.staleness.front(), 3);
  const auto bw = simulate(SchedulePolicy::make(PolicyKind::kPipedream2bw, 4, 40, 4));
  for (auto v : bw.report.weight_versions) EXPECT_LE(v, 2u);
  EXPECT_THROW(simulate(SchedulePolicy::make(PolicyKind::kPipedream2bw, 4, 40, 2)), ContractViolation);
  EXPECT_THROW(simulate(SchedulePolicy::make(PolicyKind::kPartime, 0, 40)), ContractViolation);
}

TEST(Schedsim, PolicyNames) {
  EXPECT_EQ(parse_policy("partime"), PolicyKind::kPartime);
  EXPECT_EQ(parse_policy("gpipe"), PolicyKind::kGpipe);
  EXPECT_THROW(parse_policy("zerobubble"), Error);
}

TEST(Timeline, Render) {
  const auto sim = simulate(SchedulePolicy::make(PolicyKind::kPartime, 2, 4));
  EXPECT_EQ(render_timeline(sim.events, 2, 0),
            "S1 | F0    F1    F2B0U F3B1U\n"
            "S2 | -     F0B0U F1B1U F2B2U\n");
}

TEST(Comparison, FourPolicies) {
  const auto rows = compare_policies(4, 64, 4);
  ASSERT_EQ(rows.size(), 4u);
  const std::string csv = format_comparison(rows);
  EXPECT_EQ(csv.substr(0, csv.find('\n')),
            "policy,stages,micro_batches,throughput,speedup,mean_idle,max_staleness,max_weight_versions,"
            "max_activation_stash");
  EXPECT_NEAR(rows.back().report.speedup, 4.0, 1e-9);
}
