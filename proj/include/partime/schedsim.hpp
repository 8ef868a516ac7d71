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

// Discrete-time simulator for pipeline schedules under an idealised cost
// model: forward and backward of stage h take fwd_cost[h] and bwd_cost[h]
// ticks, updates take update_cost[h] ticks (0 by default), transfers are free.
//
// Reported quantities use a common slot: the ticks one stage needs to fully
// process one sample, max_h(fwd + bwd + update). Throughput is in samples per
// slot and the sequential baseline processes one sample per sum_h(...) ticks.

#include <algorithm>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "partime/error.hpp"
#include "partime/timeline.hpp"

namespace partime {

enum class PolicyKind { kGpipe, kPipedream, kPipedream2bw, kPartime };

inline const char* policy_name(PolicyKind k) {
  switch (k) {
    case PolicyKind::kGpipe: return "gpipe";
    case PolicyKind::kPipedream: return "pipedream";
    case PolicyKind::kPipedream2bw: return "pipedream2bw";
    case PolicyKind::kPartime: return "partime";
  }
  return "?";
}

inline PolicyKind parse_policy(const std::string& s) {
  for (PolicyKind k : {PolicyKind::kGpipe, PolicyKind::kPipedream, PolicyKind::kPipedream2bw, PolicyKind::kPartime}) {
    if (s == policy_name(k)) return k;
  }
  if (s == "2bw") return PolicyKind::kPipedream2bw;
  throw ParseError("unknown policy '" + s + "' (expected gpipe, pipedream, pipedream2bw or partime)");
}

struct SchedulePolicy {
  PolicyKind kind = PolicyKind::kPartime;
  std::size_t stages = 1;
  std::size_t micro_batches = 1;  // m: mini-batch size for gpipe / update period for 2bw
  std::size_t steps = 1;          // partime: global steps; others: micro-batches pushed through
  std::vector<std::int64_t> fwd_cost;     // per stage, default 1
  std::vector<std::int64_t> bwd_cost;     // per stage, default 1
  std::vector<std::int64_t> update_cost;  // per stage, default 0

  static SchedulePolicy make(PolicyKind kind, std::size_t stages, std::size_t steps, std::size_t micro_batches = 1) {
    SchedulePolicy p;
    p.kind = kind;
    p.stages = stages;
    p.steps = steps;
    p.micro_batches = micro_batches;
    return p;
  }
};

struct ScheduleReport {
  PolicyKind kind = PolicyKind::kPartime;
  std::size_t stages = 0;
  std::int64_t slot_ticks = 1;
  std::int64_t makespan_ticks = 0;
  std::size_t completed = 0;              // samples whose backward reached stage 1
  double throughput = 0.0;                // samples per slot, steady state
  double sequential_throughput = 0.0;     // samples per slot, one worker
  double speedup = 0.0;
  std::vector<double> idle_fraction;      // per stage, over the whole run; dummy work counts as busy
  std::vector<std::int64_t> staleness;    // per stage: weight updates between a sample's F and its B
  std::vector<double> fb_gap_slots;       // per stage: max slots from F start to B start
  std::vector<std::size_t> weight_versions;   // per stage: max weight versions held at once
  std::vector<std::size_t> activation_stash;  // per stage: max activations kept for a later backward
};

namespace sim_detail {

inline void normalise(SchedulePolicy& p) {
  if (p.stages == 0) throw ContractViolation("schedule needs at least one stage");
  if (p.micro_batches == 0) throw ContractViolation("micro_batches must be >= 1");
  if (p.kind == PolicyKind::kPipedream2bw && p.micro_batches < p.stages) {
    throw ContractViolation("pipedream2bw needs micro_batches >= stages (m >= D)");
  }
  if (p.fwd_cost.empty()) p.fwd_cost.assign(p.stages, 1);
  if (p.bwd_cost.empty()) p.bwd_cost.assign(p.stages, 1);
  if (p.update_cost.empty()) p.update_cost.assign(p.stages, 0);
  for (const auto* v : {&p.fwd_cost, &p.bwd_cost, &p.update_cost}) {
    if (v->size() != p.stages) throw ContractViolation("per-stage cost vectors must have one entry per stage");
    for (auto c : *v) {
      if (c < 0) throw ContractViolation("costs must be non-negative");
    }
  }
  for (std::size_t h = 0; h < p.stages; ++h) {
    if (p.fwd_cost[h] < 1 || p.bwd_cost[h] < 1) throw ContractViolation("forward/backward costs must be >= 1 tick");
  }
}

inline void fill_common(const SchedulePolicy& p, ScheduleReport& r) {
  r.kind = p.kind;
  r.stages = p.stages;
  r.slot_ticks = 0;
  std::int64_t total = 0;
  for (std::size_t h = 0; h < p.stages; ++h) {
    const std::int64_t c = p.fwd_cost[h] + p.bwd_cost[h] + p.update_cost[h];
    r.slot_ticks = std::max(r.slot_ticks, c);
    total += c;
  }
  r.sequential_throughput = static_cast<double>(r.slot_ticks) / static_cast<double>(total);
}

// Lock-step schedule: at step t, stage h (0-based) forwards sample t-h and
// backwards sample t-(2D-h-2), then updates when its backward is real.
inline std::vector<TimelineEvent> partime(const SchedulePolicy& p, ScheduleReport& r) {
  const auto D = static_cast<std::int64_t>(p.stages);
  const auto n = static_cast<std::int64_t>(p.steps);
  std::vector<TimelineEvent> ev;
  ev.reserve(static_cast<std::size_t>(n * D * 3));
  std::vector<std::int64_t> updates(p.stages, 0);
  r.staleness.assign(p.stages, 0);
  r.fb_gap_slots.assign(p.stages, 0.0);
  for (std::int64_t t = 0; t < n; ++t) {
    for (std::int64_t h = 0; h < D; ++h) {
      const auto hs = static_cast<std::size_t>(h);
      const std::int64_t f = t - h;
      const std::int64_t b = t - (2 * D - h - 2);
      ev.push_back({t, hs, f >= 0 ? Op::kForward : Op::kDummy, f >= 0 ? f : -1, 1});
      ev.push_back({t, hs, b >= 0 ? Op::kBackward : Op::kDummy, b >= 0 ? b : -1, 1});
      if (b >= 0) {
        // Weights used by F(b) were those after `updates` at step b+h; every
        // step since then (including that one) has applied an update.
        r.staleness[hs] = std::max(r.staleness[hs], t - (b + h));
        r.fb_gap_slots[hs] = std::max(r.fb_gap_slots[hs], static_cast<double>(t - (b + h)));
        ev.push_back({t, hs, Op::kUpdate, b, 0});
        ++updates[hs];
      }
    }
  }
  r.makespan_ticks = n * r.slot_ticks;
  // Completion = backward reaching the first stage; rate measured over the
  // second half of the completions, in steps (one step is one slot).
  std::vector<std::int64_t> done;
  for (const auto& e : ev) {
    if (e.stage == 0 && e.op == Op::kBackward) done.push_back(e.slot + 1);
  }
  r.completed = done.size();
  r.throughput = 0.0;
  if (done.size() >= 2) {
    const std::size_t k1 = (done.size() - 1) / 2, k2 = done.size() - 1;
    if (k2 > k1) r.throughput = static_cast<double>(k2 - k1) / static_cast<double>(done[k2] - done[k1]);
  }
  r.idle_fraction.assign(p.stages, 0.0);
  for (std::size_t h = 0; h < p.stages; ++h) {
    const std::int64_t busy = p.fwd_cost[h] + p.bwd_cost[h] + p.update_cost[h];
    r.idle_fraction[h] = 1.0 - static_cast<double>(busy) / static_cast<double>(r.slot_ticks);
  }
  r.weight_versions.assign(p.stages, 1);
  r.activation_stash.assign(p.stages, 0);
  return ev;
}

struct MicroState {
  std::vector<std::int64_t> f_end, b_start, b_end;  // per micro-batch, -1 until done
  std::vector<std::int64_t> f_start, f_version;
};

// Shared bookkeeping for micro-batch schedules (ticks).
class TickSim {
 public:
  TickSim(const SchedulePolicy& p, ScheduleReport& r) : p_(p), r_(r), n_(p.steps), D_(p.stages) {
    st_.assign(D_, MicroState{});
    for (auto& s : st_) {
      s.f_end.assign(n_, -1);
      s.b_start.assign(n_, -1);
      s.b_end.assign(n_, -1);
      s.f_start.assign(n_, -1);
      s.f_version.assign(n_, -1);
    }
    busy_until_.assign(D_, 0);
    busy_ticks_.assign(D_, 0);
    version_.assign(D_, 0);
    max_live_.assign(D_, 1);
    max_inflight_.assign(D_, 0);
    r_.staleness.assign(D_, 0);
    r_.fb_gap_slots.assign(D_, 0.0);
  }

  void forward(std::size_t h, std::size_t j, std::int64_t at, std::int64_t version) {
    auto& s = st_[h];
    s.f_start[j] = at;
    s.f_end[j] = at + p_.fwd_cost[h];
    s.f_version[j] = version;
    busy_until_[h] = s.f_end[j];
    busy_ticks_[h] += p_.fwd_cost[h];
    events_.push_back({at, h, Op::kForward, static_cast<std::int64_t>(j), p_.fwd_cost[h]});
    inflight_[h].insert(j);
    note_memory(h);
  }

  void backward(std::size_t h, std::size_t j, std::int64_t at) {
    auto& s = st_[h];
    s.b_start[j] = at;
    s.b_end[j] = at + p_.bwd_cost[h];
    busy_until_[h] = s.b_end[j];
    busy_ticks_[h] += p_.bwd_cost[h];
    events_.push_back({at, h, Op::kBackward, static_cast<std::int64_t>(j), p_.bwd_cost[h]});
    r_.staleness[h] = std::max(r_.staleness[h], version_[h] - s.f_version[j]);
    r_.fb_gap_slots[h] = std::max(r_.fb_gap_slots[h], static_cast<double>(at - s.f_start[j]) /
                                                          static_cast<double>(r_.slot_ticks));
    inflight_[h].erase(j);
  }

  // Emits an update and installs a new weight version on stage h.
  void update(std::size_t h, std::int64_t at, std::int64_t sample) {
    const std::int64_t dur = p_.update_cost[h];
    // zero-length updates are drawn in the slot of the op they follow
    events_.push_back({dur == 0 ? std::max<std::int64_t>(at - 1, 0) : at, h, Op::kUpdate, sample, dur});
    busy_until_[h] = std::max(busy_until_[h], at + dur);
    busy_ticks_[h] += dur;
    ++version_[h];
    note_memory(h);
  }

  void note_memory(std::size_t h) {
    std::set<std::int64_t> live{version_[h]};
    for (std::size_t j : inflight_[h]) live.insert(st_[h].f_version[j]);
    max_live_[h] = std::max(max_live_[h], live.size());
    max_inflight_[h] = std::max(max_inflight_[h], inflight_[h].size());
  }

  void finish() {
    std::int64_t makespan = 0;
    for (std::size_t h = 0; h < D_; ++h) makespan = std::max(makespan, busy_until_[h]);
    r_.makespan_ticks = makespan;
    r_.idle_fraction.assign(D_, 0.0);
    for (std::size_t h = 0; h < D_; ++h) {
      r_.idle_fraction[h] =
          makespan == 0 ? 0.0 : 1.0 - static_cast<double>(busy_ticks_[h]) / static_cast<double>(makespan);
    }
    r_.weight_versions = max_live_;
    r_.activation_stash = max_inflight_;
    std::sort(events_.begin(), events_.end(), [](const TimelineEvent& a, const TimelineEvent& b) {
      if (a.slot != b.slot) return a.slot < b.slot;
      if (a.stage != b.stage) return a.stage < b.stage;
      return static_cast<int>(a.op) < static_cast<int>(b.op);
    });
    r_.completed = 0;
    for (std::size_t j = 0; j < n_; ++j) r_.completed += st_[0].b_end[j] >= 0;
  }

  // Steady-state rate from completion times of period boundaries in the
  // second half of the run.
  void throughput_from(const std::vector<std::int64_t>& period_done, std::size_t per_period) {
    const std::size_t k = period_done.size();
    if (k < 2) {
      r_.throughput = 0.0;
      return;
    }
    const std::size_t k1 = (k - 1) / 2, k2 = k - 1;
    if (k1 == k2) {
      r_.throughput = 0.0;
      return;
    }
    const double dt = static_cast<double>(period_done[k2] - period_done[k1]);
    r_.throughput = static_cast<double>((k2 - k1) * per_period) * static_cast<double>(r_.slot_ticks) / dt;
  }

  const SchedulePolicy& p_;
  ScheduleReport& r_;
  std::size_t n_, D_;
  std::vector<MicroState> st_;
  std::vector<std::int64_t> busy_until_, busy_ticks_, version_;
  std::vector<std::size_t> max_live_, max_inflight_;
  std::map<std::size_t, std::set<std::size_t>> inflight_;
  std::vector<TimelineEvent> events_;
};

// Forward all m micro-batches, backward them in reverse order, then flush and
// apply one synchronised update.
inline std::vector<TimelineEvent> gpipe(const SchedulePolicy& p, ScheduleReport& r) {
  const std::size_t D = p.stages, m = p.micro_batches;
  if (p.steps % m != 0) throw ContractViolation("gpipe needs steps to be a multiple of micro_batches");
  TickSim sim(p, r);
  std::vector<std::int64_t> batch_done;
  std::int64_t batch_start = 0;
  for (std::size_t first = 0; first < p.steps; first += m) {
    for (std::size_t j = first; j < first + m; ++j) {
      for (std::size_t h = 0; h < D; ++h) {
        std::int64_t at = std::max(sim.busy_until_[h], batch_start);
        if (h > 0) at = std::max(at, sim.st_[h - 1].f_end[j]);
        sim.forward(h, j, at, sim.version_[h]);
      }
    }
    for (std::size_t jj = first + m; jj-- > first;) {
      for (std::size_t h = D; h-- > 0;) {
        std::int64_t at = sim.busy_until_[h];
        if (h + 1 < D) at = std::max(at, sim.st_[h + 1].b_end[jj]);
        sim.backward(h, jj, at);
      }
    }
    std::int64_t flush = 0;
    for (std::size_t h = 0; h < D; ++h) flush = std::max(flush, sim.busy_until_[h]);
    std::int64_t end = flush;
    for (std::size_t h = 0; h < D; ++h) {
      sim.busy_until_[h] = flush;
      sim.update(h, flush, static_cast<std::int64_t>(first + m - 1));
      end = std::max(end, sim.busy_until_[h]);
    }
    batch_done.push_back(end);
    batch_start = end;
  }
  sim.finish();
  sim.throughput_from(batch_done, m);
  return sim.events_;
}

// 1F1B with at most D-h micro-batches in flight on stage h (0-based).
// pipedream: every backward is followed by an update and forwards stash the
// version they used. 2bw: a new version appears once all m micro-batches of
// a batch have been backwarded; batch b runs on version max(b-1, 0).
inline std::vector<TimelineEvent> one_f_one_b(const SchedulePolicy& p, ScheduleReport& r, bool two_bw) {
  const std::size_t D = p.stages, n = p.steps, m = p.micro_batches;
  if (two_bw && n % m != 0) throw ContractViolation("pipedream2bw needs steps to be a multiple of micro_batches");
  TickSim sim(p, r);
  std::vector<std::size_t> next_f(D, 0), next_b(D, 0);
  std::vector<std::size_t> batch_backwards(D, 0);
  std::vector<std::int64_t> done_times;
  auto batch_version = [&](std::size_t j) -> std::int64_t {
    const std::int64_t b = static_cast<std::int64_t>(j / m);
    return std::max<std::int64_t>(b - 1, 0);
  };
  const std::int64_t guard = static_cast<std::int64_t>((n + D) * 4 + 16) * sim.r_.slot_ticks * 4;
  for (std::int64_t tick = 0; next_b[0] < n; ++tick) {
    if (tick > guard) throw Error("1F1B simulation failed to make progress");
    for (std::size_t h = 0; h < D; ++h) {
      if (sim.busy_until_[h] > tick) continue;
      const std::size_t cap = D - h;
      const std::size_t jb = next_b[h];
      bool b_ready = jb < n && jb < next_f[h];
      if (b_ready) {
        b_ready = h + 1 < D ? (sim.st_[h + 1].b_end[jb] >= 0 && sim.st_[h + 1].b_end[jb] <= tick)
                            : (sim.st_[h].f_end[jb] >= 0 && sim.st_[h].f_end[jb] <= tick);
      }
      const std::size_t jf = next_f[h];
      bool f_ready = jf < n && (jf - next_b[h]) < cap;
      if (f_ready && h > 0) f_ready = sim.st_[h - 1].f_end[jf] >= 0 && sim.st_[h - 1].f_end[jf] <= tick;
      if (f_ready && two_bw) f_ready = sim.version_[h] >= batch_version(jf);
      if (b_ready) {
        sim.backward(h, jb, tick);
        ++next_b[h];
        const std::int64_t end = sim.busy_until_[h];
        if (!two_bw) {
          sim.update(h, end, static_cast<std::int64_t>(jb));
        } else if (++batch_backwards[h] == m) {
          batch_backwards[h] = 0;
          sim.update(h, end, static_cast<std::int64_t>(jb));
        }
        if (h == 0) done_times.push_back(sim.busy_until_[0]);
      } else if (f_ready) {
        const std::int64_t v = two_bw ? batch_version(jf) : sim.version_[h];
        sim.forward(h, jf, tick, v);
        ++next_f[h];
      }
    }
  }
  sim.finish();
  sim.throughput_from(done_times, 1);
  return sim.events_;
}

}  // namespace sim_detail

struct Simulation {
  std::vector<TimelineEvent> events;
  ScheduleReport report;
};

inline Simulation simulate(SchedulePolicy policy) {
  sim_detail::normalise(policy);
  Simulation s;
  sim_detail::fill_common(policy, s.report);
  switch (policy.kind) {
    case PolicyKind::kPartime: s.events = sim_detail::partime(policy, s.report); break;
    case PolicyKind::kGpipe: s.events = sim_detail::gpipe(policy, s.report); break;
    case PolicyKind::kPipedream: s.events = sim_detail::one_f_one_b(policy, s.report, false); break;
    case PolicyKind::kPipedream2bw: s.events = sim_detail::one_f_one_b(policy, s.report, true); break;
  }
  s.report.speedup = s.report.sequential_throughput > 0 ? s.report.throughput / s.report.sequential_throughput : 0.0;
  return s;
}

inline nlohmann::json to_json(const ScheduleReport& r) {
  return nlohmann::json{{"policy", policy_name(r.kind)},
                        {"stages", r.stages},
                        {"slot_ticks", r.slot_ticks},
                        {"makespan_ticks", r.makespan_ticks},
                        {"completed", r.completed},
                        {"throughput", r.throughput},
                        {"sequential_throughput", r.sequential_throughput},
                        {"speedup", r.speedup},
                        {"idle_fraction", r.idle_fraction},
                        {"staleness", r.staleness},
                        {"fb_gap_slots", r.fb_gap_slots},
                        {"weight_versions", r.weight_versions},
                        {"activation_stash", r.activation_stash}};
}

struct PolicyRow {
  SchedulePolicy policy;
  ScheduleReport report;
};

inline std::vector<PolicyRow> compare_policies(const std::vector<SchedulePolicy>& policies) {
  std::vector<PolicyRow> rows;
  for (const auto& p : policies) rows.push_back({p, simulate(p).report});
  return rows;
}

// Builds the standard four-policy comparison for D stages and n samples.
inline std::vector<PolicyRow> compare_policies(std::size_t stages, std::size_t n, std::size_t micro_batches) {
  const std::size_t m = std::max(micro_batches, stages);
  const std::size_t n_batched = std::max(m, n / m * m);
  return compare_policies({SchedulePolicy::make(PolicyKind::kGpipe, stages, n_batched, micro_batches),
                           SchedulePolicy::make(PolicyKind::kPipedream, stages, n, 1),
                           SchedulePolicy::make(PolicyKind::kPipedream2bw, stages, n_batched, m),
                           SchedulePolicy::make(PolicyKind::kPartime, stages, n, 1)});
}

inline std::string format_comparison(const std::vector<PolicyRow>& rows) {
  auto mean = [](const auto& v) {
    double s = 0;
    for (auto x : v) s += static_cast<double>(x);
    return v.empty() ? 0.0 : s / static_cast<double>(v.size());
  };
  auto max_of = [](const auto& v) {
    double s = 0;
    for (auto x : v) s = std::max(s, static_cast<double>(x));
    return s;
  };
  std::ostringstream os;
  os << "policy,stages,micro_batches,throughput,speedup,mean_idle,max_staleness,max_weight_versions,max_activation_stash\n";
  for (const auto& row : rows) {
    const auto& r = row.report;
    os << policy_name(r.kind) << ',' << r.stages << ',' << row.policy.micro_batches << ',' << r.throughput << ','
       << r.speedup << ',' << mean(r.idle_fraction) << ',' << max_of(r.staleness) << ','
       << max_of(r.weight_versions) << ',' << max_of(r.activation_stash) << '\n';
  }
  return os.str();
}

}  // namespace partime
