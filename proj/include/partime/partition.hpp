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
#include <chrono>
#include <cstring>
#include <limits>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "partime/error.hpp"
#include "partime/model.hpp"
#include "partime/tensor.hpp"

namespace partime {

enum class BalanceMode { kInference, kLearning };

inline const char* balance_mode_name(BalanceMode m) { return m == BalanceMode::kInference ? "inference" : "learning"; }

inline BalanceMode parse_balance_mode(const std::string& s) {
  if (s == "inference") return BalanceMode::kInference;
  if (s == "learning") return BalanceMode::kLearning;
  throw ParseError("unknown mode '" + s + "' (expected inference or learning)");
}

// Residual sources whose tensors must ride along a stage boundary placed
// after layer `after`: produced strictly before `after` and consumed beyond
// it. The boundary's main activation is layer `after`'s own output.
inline std::vector<int> pass_through_sources(const std::vector<LayerSpec>& specs, std::size_t after) {
  std::set<int> out;
  for (std::size_t j = after + 1; j < specs.size(); ++j) {
    const LayerSpec& s = specs[j];
    if (s.kind == LayerKind::kResidualAdd && s.source >= 0 && static_cast<std::size_t>(s.source) < after) {
      out.insert(s.source);
    }
  }
  return {out.begin(), out.end()};
}

// Bytes crossing a boundary after layer `after`: main activation plus
// pass-through skip tensors.
inline std::size_t boundary_payload_bytes(const std::vector<LayerSpec>& specs, const std::vector<Shape>& shapes,
                                          std::size_t after, std::size_t batch, std::size_t scalar_bytes) {
  std::size_t n = shape_numel(shapes.at(after));
  for (int s : pass_through_sources(specs, after)) n += shape_numel(shapes.at(static_cast<std::size_t>(s)));
  return n * batch * scalar_bytes;
}

struct CostProfile {
  std::vector<double> fwd_cost;             // seconds, per layer
  std::vector<double> bwd_cost;             // seconds, per layer
  std::vector<std::size_t> boundary_bytes;  // [i]: boundary after layer i, i < L-1
  double transfer_cost_per_byte = 0.0;
  std::vector<double> host_copy_cost;       // seconds, per worker

  std::size_t layers() const { return fwd_cost.size(); }

  double layer_cost(std::size_t i, BalanceMode mode) const {
    return mode == BalanceMode::kInference ? fwd_cost[i] : fwd_cost[i] + bwd_cost[i];
  }
};

// Contiguous partition of layers into stages: stage h owns [begin, end).
struct StagePlan {
  std::vector<std::pair<std::size_t, std::size_t>> ranges;
  std::vector<std::size_t> worker_assignment;  // stage -> worker (0-based)
  std::vector<double> predicted_stage_cost;

  std::size_t stages() const { return ranges.size(); }

  std::vector<std::size_t> layer_counts() const {
    std::vector<std::size_t> out;
    for (const auto& [a, b] : ranges) out.push_back(b - a);
    return out;
  }

  double max_stage_cost() const {
    return predicted_stage_cost.empty() ? 0.0
                                        : *std::max_element(predicted_stage_cost.begin(), predicted_stage_cost.end());
  }
};

// "[8, 10, 12, 11]"
inline std::string format_layer_counts(const StagePlan& plan) {
  std::ostringstream os;
  os << '[';
  const auto counts = plan.layer_counts();
  for (std::size_t i = 0; i < counts.size(); ++i) os << (i ? ", " : "") << counts[i];
  os << ']';
  return os.str();
}

inline void validate_plan(const StagePlan& plan, std::size_t num_layers) {
  if (plan.ranges.empty()) throw ContractViolation("stage plan has no stages");
  if (plan.ranges.size() > num_layers) {
    throw ContractViolation("stage plan has " + std::to_string(plan.ranges.size()) + " stages for " +
                            std::to_string(num_layers) + " layers");
  }
  std::size_t expect = 0;
  for (std::size_t h = 0; h < plan.ranges.size(); ++h) {
    const auto [a, b] = plan.ranges[h];
    if (a != expect || b <= a) {
      throw ContractViolation("stage " + std::to_string(h) + " range [" + std::to_string(a) + "," +
                              std::to_string(b) + ") breaks contiguity");
    }
    expect = b;
  }
  if (expect != num_layers) throw ContractViolation("stage plan does not cover all layers");
}

inline StagePlan plan_from_counts(const std::vector<std::size_t>& counts) {
  StagePlan p;
  std::size_t a = 0;
  for (std::size_t c : counts) {
    p.ranges.emplace_back(a, a + c);
    p.worker_assignment.push_back(p.worker_assignment.size());
    a += c;
  }
  p.predicted_stage_cost.assign(counts.size(), 0.0);
  return p;
}

// Even split, remainder to the leading stages.
inline StagePlan uniform_plan(std::size_t num_layers, std::size_t stages) {
  if (stages == 0 || stages > num_layers) {
    throw ContractViolation("cannot split " + std::to_string(num_layers) + " layers into " + std::to_string(stages) +
                            " stages");
  }
  std::vector<std::size_t> counts(stages, num_layers / stages);
  for (std::size_t i = 0; i < num_layers % stages; ++i) ++counts[i];
  return plan_from_counts(counts);
}

namespace partition_detail {

// Cost of a stage owning [a, b); the inbound transfer is charged to it.
inline double segment_cost(const CostProfile& p, const std::vector<double>& prefix, std::size_t a, std::size_t b) {
  double c = prefix[b] - prefix[a];
  if (a > 0) c += static_cast<double>(p.boundary_bytes[a - 1]) * p.transfer_cost_per_byte;
  return c;
}

}  // namespace partition_detail

// Min-max contiguous partition into `stages` blocks by dynamic programming.
// Among optimal partitions the lexicographically smallest boundary sequence
// (leftmost boundaries) is returned.
inline StagePlan balance(const CostProfile& profile, std::size_t stages, BalanceMode mode) {
  const std::size_t L = profile.layers();
  if (stages == 0) throw ContractViolation("balance needs at least one stage");
  if (stages > L) {
    throw ContractViolation("cannot split " + std::to_string(L) + " layers into " + std::to_string(stages) +
                            " stages (D > L)");
  }
  if (profile.bwd_cost.size() != L || (L > 0 && profile.boundary_bytes.size() + 1 < L)) {
    throw ContractViolation("cost profile vectors have inconsistent lengths");
  }
  std::vector<double> prefix(L + 1, 0.0);
  for (std::size_t i = 0; i < L; ++i) prefix[i + 1] = prefix[i] + profile.layer_cost(i, mode);
  auto seg = [&](std::size_t a, std::size_t b) { return partition_detail::segment_cost(profile, prefix, a, b); };

  constexpr double kInf = std::numeric_limits<double>::infinity();
  // suffix[k][i]: best max-cost splitting layers [i, L) into k stages.
  std::vector<std::vector<double>> suffix(stages + 1, std::vector<double>(L + 1, kInf));
  for (std::size_t i = 0; i < L; ++i) suffix[1][i] = seg(i, L);
  for (std::size_t k = 2; k <= stages; ++k) {
    for (std::size_t i = 0; i + k <= L; ++i) {
      double best = kInf;
      for (std::size_t j = i + 1; j + (k - 1) <= L; ++j) best = std::min(best, std::max(seg(i, j), suffix[k - 1][j]));
      suffix[k][i] = best;
    }
  }
  const double optimum = suffix[stages][0];

  StagePlan plan;
  std::size_t start = 0;
  for (std::size_t h = 1; h < stages; ++h) {
    const std::size_t remaining = stages - h;
    std::size_t chosen = L;
    for (std::size_t j = start + 1; j + remaining <= L; ++j) {
      if (seg(start, j) <= optimum && suffix[remaining][j] <= optimum) {
        chosen = j;
        break;
      }
    }
    plan.ranges.emplace_back(start, chosen);
    start = chosen;
  }
  plan.ranges.emplace_back(start, L);
  for (const auto& [a, b] : plan.ranges) plan.predicted_stage_cost.push_back(seg(a, b));
  for (std::size_t h = 0; h < stages; ++h) plan.worker_assignment.push_back(h);
  return plan;
}

// Puts the first and last stages on the workers with the cheapest host
// copies; the remaining stages go round-robin. Worker count defaults to the
// profile's host_copy_cost length.
inline StagePlan assign_workers(StagePlan plan, const CostProfile& profile) {
  const std::size_t D = plan.stages();
  const std::size_t W = profile.host_copy_cost.size();
  plan.worker_assignment.assign(D, 0);
  if (D == 0 || W == 0) return plan;
  std::vector<std::size_t> rr(D);
  for (std::size_t h = 0; h < D; ++h) rr[h] = h % W;
  const auto& cost = profile.host_copy_cost;

  std::size_t first = 0;
  for (std::size_t w = 1; w < W; ++w) {
    if (cost[w] < cost[first]) first = w;
  }
  plan.worker_assignment[0] = first;
  if (D == 1) return plan;

  std::size_t last = rr[D - 1];
  if (W > 1) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t w = 0; w < W; ++w) {
      if (w != first) best = std::min(best, cost[w]);
    }
    if (last == first || cost[last] > best) {
      for (std::size_t w = 0; w < W; ++w) {
        if (w != first && cost[w] == best) {
          last = w;
          break;
        }
      }
    }
  }
  plan.worker_assignment[D - 1] = last;

  if (W >= D) {
    std::vector<std::size_t> pool;
    for (std::size_t w = 0; w < W; ++w) {
      if (w != first && w != last) pool.push_back(w);
    }
    for (std::size_t h = 1; h + 1 < D; ++h) plan.worker_assignment[h] = pool[(h - 1) % pool.size()];
  } else {
    for (std::size_t h = 1; h + 1 < D; ++h) plan.worker_assignment[h] = rr[h];
  }
  return plan;
}

namespace partition_detail {

inline double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

template <typename F>
double median_time(std::size_t iters, std::size_t warmup, F&& fn) {
  using clock = std::chrono::steady_clock;
  for (std::size_t i = 0; i < warmup; ++i) fn();
  std::vector<double> t;
  t.reserve(iters);
  for (std::size_t i = 0; i < iters; ++i) {
    const auto t0 = clock::now();
    fn();
    t.push_back(std::chrono::duration<double>(clock::now() - t0).count());
  }
  return median(t);
}

}  // namespace partition_detail

// Times every layer's forward and backward on `sample_input` (median over
// `iters` runs after `warmup` discarded runs) and measures copy costs.
template <typename T>
CostProfile profile_costs(const Model<T>& model, const Tensor<T>& sample_input, std::size_t iters,
                          std::size_t warmup, std::size_t workers = 1) {
  if (iters < 3) throw ContractViolation("profile_costs needs iters >= 3");
  const std::size_t L = model.layers.size();
  const ForwardTrace<T> trace = sequential_forward(model, sample_input);
  const auto shapes = infer_shapes(model);
  const auto specs = layer_specs(model);
  const std::size_t batch = sample_input.dim(0);

  CostProfile p;
  p.fwd_cost.resize(L);
  p.bwd_cost.resize(L);
  for (std::size_t i = 0; i < L; ++i) {
    const Tensor<T>& in = i == 0 ? sample_input : trace.outputs[i - 1];
    SkipInputs<T> skips;
    if (specs[i].kind == LayerKind::kResidualAdd) skips[specs[i].source] = &trace.outputs[specs[i].source];
    Tensor<T> upstream = Tensor<T>::filled(trace.outputs[i].shape(), T(1));
    p.fwd_cost[i] = partition_detail::median_time(iters, warmup, [&] {
      auto out = layer_forward(model.layers[i], in, skips, i);
      asm volatile("" : : "r"(out.data()) : "memory");
    });
    p.bwd_cost[i] = partition_detail::median_time(iters, warmup, [&] {
      auto g = layer_backward(model.layers[i], in, upstream, i);
      asm volatile("" : : "r"(g.input_grad.data()) : "memory");
    });
  }
  bool any_positive = false;
  for (std::size_t i = 0; i < L; ++i) any_positive |= p.fwd_cost[i] > 0 || p.bwd_cost[i] > 0;
  if (L > 0 && !any_positive) {
    throw Error("all layer timings are zero: clock resolution insufficient, use a larger input");
  }

  for (std::size_t i = 0; i + 1 < L; ++i) {
    p.boundary_bytes.push_back(boundary_payload_bytes(specs, shapes, i, batch, sizeof(T)));
  }

  // Copy bandwidth between two buffers on the calling thread.
  const std::size_t probe = std::max<std::size_t>(std::size_t{1} << 20, sample_input.bytes());
  std::vector<char> src(probe, 1), dst(probe, 0);
  const double copy_s = partition_detail::median_time(iters, warmup, [&] {
    std::memcpy(dst.data(), src.data(), probe);
    asm volatile("" : : "r"(dst.data()) : "memory");
  });
  p.transfer_cost_per_byte = copy_s / static_cast<double>(probe);

  // Host input copy measured from each worker thread in turn.
  p.host_copy_cost.resize(std::max<std::size_t>(workers, 1));
  for (std::size_t w = 0; w < p.host_copy_cost.size(); ++w) {
    double t = 0.0;
    std::thread th([&] {
      Tensor<T> buf(sample_input.shape());
      t = partition_detail::median_time(iters, warmup, [&] {
        buf.assign(sample_input);
        asm volatile("" : : "r"(buf.data()) : "memory");
      });
    });
    th.join();
    p.host_copy_cost[w] = t;
  }
  return p;
}

inline nlohmann::json to_json(const CostProfile& p) {
  return nlohmann::json{{"fwd_cost", p.fwd_cost},
                        {"bwd_cost", p.bwd_cost},
                        {"boundary_bytes", p.boundary_bytes},
                        {"transfer_cost_per_byte", p.transfer_cost_per_byte},
                        {"host_copy_cost", p.host_copy_cost}};
}

inline CostProfile cost_profile_from_json(const nlohmann::json& j) {
  CostProfile p;
  try {
    p.fwd_cost = j.at("fwd_cost").get<std::vector<double>>();
    p.bwd_cost = j.at("bwd_cost").get<std::vector<double>>();
    p.boundary_bytes = j.at("boundary_bytes").get<std::vector<std::size_t>>();
    p.transfer_cost_per_byte = j.at("transfer_cost_per_byte").get<double>();
    p.host_copy_cost = j.at("host_copy_cost").get<std::vector<double>>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("cost profile: ") + e.what());
  }
  for (const auto* v : {&p.fwd_cost, &p.bwd_cost, &p.host_copy_cost}) {
    for (double x : *v) {
      if (!(x >= 0.0)) throw ParseError("cost profile: costs must be non-negative");
    }
  }
  return p;
}

inline nlohmann::json to_json(const StagePlan& plan) {
  nlohmann::json ranges = nlohmann::json::array();
  for (const auto& [a, b] : plan.ranges) ranges.push_back({a, b});
  return nlohmann::json{{"layer_counts", plan.layer_counts()},
                        {"ranges", ranges},
                        {"worker_assignment", plan.worker_assignment},
                        {"predicted_stage_cost", plan.predicted_stage_cost}};
}

}  // namespace partime
