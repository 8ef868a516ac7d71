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

#include <json.hpp>

#include "oracles.hpp"
#include "partime/engine.hpp"
#include "partime/generators.hpp"
#include "partime/partition.hpp"

using namespace partime;

namespace {

CostProfile costs(std::vector<double> c) {
  CostProfile p;
  p.fwd_cost = c;
  p.bwd_cost.assign(c.size(), 0.0);
  p.boundary_bytes.assign(c.size() - 1, 0);
  return p;
}

}  // namespace

TEST(Balance, WorkedExamples) {
  const auto p = costs({3, 1, 1, 3});
  const auto two = balance(p, 2, BalanceMode::kInference);
  EXPECT_EQ(two.ranges[0], std::make_pair(std::size_t{0}, std::size_t{2}));
  EXPECT_EQ(two.max_stage_cost(), 4.0);
  EXPECT_EQ(balance(p, 1, BalanceMode::kInference).max_stage_cost(), 8.0);
  const auto four = balance(p, 4, BalanceMode::kInference);
  EXPECT_EQ(four.max_stage_cost(), 3.0);
  EXPECT_EQ(format_layer_counts(four), "[1, 1, 1, 1]");
  EXPECT_THROW(balance(p, 5, BalanceMode::kInference), ContractViolation);
}

TEST(Balance, LeftmostTieBreak) {
  // Splits after 1 or after 2 both give max 2.
  const auto plan = balance(costs({1, 1, 1, 1}), 3, BalanceMode::kInference);
  EXPECT_EQ(format_layer_counts(plan), "[1, 1, 2]");
}

TEST(Balance, LearningModeAddsBackward) {
  CostProfile p = costs({1, 1, 1, 1});
  p.bwd_cost = {0, 0, 0, 9};
  EXPECT_EQ(format_layer_counts(balance(p, 2, BalanceMode::kInference)), "[2, 2]");
  EXPECT_EQ(format_layer_counts(balance(p, 2, BalanceMode::kLearning)), "[3, 1]");
}

TEST(Balance, TransferChargedDownstream) {
  CostProfile p = costs({2, 2, 2, 2});
  p.boundary_bytes = {0, 100, 0};
  p.transfer_cost_per_byte = 0.05;  // crossing after layer 1 costs 5
  const auto plan = balance(p, 2, BalanceMode::kInference);
  EXPECT_NE(plan.ranges[0].second, 2u);
  EXPECT_EQ(plan.max_stage_cost(), 6.0);
}

TEST(Balance, MatchesBruteForceAndIsMonotoneInD) {
  Rng rng(21);
  for (int c = 0; c < 200; ++c) {
    const std::size_t L = 1 + rng.below(10);
    std::vector<double> v;
    for (std::size_t i = 0; i < L; ++i) v.push_back(double(1 + rng.below(30)));
    double prev = INFINITY;
    for (std::size_t D = 1; D <= L; ++D) {
      const auto plan = balance(costs(v), D, BalanceMode::kInference);
      EXPECT_NO_THROW(validate_plan(plan, L));
      EXPECT_EQ(plan.max_stage_cost(), oracle::brute_force_minmax(v, D));
      EXPECT_LE(plan.max_stage_cost(), prev);
      prev = plan.max_stage_cost();
    }
  }
}

TEST(AssignWorkers, Examples) {
  CostProfile p = costs({1, 1, 1, 1});
  p.host_copy_cost = {1, 1, 1, 1};
  auto plan = balance(p, 4, BalanceMode::kInference);
  EXPECT_EQ(assign_workers(plan, p).worker_assignment, (std::vector<std::size_t>{0, 1, 2, 3}));
  p.host_copy_cost = {5, 1, 1, 5};
  const auto a = assign_workers(plan, p).worker_assignment;
  EXPECT_EQ(a.front(), 1u);
  EXPECT_EQ(a.back(), 2u);
  p.host_copy_cost = {1, 1};
  EXPECT_EQ(assign_workers(plan, p).worker_assignment, (std::vector<std::size_t>{0, 1, 0, 1}));
}

TEST(Profile, BoundaryBytes) {
  const auto m = pixelwise_model<float>(2, 3, 32, 3, 0);
  const auto specs = layer_specs(m);
  const auto shapes = infer_shapes(m);
  EXPECT_EQ(boundary_payload_bytes(specs, shapes, 0, 1, sizeof(float)), 3u * 32 * 32 * 4);
}

TEST(Profile, SkipSpanAddsBytesAndMatchesPayload) {
  const auto m = build_model<double>({LayerSpec::dense(4, 6), LayerSpec::tanh(), LayerSpec::dense(6, 6),
                                      LayerSpec::residual_add(0), LayerSpec::dense(6, 2)},
                                     {4}, LossKind::kMse, 3);
  const auto specs = layer_specs(m);
  const auto shapes = infer_shapes(m);
  // After layer 1 the skip from layer 0 is in flight: 6 + 6 values.
  EXPECT_EQ(boundary_payload_bytes(specs, shapes, 1, 2, 8), 2u * 12 * 8);
  EXPECT_EQ(boundary_payload_bytes(specs, shapes, 3, 2, 8), 2u * 6 * 8);
  Rng rng(1);
  const auto x = random_input(m, 2, rng), y = random_target(m, 2, rng);
  Pipeline<double> p(m, plan_from_counts({2, 3}), {}, x, y);
  EXPECT_EQ(p.boundary_payload_bytes(0), boundary_payload_bytes(specs, shapes, 1, 2, 8));
}

TEST(Profile, MeasuresAndSerialises) {
  const auto m = pixelwise_model<float>(3, 2, 16, 4, 0);
  Rng rng(2);
  const auto x = random_input(m, 1, rng);
  const auto a = profile_costs(m, x, 3, 1, 2);
  const auto b = profile_costs(m, x, 3, 1, 2);
  EXPECT_EQ(a.fwd_cost.size(), m.layers.size());
  EXPECT_EQ(a.boundary_bytes.size(), m.layers.size() - 1);
  EXPECT_EQ(a.host_copy_cost.size(), 2u);
  double ta = 0, tb = 0;
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    ta += a.fwd_cost[i] + a.bwd_cost[i];
    tb += b.fwd_cost[i] + b.bwd_cost[i];
  }
  EXPECT_GT(ta, 0);
  EXPECT_LT(std::max(ta, tb) / std::min(ta, tb), 3.0);
  const auto back = cost_profile_from_json(nlohmann::json::parse(to_json(a).dump()));
  EXPECT_EQ(back.fwd_cost, a.fwd_cost);
  EXPECT_EQ(back.boundary_bytes, a.boundary_bytes);
  EXPECT_THROW(profile_costs(m, x, 2, 0), ContractViolation);
}
