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
#include <cstdint>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "partime/engine.hpp"
#include "partime/error.hpp"
#include "partime/generators.hpp"
#include "partime/model.hpp"
#include "partime/model_io.hpp"
#include "partime/partition.hpp"
#include "partime/rng.hpp"
#include "partime/schedsim.hpp"
#include "partime/tensor.hpp"

namespace partime {

struct BenchConfig {
  std::string model_path;  // empty: use the built-in generator
  std::string generator = "pixelwise";
  std::size_t n_layers = 12;
  std::size_t channels = 3;
  std::size_t resolution = 32;
  std::size_t filters = 16;
  std::size_t stages = 2;
  BalanceMode mode = BalanceMode::kLearning;
  std::size_t steps = 40;
  NumericMode numeric = NumericMode::kF32;
  std::uint64_t seed = 0;
  std::size_t repeat = 3;
  std::size_t batch = 1;
  double lr = 1e-4;
  std::size_t profile_iters = 3;
  bool ideal = false;
};

struct SpeedupRow {
  BenchConfig config;
  std::string plan;  // layer counts per stage
  double seq_seconds = 0.0;
  double pipe_seconds = 0.0;
  double speedup = 0.0;
  std::size_t valid_outputs = 0;
  double seq_min = 0.0, seq_max = 0.0;
  double pipe_min = 0.0, pipe_max = 0.0;
};

inline void validate_bench(const BenchConfig& c) {
  if (c.stages < 1) throw ContractViolation("bench needs stages >= 1");
  if (c.steps < c.stages) {
    throw ContractViolation("bench steps (" + std::to_string(c.steps) + ") must be >= stages (" +
                            std::to_string(c.stages) + ")");
  }
  if (c.repeat < 1) throw ContractViolation("bench repeat must be >= 1");
}

template <typename T>
Model<T> bench_model(const BenchConfig& c) {
  if (!c.model_path.empty()) return model_load<T>(c.model_path);
  if (c.generator == "pixelwise") return pixelwise_model<T>(c.n_layers, c.channels, c.resolution, c.filters, c.seed);
  if (c.generator == "classifier") return classifier_model<T>(c.n_layers, c.resolution, c.filters, c.seed);
  throw ParseError("unknown generator '" + c.generator + "' (expected pixelwise or classifier)");
}

namespace bench_detail {

struct Stats {
  double median = 0, min = 0, max = 0;
};

inline Stats stats(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  Stats s;
  s.min = v.front();
  s.max = v.back();
  s.median = v.size() % 2 ? v[v.size() / 2] : 0.5 * (v[v.size() / 2 - 1] + v[v.size() / 2]);
  return s;
}

}  // namespace bench_detail

// Times `steps` sequential steps against `steps` pipeline steps on the same
// model and input stream. Medians over `repeat` runs.
template <typename T>
SpeedupRow run_bench_typed(const BenchConfig& cfg) {
  validate_bench(cfg);
  SpeedupRow row;
  row.config = cfg;
  const Model<T> model = bench_model<T>(cfg);
  if (cfg.stages > model.layers.size()) {
    throw ContractViolation("model has " + std::to_string(model.layers.size()) + " layers, fewer than " +
                            std::to_string(cfg.stages) + " stages");
  }

  if (cfg.ideal) {
    const auto sim = simulate(SchedulePolicy::make(PolicyKind::kPartime, cfg.stages, cfg.steps));
    row.plan = format_layer_counts(uniform_plan(model.layers.size(), cfg.stages));
    row.seq_seconds = row.seq_min = row.seq_max = 1.0 / sim.report.sequential_throughput;
    row.pipe_seconds = row.pipe_min = row.pipe_max = 1.0 / sim.report.throughput;
    row.speedup = sim.report.speedup;
    row.valid_outputs = cfg.steps - (cfg.stages - 1);
    return row;
  }

  Rng rng(mix_seed(cfg.seed, 0xbe7c4));
  std::vector<Tensor<T>> xs, ys;
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    xs.push_back(random_input(model, cfg.batch, rng));
    ys.push_back(random_target(model, cfg.batch, rng));
  }

  const CostProfile profile = profile_costs(model, xs.front(), cfg.profile_iters, 1, cfg.stages);
  const StagePlan plan = assign_workers(balance(profile, cfg.stages, cfg.mode), profile);
  row.plan = format_layer_counts(plan);

  OptimizerConfig opt;
  opt.lr = cfg.lr;
  std::vector<double> seq, pipe;
  for (std::size_t r = 0; r < cfg.repeat; ++r) {
    {
      SequentialTrainer<T> trainer(model, opt);
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < cfg.steps; ++i) {
        if (cfg.mode == BalanceMode::kLearning) trainer.step(xs[i], ys[i]);
        else (void)trainer.infer(xs[i]);
      }
      seq.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    }
    {
      PipelineOptions po;
      po.optimizer = opt;
      po.mode = cfg.mode;
      Pipeline<T> p(model, plan, po, xs.front(), ys.front());
      std::size_t valid = 0;
      const auto t0 = std::chrono::steady_clock::now();
      for (std::size_t i = 0; i < cfg.steps; ++i) valid += p.step(xs[i], ys[i]).valid ? 1 : 0;
      pipe.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
      row.valid_outputs = valid;
    }
  }
  const auto s = bench_detail::stats(seq), p = bench_detail::stats(pipe);
  row.seq_seconds = s.median;
  row.seq_min = s.min;
  row.seq_max = s.max;
  row.pipe_seconds = p.median;
  row.pipe_min = p.min;
  row.pipe_max = p.max;
  row.speedup = row.seq_seconds / row.pipe_seconds;
  return row;
}

inline SpeedupRow run_bench(const BenchConfig& cfg) {
  return cfg.numeric == NumericMode::kF64 ? run_bench_typed<double>(cfg) : run_bench_typed<float>(cfg);
}

inline const char* kSpeedupCsvHeader =
    "model,stages,mode,steps,numeric,resolution,filters,n_layers,plan,seq_seconds,pipe_seconds,speedup,"
    "valid_outputs,seq_min,seq_max,pipe_min,pipe_max";

inline void write_speedup_csv(std::ostream& os, const std::vector<SpeedupRow>& rows) {
  os << kSpeedupCsvHeader << '\n';
  for (const auto& r : rows) {
    const auto& c = r.config;
    const std::string model = c.model_path.empty() ? c.generator : c.model_path;
    os << model << ',' << c.stages << ',' << balance_mode_name(c.mode) << ',' << c.steps << ','
       << numeric_mode_name(c.numeric) << ',' << c.resolution << ',' << c.filters << ',' << c.n_layers << ",\""
       << r.plan << "\"," << r.seq_seconds << ',' << r.pipe_seconds << ',' << r.speedup << ',' << r.valid_outputs
       << ',' << r.seq_min << ',' << r.seq_max << ',' << r.pipe_min << ',' << r.pipe_max << '\n';
  }
}

inline unsigned logical_cores() { return std::max(1u, std::thread::hardware_concurrency()); }

}  // namespace partime
