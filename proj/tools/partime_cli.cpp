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


#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <optional>
#include <string>
#include <vector>

#include "partime/partime.hpp"

namespace {

struct Global {
  std::uint64_t seed = 0;
  std::string numeric = "f64";
  bool json = false;
  std::string out;
};

class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty()) {
      file_.open(path);
      if (!file_) throw partime::Error("cannot open " + path + " for writing");
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

struct BalanceArgs {
  std::string model;
  std::size_t stages = 2;
  std::string mode = "learning";
  std::size_t profile_iters = 5;
  std::size_t batch = 1;
  std::string emit_profile;
  std::string profile;
};

template <typename T>
int cmd_balance(const Global& g, const BalanceArgs& a) {
  const auto model = partime::model_load<T>(a.model);
  const auto mode = partime::parse_balance_mode(a.mode);
  partime::CostProfile profile;
  if (!a.profile.empty()) {
    std::ifstream in(a.profile);
    if (!in) throw partime::Error("cannot open profile " + a.profile);
    profile = partime::cost_profile_from_json(nlohmann::json::parse(in));
  } else {
    partime::Rng rng(g.seed);
    const auto x = partime::random_input(model, a.batch, rng);
    profile = partime::profile_costs(model, x, a.profile_iters, 1, a.stages);
  }
  if (!a.emit_profile.empty()) {
    std::ofstream os(a.emit_profile);
    if (!os) throw partime::Error("cannot open " + a.emit_profile + " for writing");
    os << partime::to_json(profile).dump(2) << '\n';
  }
  const auto plan = partime::assign_workers(partime::balance(profile, a.stages, mode), profile);
  Output out(g.out);
  if (g.json) {
    out.stream() << partime::to_json(plan).dump(2) << '\n';
  } else {
    out.stream() << partime::format_layer_counts(plan) << '\n';
    for (std::size_t h = 0; h < plan.stages(); ++h) {
      out.stream() << "stage " << h << ": layers [" << plan.ranges[h].first << ", " << plan.ranges[h].second
                   << ") worker " << plan.worker_assignment[h] << " predicted " << plan.predicted_stage_cost[h]
                   << " s\n";
    }
  }
  return 0;
}

struct BenchArgs {
  partime::BenchConfig cfg;
  std::vector<std::size_t> stages{2};
  std::string mode = "learning";
};

int cmd_bench(const Global& g, BenchArgs a, const std::string& numeric) {
  a.cfg.seed = g.seed;
  a.cfg.numeric = partime::parse_numeric_mode(numeric);
  a.cfg.mode = partime::parse_balance_mode(a.mode);
  std::vector<partime::SpeedupRow> rows;
  for (std::size_t D : a.stages) {
    auto c = a.cfg;
    c.stages = D;
    if (!c.ideal && partime::logical_cores() < D) {
      std::cerr << "warning: " << partime::logical_cores() << " logical core(s) for " << D
                << " stages; timings will not show parallel speedup\n";
    }
    rows.push_back(partime::run_bench(c));
  }
  Output out(g.out);
  if (g.json) {
    nlohmann::json j = nlohmann::json::array();
    for (const auto& r : rows) {
      j.push_back({{"stages", r.config.stages},
                   {"mode", partime::balance_mode_name(r.config.mode)},
                   {"plan", r.plan},
                   {"seq_seconds", r.seq_seconds},
                   {"pipe_seconds", r.pipe_seconds},
                   {"speedup", r.speedup},
                   {"valid_outputs", r.valid_outputs}});
    }
    out.stream() << j.dump(2) << '\n';
  } else {
    partime::write_speedup_csv(out.stream(), rows);
  }
  return 0;
}

struct TrainArgs {
  partime::TrainConfig cfg;
  std::string stream = "drift2d";
  std::string optimizer = "sgd";
  std::string eval;
  std::string layout = "ring";
};

template <typename T>
int cmd_train(const Global& g, TrainArgs a) {
  a.cfg.seed = g.seed;
  a.cfg.stream = partime::parse_stream_kind(a.stream);
  a.cfg.optimizer.kind = partime::parse_optimizer_kind(a.optimizer);
  a.cfg.replay_layout = partime::parse_replay_layout(a.layout);
  const auto rep = partime::run_train<T>(a.cfg);
  Output out(g.out);
  partime::write_train_csv(out.stream(), rep.rows, rep.compared);
  if (rep.diverged) {
    std::cerr << "error: " << rep.failure << '\n';
    return 3;
  }
  if (!a.eval.empty()) {
    const auto held = partime::dataset_read(a.eval);
    std::cerr << "held-out accuracy: " << partime::dataset_accuracy(rep.final_model, held) << '\n';
    if (rep.compared) {
      std::cerr << "sequential held-out accuracy: " << partime::dataset_accuracy(rep.sequential_model, held) << '\n';
    }
  }
  return 0;
}

struct SimulateArgs {
  std::string policy = "partime";
  std::size_t stages = 4;
  std::size_t steps = 12;
  std::size_t micro_batches = 4;
  std::size_t width = 0;
};

int cmd_simulate(const Global& g, const SimulateArgs& a) {
  Output out(g.out);
  if (a.policy == "all") {
    out.stream() << partime::format_comparison(partime::compare_policies(a.stages, a.steps, a.micro_batches));
    return 0;
  }
  const auto kind = partime::parse_policy(a.policy);
  const std::size_t m = kind == partime::PolicyKind::kPipedream ? 1 : a.micro_batches;
  const auto sim = partime::simulate(partime::SchedulePolicy::make(kind, a.stages, a.steps, m));
  out.stream() << partime::to_json(sim.report).dump(g.json ? 2 : -1) << '\n';
  if (!g.json) out.stream() << partime::render_timeline(sim.events, a.stages, a.width);
  return 0;
}

struct VerifyArgs {
  std::vector<std::string> suites;
  bool inject = false;
  std::size_t model_cases = 12;
};

int cmd_verify(const Global& g, const VerifyArgs& a) {
  partime::VerifyOptions o;
  o.seed = g.seed;
  o.inject_buffer_fault = a.inject;
  o.model_cases = a.model_cases;
  const auto results = partime::run_verify(a.suites.empty() ? partime::verify_suites() : a.suites, o);
  Output out(g.out);
  bool ok = true;
  for (const auto& r : results) {
    ok &= r.passed;
    out.stream() << (r.passed ? "PASS " : "FAIL ") << r.suite << ": " << r.name << " (" << r.detail << ")\n";
  }
  out.stream() << (ok ? "all suites passed" : "verification failed") << '\n';
  return ok ? 0 : 1;
}

struct DatasetArgs {
  std::string path;
  std::size_t n = 1000;
  std::uint32_t classes = 10;
  std::vector<std::size_t> shape{16};
  double noise = 1.0;
  std::uint64_t prototype_seed = 1;
  std::size_t run_length = 1;
};

int cmd_dataset(const Global& g, const DatasetArgs& a) {
  partime::dataset_write(a.path,
                         partime::make_blob_dataset(a.n, a.classes, a.shape, a.noise, g.seed, a.prototype_seed,
                                                            a.run_length));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Streaming pipeline-parallel training engine"};
  app.require_subcommand(1);
  app.fallthrough();
  app.set_config("--config", "", "INI/TOML file with option values");
  Global g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--numeric", g.numeric, "Scalar type")->check(CLI::IsMember({"f64", "f32"}))->capture_default_str();
  app.add_flag("--json", g.json, "Machine-readable output");
  app.add_option("--out", g.out, "Write the report here instead of stdout");

  BalanceArgs ba;
  auto* balance = app.add_subcommand("balance", "Partition a model into stages");
  balance->add_option("--model", ba.model, "Model file")->required();
  balance->add_option("--stages", ba.stages, "Number of stages")->capture_default_str();
  balance->add_option("--mode", ba.mode, "inference or learning")->capture_default_str();
  balance->add_option("--profile-iters", ba.profile_iters, "Timing repetitions per layer")->capture_default_str();
  balance->add_option("--batch", ba.batch, "Batch size used for profiling")->capture_default_str();
  balance->add_option("--emit-profile", ba.emit_profile, "Save the measured cost profile");
  balance->add_option("--profile", ba.profile, "Use a saved cost profile instead of measuring");

  BenchArgs be;
  auto* bench = app.add_subcommand("bench", "Sequential vs pipeline wall clock");
  bench->add_option("--model", be.cfg.model_path, "Model file (default: built-in generator)");
  bench->add_option("--generator", be.cfg.generator, "pixelwise or classifier")->capture_default_str();
  bench->add_option("--layers", be.cfg.n_layers, "Generator depth")->capture_default_str();
  bench->add_option("--channels", be.cfg.channels, "Pixelwise input channels")->capture_default_str();
  bench->add_option("--resolution", be.cfg.resolution, "Input resolution R")->capture_default_str();
  bench->add_option("--filters", be.cfg.filters, "Convolution filters F")->capture_default_str();
  bench->add_option("--stages", be.stages, "Stage counts to sweep")->delimiter(',')->capture_default_str();
  bench->add_option("--mode", be.mode, "inference or learning")->capture_default_str();
  bench->add_option("--steps", be.cfg.steps, "Steps per run")->capture_default_str();
  bench->add_option("--repeat", be.cfg.repeat, "Runs per configuration")->capture_default_str();
  bench->add_option("--batch", be.cfg.batch, "Samples per step")->capture_default_str();
  bench->add_option("--lr", be.cfg.lr, "Learning rate")->capture_default_str();
  bench->add_flag("--ideal", be.cfg.ideal, "Use the simulator's ideal cost model");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "Train on a stream and print the loss curve");
  train->add_option("--stream", ta.stream, "constant, drift2d or replay")->capture_default_str();
  train->add_option("--model", ta.cfg.model_path, "Model file (default: a small MLP)");
  train->add_option("--hidden", ta.cfg.hidden, "Hidden width of the default model")->capture_default_str();
  train->add_option("--stages", ta.cfg.stages, "Pipeline stages")->capture_default_str();
  train->add_option("--steps", ta.cfg.steps, "Stream steps")->capture_default_str();
  train->add_option("--lr", ta.cfg.optimizer.lr, "Learning rate")->capture_default_str();
  train->add_option("--optimizer", ta.optimizer, "sgd or adam")->capture_default_str();
  train->add_option("--window", ta.cfg.loss_window, "Loss averaging window (steps)")->capture_default_str();
  train->add_flag("--compare-sequential", ta.cfg.compare_sequential, "Also run the sequential trainer");
  train->add_option("--classes", ta.cfg.drift.classes, "drift2d classes")->capture_default_str();
  train->add_option("--rho", ta.cfg.drift.rho, "drift2d rotation per step (radians)")->capture_default_str();
  train->add_option("--sigma", ta.cfg.drift.sigma, "drift2d noise")->capture_default_str();
  train->add_option("--radius", ta.cfg.drift.radius, "drift2d radius")->capture_default_str();
  train->add_option("--drift-batch", ta.cfg.drift.batch, "drift2d points per step")->capture_default_str();
  train->add_option("--dataset", ta.cfg.dataset_path, "Dataset file for the replay stream");
  train->add_option("--replay-window", ta.cfg.replay_window, "Replay batch size W")->capture_default_str();
  train->add_option("--replay-layout", ta.layout, "ring or newest-first")->capture_default_str();
  train->add_option("--passes", ta.cfg.replay_passes, "Sweeps over the dataset")->capture_default_str();
  train->add_option("--eval", ta.eval, "Held-out dataset; prints accuracy to stderr");
  train->add_option("--interval", ta.cfg.interval_seconds, "Nominal seconds between samples");
  train->add_flag("--pace", ta.cfg.pace, "Sleep to the nominal interval");

  SimulateArgs sa;
  auto* simulate = app.add_subcommand("simulate", "Simulate a pipeline schedule");
  simulate->add_option("--policy", sa.policy, "gpipe, pipedream, pipedream2bw, partime or all")
      ->check(CLI::IsMember({"gpipe", "pipedream", "pipedream2bw", "2bw", "partime", "all"}))
      ->capture_default_str();
  simulate->add_option("--stages", sa.stages, "Pipeline depth D")->capture_default_str();
  simulate->add_option("--steps", sa.steps, "Samples (or steps for partime)")->capture_default_str();
  simulate->add_option("--microbatches", sa.micro_batches, "Micro-batches per mini-batch")->capture_default_str();
  simulate->add_option("--width", sa.width, "Timeline cell width (0: auto)");

  VerifyArgs va;
  auto* verify = app.add_subcommand("verify", "Run the verification suites");
  verify->add_option("--suite", va.suites, "equivalence, grad, partition, schedule, buffer");
  verify->add_option("--model-cases", va.model_cases, "Random models per suite")->capture_default_str();
  verify->add_flag("--inject-buffer-fault", va.inject, "Break the buffer swap on purpose");

  DatasetArgs da;
  auto* dataset = app.add_subcommand("dataset", "Write a synthetic classification dataset");
  dataset->add_option("--path", da.path, "Output file")->required();
  dataset->add_option("--samples", da.n, "Number of samples")->capture_default_str();
  dataset->add_option("--classes", da.classes, "Number of classes")->capture_default_str();
  dataset->add_option("--shape", da.shape, "Per-sample shape")->delimiter(',')->capture_default_str();
  dataset->add_option("--noise", da.noise, "Noise around class prototypes")->capture_default_str();
  dataset->add_option("--run-length", da.run_length, "Consecutive samples per class run")->capture_default_str();
  dataset->add_option("--prototype-seed", da.prototype_seed, "Seed for class prototypes")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    const bool f64 = g.numeric == "f64";
    if (*balance) return f64 ? cmd_balance<double>(g, ba) : cmd_balance<float>(g, ba);
    if (*bench) return cmd_bench(g, be, app.count("--numeric") ? g.numeric : "f32");
    if (*train) return f64 ? cmd_train<double>(g, ta) : cmd_train<float>(g, ta);
    if (*simulate) return cmd_simulate(g, sa);
    if (*verify) return cmd_verify(g, va);
    if (*dataset) return cmd_dataset(g, da);
  } catch (const partime::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
