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
#include <cmath>
#include <cstdint>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "partime/engine.hpp"
#include "partime/generators.hpp"
#include "partime/layers.hpp"
#include "partime/loss.hpp"
#include "partime/model.hpp"
#include "partime/partition.hpp"
#include "partime/rng.hpp"
#include "partime/schedsim.hpp"

namespace partime {

struct CheckResult {
  std::string suite;
  std::string name;
  bool passed = false;
  std::string detail;
};

struct VerifyOptions {
  std::uint64_t seed = 0;
  std::size_t model_cases = 12;
  std::size_t grad_cases = 200;
  std::size_t partition_cases = 500;
  bool inject_buffer_fault = false;
};

inline const std::vector<std::string>& verify_suites() {
  static const std::vector<std::string> names = {"equivalence", "grad", "partition", "schedule", "buffer"};
  return names;
}

namespace verify_detail {

inline std::string fmt(double v) {
  std::ostringstream os;
  os << v;
  return os.str();
}

inline Pipeline<double> make_pipeline(const Model<double>& m, std::size_t D, double lr, OptimizerKind kind,
                                      const Tensor<double>& x, const Tensor<double>& y, bool keep = false,
                                      bool events = false, bool fault = false) {
  PipelineOptions po;
  po.optimizer.kind = kind;
  po.optimizer.lr = lr;
  po.keep_gradients = keep;
  po.record_events = events;
  po.inject_stale_swap = fault;
  return Pipeline<double>(m, uniform_plan(m.layers.size(), D), po, x, y);
}

// Output at step t must equal the frozen model applied to sample t-(D-1).
inline double frozen_output_diff(const Model<double>& m, std::size_t D, std::uint64_t seed, std::size_t extra_steps,
                                 bool fault = false, std::size_t* violations = nullptr) {
  Rng rng(seed);
  const std::size_t steps = D - 1 + extra_steps;
  std::vector<Tensor<double>> xs, ys;
  for (std::size_t t = 0; t < steps; ++t) {
    xs.push_back(random_input(m, 2, rng));
    ys.push_back(random_target(m, 2, rng));
  }
  auto p = make_pipeline(m, D, 0.0, OptimizerKind::kSgd, xs[0], ys[0], false, false, fault);
  double worst = 0;
  for (std::size_t t = 0; t < steps; ++t) {
    const auto out = p.step(xs[t], ys[t]);
    if (out.valid != (t + 1 >= D)) return INFINITY;
    if (!out.valid) continue;
    const auto ref = model_forward(m, xs[t - (D - 1)]);
    worst = std::max(worst, static_cast<double>(max_abs_diff(out.output, ref)));
  }
  if (violations) *violations = p.buffer_violations();
  return worst;
}

// Constant input, frozen weights: stage h's gradients match the oracle once
// the first real gradient has reached it.
inline double frozen_gradient_diff(const Model<double>& m, std::size_t D, std::uint64_t seed) {
  Rng rng(seed);
  const auto x = random_input(m, 2, rng);
  const auto y = random_target(m, 2, rng);
  const auto trace = sequential_forward(m, x);
  const auto out = trace.outputs.back();
  const auto oracle = sequential_backward(m, x, trace, loss_grad(m.loss, out, y));
  auto p = make_pipeline(m, D, 0.0, OptimizerKind::kSgd, x, y, true);
  double worst = 0;
  const std::size_t steps = 2 * D + 3;
  for (std::size_t t = 0; t < steps; ++t) {
    p.step(x, y);
    for (std::size_t h = 0; h < D; ++h) {
      if (t + h + 2 < 2 * D) continue;
      const auto [a, b] = p.stage_range(h);
      const auto& g = p.stage_weight_grads(h);
      for (std::size_t i = a; i < b; ++i) {
        const auto& want = oracle.weight_grads[i];
        const auto& got = g[i - a];
        if (want.size() != got.size()) return INFINITY;
        for (std::size_t k = 0; k < want.size(); ++k) {
          worst = std::max(worst, static_cast<double>(max_abs_diff(want[k], got[k])));
        }
      }
    }
  }
  return worst;
}

inline double single_stage_diff(const Model<double>& m, OptimizerKind kind, std::uint64_t seed) {
  Rng rng(seed);
  OptimizerConfig opt;
  opt.kind = kind;
  opt.lr = kind == OptimizerKind::kSgd ? 0.05 : 0.01;
  std::vector<Tensor<double>> xs, ys;
  for (std::size_t t = 0; t < 10; ++t) {
    xs.push_back(random_input(m, 2, rng));
    ys.push_back(random_target(m, 2, rng));
  }
  SequentialTrainer<double> seq(m, opt);
  auto p = make_pipeline(m, 1, opt.lr, kind, xs[0], ys[0]);
  double worst = 0;
  for (std::size_t t = 0; t < xs.size(); ++t) {
    const auto a = seq.step(xs[t], ys[t]);
    const auto b = p.step(xs[t], ys[t]);
    worst = std::max(worst, static_cast<double>(max_abs_diff(a.output, b.output)));
    worst = std::max(worst, std::abs(static_cast<double>(a.loss - b.loss)));
  }
  const auto w = p.extract_weights();
  for (std::size_t i = 0; i < m.layers.size(); ++i) {
    for (std::size_t k = 0; k < m.layers[i].weights.size(); ++k) {
      worst = std::max(worst, static_cast<double>(max_abs_diff(w.layers[i].weights[k], seq.model().layers[i].weights[k])));
    }
  }
  return worst;
}

inline double norm(const std::vector<double>& v) {
  double s = 0;
  for (double x : v) s += x * x;
  return std::sqrt(s);
}

// Norm-wise relative error between an analytic gradient and central
// differences of `f` with respect to `x`.
inline double fd_rel_err(Tensor<double>& x, const Tensor<double>& analytic, const std::function<double()>& f,
                         double h = 1e-6) {
  std::vector<double> num(x.size()), diff(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    num[i] = (fp - fm) / (2 * h);
    diff[i] = num[i] - analytic[i];
  }
  std::vector<double> a(analytic.values().begin(), analytic.values().end());
  return norm(diff) / std::max({norm(a), norm(num), 1e-7});
}

inline double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// One finite-difference case for a random layer of the given kind; returns
// the worst relative error over input, weights and skip input.
inline double layer_grad_case(LayerKind kind, Rng& rng) {
  LayerSpec spec;
  Shape in_shape;
  const std::size_t B = 1 + rng.below(2);
  switch (kind) {
    case LayerKind::kDense: spec = LayerSpec::dense(1 + rng.below(5), 1 + rng.below(5)); in_shape = {B, spec.in_dim}; break;
    case LayerKind::kConv2d:
      spec = LayerSpec::conv2d(1 + rng.below(3), 1 + rng.below(3), rng.below(2) ? 3 : 1);
      in_shape = {B, spec.in_channels, 2 + rng.below(4), 2 + rng.below(4)};
      break;
    case LayerKind::kAvgPool2d: spec = LayerSpec::avgpool2d(2); in_shape = {B, 1 + rng.below(3), 2 * (1 + rng.below(3)), 2 * (1 + rng.below(3))}; break;
    case LayerKind::kFlatten: spec = LayerSpec::flatten(); in_shape = {B, 1 + rng.below(3), 1 + rng.below(3), 1 + rng.below(3)}; break;
    case LayerKind::kResidualAdd: spec = LayerSpec::residual_add(0); in_shape = {B, 1 + rng.below(6)}; break;
    case LayerKind::kRelu: spec = LayerSpec::relu(); in_shape = {B, 1 + rng.below(6)}; break;
    case LayerKind::kTanh: spec = LayerSpec::tanh(); in_shape = {B, 1 + rng.below(6)}; break;
  }
  spec.init_seed = rng.below(1u << 30);
  Layer<double> layer{spec, init_weights<double>(spec)};
  const std::size_t index = kind == LayerKind::kResidualAdd ? 1 : 0;
  Tensor<double> x(in_shape);
  for (std::size_t i = 0; i < x.size(); ++i) {
    double v = rng.normal();
    if (kind == LayerKind::kRelu && std::abs(v) < 1e-2) v = v < 0 ? -0.5 : 0.5;
    x[i] = v;
  }
  Tensor<double> skip(in_shape);
  for (std::size_t i = 0; i < skip.size(); ++i) skip[i] = rng.normal();
  SkipInputs<double> skips;
  if (kind == LayerKind::kResidualAdd) skips[0] = &skip;
  const auto out = layer_forward(layer, x, skips, index);
  Tensor<double> g(out.shape());
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = rng.normal();
  const auto grads = layer_backward(layer, x, g, index);
  auto f = [&] { return dot(layer_forward(layer, x, skips, index), g); };
  double worst = fd_rel_err(x, grads.input_grad, f);
  for (std::size_t k = 0; k < layer.weights.size(); ++k) {
    worst = std::max(worst, fd_rel_err(layer.weights[k], grads.weight_grads.at(k), f));
  }
  if (kind == LayerKind::kResidualAdd) worst = std::max(worst, fd_rel_err(skip, grads.skip_grads.at(0), f));
  return worst;
}

inline double loss_grad_case(LossKind kind, Rng& rng) {
  const std::size_t B = 1 + rng.below(4), F = 2 + rng.below(5);
  Tensor<double> o({B, F});
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = 2 * rng.normal();
  Tensor<double> y = kind == LossKind::kMse ? Tensor<double>({B, F}) : Tensor<double>({B});
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = kind == LossKind::kMse ? rng.normal() : static_cast<double>(rng.below(F));
  }
  const auto g = loss_grad(kind, o, y);
  return fd_rel_err(o, g, [&] { return loss_eval(kind, o, y); });
}

// Exhaustive min-max over every contiguous split.
inline double brute_force_minmax(const std::vector<double>& c, std::size_t D) {
  const std::size_t L = c.size();
  double best = INFINITY;
  std::function<void(std::size_t, std::size_t, double)> rec = [&](std::size_t start, std::size_t left, double worst) {
    if (left == 1) {
      double s = 0;
      for (std::size_t i = start; i < L; ++i) s += c[i];
      best = std::min(best, std::max(worst, s));
      return;
    }
    double s = 0;
    for (std::size_t j = start + 1; j + left - 1 <= L; ++j) {
      s += c[j - 1];
      rec(j, left - 1, std::max(worst, s));
    }
  };
  rec(0, D, 0.0);
  return best;
}

inline void add(std::vector<CheckResult>& out, const std::string& suite, const std::string& name, bool ok,
                const std::string& detail) {
  out.push_back({suite, name, ok, detail});
}

inline void equivalence_suite(const VerifyOptions& o, std::vector<CheckResult>& out) {
  double out_worst = 0, grad_worst = 0, single_worst = 0;
  std::size_t runs = 0;
  for (std::size_t c = 0; c < o.model_cases; ++c) {
    const auto m = random_model<double>(mix_seed(o.seed, c));
    for (std::size_t D = 1; D <= std::min<std::size_t>(4, m.layers.size()); ++D) {
      out_worst = std::max(out_worst, frozen_output_diff(m, D, mix_seed(o.seed + 1, c * 8 + D), 6));
      grad_worst = std::max(grad_worst, frozen_gradient_diff(m, D, mix_seed(o.seed + 2, c * 8 + D)));
      ++runs;
    }
    single_worst = std::max(single_worst, single_stage_diff(m, OptimizerKind::kSgd, mix_seed(o.seed + 3, c)));
    single_worst = std::max(single_worst, single_stage_diff(m, OptimizerKind::kAdam, mix_seed(o.seed + 4, c)));
  }
  add(out, "equivalence", "frozen output delay", out_worst <= 1e-12,
      std::to_string(runs) + " runs, max diff " + fmt(out_worst));
  add(out, "equivalence", "frozen constant-stream gradients", grad_worst <= 1e-12,
      std::to_string(runs) + " runs, max diff " + fmt(grad_worst));
  add(out, "equivalence", "single stage matches sequential", single_worst <= 1e-12,
      "max diff " + fmt(single_worst));
}

inline void grad_suite(const VerifyOptions& o, std::vector<CheckResult>& out) {
  Rng rng(mix_seed(o.seed, 0x9d));
  const LayerKind kinds[] = {LayerKind::kDense, LayerKind::kRelu, LayerKind::kTanh, LayerKind::kConv2d,
                             LayerKind::kAvgPool2d, LayerKind::kFlatten, LayerKind::kResidualAdd};
  double worst = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < o.grad_cases; ++c) {
    const std::size_t pick = c % 9;
    if (pick < 7) worst = std::max(worst, layer_grad_case(kinds[pick], rng));
    else worst = std::max(worst, loss_grad_case(pick == 7 ? LossKind::kMse : LossKind::kSoftmaxCrossEntropy, rng));
    ++n;
  }
  add(out, "grad", "finite differences", worst <= 1e-5, std::to_string(n) + " cases, max rel err " + fmt(worst));
}

inline void partition_suite(const VerifyOptions& o, std::vector<CheckResult>& out) {
  Rng rng(mix_seed(o.seed, 0x9a));
  std::size_t bad = 0;
  for (std::size_t c = 0; c < o.partition_cases; ++c) {
    const std::size_t L = 1 + rng.below(12);
    const std::size_t D = 1 + rng.below(L);
    CostProfile p;
    for (std::size_t i = 0; i < L; ++i) {
      p.fwd_cost.push_back(static_cast<double>(1 + rng.below(20)));
      p.bwd_cost.push_back(0.0);
    }
    p.boundary_bytes.assign(L - 1, 0);
    const auto plan = balance(p, D, BalanceMode::kLearning);
    if (plan.max_stage_cost() != brute_force_minmax(p.fwd_cost, D)) ++bad;
  }
  add(out, "partition", "balance matches brute force", bad == 0,
      std::to_string(o.partition_cases - bad) + "/" + std::to_string(o.partition_cases) + " optimal");
}

inline void schedule_suite(const VerifyOptions&, std::vector<CheckResult>& out) {
  bool stale = true, thr = true, pd = true, bw = true;
  for (std::size_t D = 1; D <= 16; ++D) {
    const auto r = simulate(SchedulePolicy::make(PolicyKind::kPartime, D, 4 * D + 8)).report;
    for (std::size_t h = 0; h < D; ++h) stale &= r.staleness[h] == static_cast<std::int64_t>(2 * (D - 1 - h));
    thr &= r.throughput == 1.0 && r.speedup == static_cast<double>(D);
    const auto q = simulate(SchedulePolicy::make(PolicyKind::kPipedream, D, 4 * D + 8)).report;
    for (std::size_t h = 0; h < D; ++h) pd &= q.weight_versions[h] == D - h;
    const auto w = simulate(SchedulePolicy::make(PolicyKind::kPipedream2bw, D, 4 * D, D)).report;
    for (std::size_t h = 0; h < D; ++h) bw &= D == 1 || w.weight_versions[h] == 2;
  }
  add(out, "schedule", "partime staleness 2(D-h)", stale, "D = 1..16");
  add(out, "schedule", "partime throughput 1/slot, speedup D", thr, "D = 1..16");
  add(out, "schedule", "pipedream versions D-s+1", pd, "D = 1..16");
  add(out, "schedule", "2bw two versions", bw, "D = 2..16");

  bool agree = true;
  std::string detail;
  for (std::size_t D = 2; D <= 4; ++D) {
    const auto m = mlp_model<double>({3, 4, 4, 4, 2}, LossKind::kMse, D);
    Rng rng(D);
    const auto x = random_input(m, 1, rng);
    const auto y = random_target(m, 1, rng);
    auto p = make_pipeline(m, D, 0.01, OptimizerKind::kSgd, x, y, false, true);
    for (int t = 0; t < 50; ++t) p.step(x, y);
    const auto sim = simulate(SchedulePolicy::make(PolicyKind::kPartime, D, 50));
    if (p.events() != sim.events) {
      agree = false;
      detail += "D=" + std::to_string(D) + " differs; ";
    }
  }
  add(out, "schedule", "engine log matches simulator", agree, detail.empty() ? "D = 2..4, 50 steps" : detail);
}

inline void buffer_suite(const VerifyOptions& o, std::vector<CheckResult>& out) {
  std::size_t violations = 0;
  double worst = 0;
  for (std::size_t c = 0; c < std::max<std::size_t>(1, o.model_cases / 3); ++c) {
    const auto m = random_model<double>(mix_seed(o.seed + 7, c));
    for (std::size_t D = 2; D <= std::min<std::size_t>(4, m.layers.size()); ++D) {
      std::size_t v = 0;
      worst = std::max(worst, frozen_output_diff(m, D, mix_seed(o.seed + 8, c), 6, o.inject_buffer_fault, &v));
      violations += v;
    }
  }
  add(out, "buffer", "double-buffer ordering", violations == 0 && worst <= 1e-12,
      std::to_string(violations) + " stale reads, max output diff " + fmt(worst));
}

}  // namespace verify_detail

inline std::vector<CheckResult> run_verify(const std::vector<std::string>& suites, const VerifyOptions& o) {
  std::vector<CheckResult> out;
  for (const auto& s : suites) {
    if (s == "equivalence") verify_detail::equivalence_suite(o, out);
    else if (s == "grad") verify_detail::grad_suite(o, out);
    else if (s == "partition") verify_detail::partition_suite(o, out);
    else if (s == "schedule") verify_detail::schedule_suite(o, out);
    else if (s == "buffer") verify_detail::buffer_suite(o, out);
    else throw ParseError("unknown verify suite '" + s + "'");
  }
  return out;
}

}  // namespace partime
