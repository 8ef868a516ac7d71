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

// Lock-step pipeline runtime. A model is split into D contiguous stages, each
// owned by one worker thread. Every global step t, stage h (0-based):
//
//   1. takes its stable input (stage 0: x_t; others: the payload the upstream
//      stage wrote into the temporary buffer during step t-1),
//   2. forwards it with its current weights,
//   3. obtains the gradient for its output: the last stage differentiates the
//      loss against the target of the sample it just produced; the others use
//      the message their downstream neighbour wrote during step t-1,
//   4. backpropagates that gradient through the activations of this step's
//      forward and sends the input gradient upstream,
//   5. writes its output into the downstream temporary buffer,
//   6. updates its weights.
//
// A sample entering at step t leaves the last stage at step t+D-1, and stage h
// sees the gradient derived from it 2(D-1-h) steps after forwarding it. No
// activations or weights are stashed. Until real data (or a real gradient)
// reaches a stage it processes zeros and skips its update.
//
// Workers synchronise only through two barriers per step. The temporary to
// stable copy happens between the end barrier of step t and the start
// barrier of step t+1, so nobody writes a buffer while its owner reads it.

#include <atomic>
#include <barrier>
#include <chrono>
#include <cstdint>
#include <deque>
#include <exception>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "partime/error.hpp"
#include "partime/layers.hpp"
#include "partime/loss.hpp"
#include "partime/model.hpp"
#include "partime/optimizer.hpp"
#include "partime/partition.hpp"
#include "partime/tensor.hpp"
#include "partime/timeline.hpp"

namespace partime {

struct PipelineOptions {
  OptimizerConfig optimizer;
  BalanceMode mode = BalanceMode::kLearning;
  bool record_events = false;
  bool keep_gradients = false;
  // Fault injection for the double-buffer check: stages skip the
  // temporary->stable copy before odd steps.
  bool inject_stale_swap = false;
};

template <typename T>
struct PipelineOutput {
  std::int64_t step = 0;
  Tensor<T> output;
  T loss = 0;
  bool valid = false;
  std::int64_t source_sample_id = -1;
};

// Inter-stage message: a main tensor plus pass-through skip tensors, tagged
// with the sample it derives from (-1 for warm-up zeros) and the step that
// wrote it.
template <typename T>
struct Payload {
  Tensor<T> main;
  std::vector<Tensor<T>> skips;
  std::int64_t sample_id = -1;
  std::int64_t written_step = -1;

  void assign(const Payload& o) {
    main.assign(o.main);
    skips.resize(o.skips.size());
    for (std::size_t i = 0; i < skips.size(); ++i) skips[i].assign(o.skips[i]);
    sample_id = o.sample_id;
    written_step = o.written_step;
  }

  std::size_t bytes() const {
    std::size_t n = main.bytes();
    for (const auto& s : skips) n += s.bytes();
    return n;
  }
};

namespace engine_detail {

template <typename T>
struct StageRuntime {
  std::size_t index = 0;
  std::size_t begin = 0, end = 0;  // owned layers [begin, end)
  std::vector<Layer<T>> layers;
  OptimizerState<T> opt;
  OptimizerConfig optimizer;
  std::vector<int> in_sources;   // skip sources arriving with the input
  std::vector<int> out_sources;  // skip sources forwarded downstream

  Payload<T> stable_input, temporary_input;
  Payload<T> stable_grad, temporary_grad;
  std::vector<Tensor<T>> activations;  // this step's layer outputs
  std::vector<std::vector<Tensor<T>>> weight_grads;
  std::uint64_t version = 0;

  Tensor<T> output;  // last stage only
  T loss = 0;
  bool loss_valid = false;

  std::vector<TimelineEvent> events;
  std::size_t buffer_violations = 0;
  std::exception_ptr error;

  bool is_last(std::size_t stages) const { return index + 1 == stages; }
};

}  // namespace engine_detail

template <typename T>
class Pipeline {
 public:
  Pipeline(const Model<T>& model, StagePlan plan, PipelineOptions options, const Tensor<T>& sample_input,
           const Tensor<T>& sample_target)
      : options_(options),
        loss_(model.loss),
        input_shape_(model.input_shape),
        seed_(model.seed),
        sample_input_shape_(sample_input.shape()),
        sample_target_shape_(sample_target.shape()),
        start_(static_cast<std::ptrdiff_t>(plan.stages() + 1)),
        end_(static_cast<std::ptrdiff_t>(plan.stages() + 1)) {
    validate_plan(plan, model.layers.size());
    validate_model(model);
    plan_ = std::move(plan);
    build(model, sample_input, sample_target);
    for (std::size_t h = 0; h < stages_.size(); ++h) workers_.emplace_back([this, h] { worker_loop(h); });
  }

  Pipeline(const Pipeline&) = delete;
  Pipeline& operator=(const Pipeline&) = delete;

  ~Pipeline() {
    stop_.store(true);
    start_.arrive_and_wait();
    for (auto& w : workers_) w.join();
  }

  std::size_t stages() const { return stages_.size(); }
  std::int64_t steps_done() const { return step_; }
  const StagePlan& plan() const { return plan_; }

  // One lock-step global step. Single driver only.
  PipelineOutput<T> step(const Tensor<T>& x, const Tensor<T>& target) {
    if (in_step_.exchange(true)) throw ContractViolation("Pipeline::step called concurrently");
    struct Release {
      std::atomic<bool>& flag;
      ~Release() { flag.store(false); }
    } release{in_step_};
    if (broken_) throw ContractViolation("pipeline is unusable after a failed step");
    if (x.shape() != sample_input_shape_) {
      throw ShapeError("step input " + shape_string(x.shape()) + " differs from sample " +
                       shape_string(sample_input_shape_));
    }
    if (target.shape() != sample_target_shape_) {
      throw ShapeError("step target " + shape_string(target.shape()) + " differs from sample " +
                       shape_string(sample_target_shape_));
    }
    const std::size_t D = stages_.size();
    input_.assign(x);
    targets_.push_back(target);
    has_target_ = targets_.size() == D;
    if (has_target_) {
      current_target_.assign(targets_.front());
      targets_.pop_front();
    }
    const auto t0 = std::chrono::steady_clock::now();
    start_.arrive_and_wait();
    end_.arrive_and_wait();
    last_step_seconds_ = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    for (auto& s : stages_) {
      if (s->error) {
        broken_ = true;
        std::rethrow_exception(s->error);
      }
    }
    if (options_.record_events) {
      for (auto& s : stages_) {
        events_.insert(events_.end(), s->events.begin(), s->events.end());
        s->events.clear();
      }
    }
    auto& last = *stages_.back();
    PipelineOutput<T> out;
    out.step = step_;
    out.output = last.output;
    out.valid = step_ >= static_cast<std::int64_t>(D) - 1;
    out.source_sample_id = out.valid ? step_ - static_cast<std::int64_t>(D - 1) : -1;
    out.loss = last.loss_valid ? last.loss : T(0);
    ++step_;
    return out;
  }

  double last_step_seconds() const { return last_step_seconds_; }

  // Reassembles the current weights; each layer is stamped with its stage's
  // update count.
  Model<T> extract_weights() const {
    if (in_step_.load()) throw ContractViolation("extract_weights called during a step");
    Model<T> m;
    m.loss = loss_;
    m.input_shape = input_shape_;
    m.seed = seed_;
    for (const auto& s : stages_) {
      for (const auto& l : s->layers) {
        m.layers.push_back(l);
        m.weight_versions.push_back(s->version);
      }
    }
    return m;
  }

  void set_learning_rate(double lr) {
    if (in_step_.load()) throw ContractViolation("set_learning_rate called during a step");
    options_.optimizer.lr = lr;
    for (auto& s : stages_) s->optimizer.lr = lr;
  }

  // Weight gradients computed by stage h during the last step (requires
  // keep_gradients); aligned with the stage's layers.
  const std::vector<std::vector<Tensor<T>>>& stage_weight_grads(std::size_t h) const {
    return stages_.at(h)->weight_grads;
  }

  std::pair<std::size_t, std::size_t> stage_range(std::size_t h) const {
    return {stages_.at(h)->begin, stages_.at(h)->end};
  }

  std::uint64_t stage_version(std::size_t h) const { return stages_.at(h)->version; }

  // Bytes stage h sends downstream each step (main activation plus
  // pass-through skips).
  std::size_t boundary_payload_bytes(std::size_t h) const {
    if (h + 1 >= stages_.size()) return 0;
    return stages_[h + 1]->temporary_input.bytes();
  }

  const std::vector<int>& stage_pass_through(std::size_t h) const { return stages_.at(h)->out_sources; }

  const std::vector<TimelineEvent>& events() const { return events_; }

  std::size_t buffer_violations() const {
    std::size_t n = 0;
    for (const auto& s : stages_) n += s->buffer_violations;
    return n;
  }

 private:
  using Stage = engine_detail::StageRuntime<T>;

  void build(const Model<T>& model, const Tensor<T>& sample_input, const Tensor<T>& sample_target) {
    if (sample_input.rank() != input_shape_.size() + 1 ||
        Shape(sample_input.shape().begin() + 1, sample_input.shape().end()) != input_shape_) {
      throw ShapeError("sample input " + shape_string(sample_input.shape()) + " does not match model input [B]+" +
                       shape_string(input_shape_));
    }
    const std::size_t batch = sample_input.dim(0);
    const auto specs = layer_specs(model);
    const std::size_t D = plan_.stages();

    // Per-sample shapes, stage by stage, so failures name the boundary.
    std::vector<Shape> shapes;
    Shape cur = input_shape_;
    for (std::size_t h = 0; h < D; ++h) {
      const auto [a, b] = plan_.ranges[h];
      try {
        for (std::size_t i = a; i < b; ++i) {
          if (specs[i].kind == LayerKind::kResidualAdd) {
            infer_output_shape(specs[i], cur, i);
            if (shapes.at(static_cast<std::size_t>(specs[i].source)) != cur) {
              throw ShapeError(layer_label(specs[i], i) + ": skip source shape " +
                               shape_string(shapes[static_cast<std::size_t>(specs[i].source)]) + " != input " +
                               shape_string(cur));
            }
          }
          cur = infer_output_shape(specs[i], cur, i);
          shapes.push_back(cur);
        }
      } catch (const ShapeError& e) {
        const std::string where = h == 0 ? std::string("pipeline input")
                                         : "boundary between stage " + std::to_string(h - 1) + " and stage " +
                                               std::to_string(h);
        throw ShapeError("shape inference failed in stage " + std::to_string(h) + " (after " + where +
                         "): " + e.what());
      }
    }

    for (std::size_t h = 0; h < D; ++h) {
      auto s = std::make_unique<Stage>();
      s->index = h;
      std::tie(s->begin, s->end) = plan_.ranges[h];
      s->optimizer = options_.optimizer;
      for (std::size_t i = s->begin; i < s->end; ++i) s->layers.push_back(model.layers[i]);
      s->opt.resize(s->layers.size());
      for (std::size_t i = 0; i < s->layers.size(); ++i) s->opt[i].resize(s->layers[i].weights.size());
      if (s->begin > 0) s->in_sources = pass_through_sources(specs, s->begin - 1);
      if (h + 1 < D) s->out_sources = pass_through_sources(specs, s->end - 1);
      s->activations.resize(s->end - s->begin);
      s->weight_grads.resize(s->end - s->begin);

      auto alloc = [&](Payload<T>& p, std::size_t boundary_after, const std::vector<int>& sources) {
        p.main = Tensor<T>(batched(batch, shapes[boundary_after]));
        p.skips.clear();
        for (int src : sources) p.skips.emplace_back(batched(batch, shapes[static_cast<std::size_t>(src)]));
      };
      if (h == 0) {
        s->stable_input.main = Tensor<T>(sample_input.shape());
      } else {
        alloc(s->stable_input, s->begin - 1, s->in_sources);
        alloc(s->temporary_input, s->begin - 1, s->in_sources);
      }
      if (h + 1 < D) {
        alloc(s->stable_grad, s->end - 1, s->out_sources);
        alloc(s->temporary_grad, s->end - 1, s->out_sources);
      }
      s->output = Tensor<T>(batched(batch, shapes.back()));
      stages_.push_back(std::move(s));
    }
    // Loss/target compatibility check up front.
    (void)loss_eval(loss_, Tensor<T>(batched(batch, shapes.back())), sample_target);
    input_ = Tensor<T>(sample_input.shape());
    current_target_ = sample_target;
  }

  void worker_loop(std::size_t h) {
    std::int64_t t = 0;
    Stage& s = *stages_[h];
    while (true) {
      start_.arrive_and_wait();
      if (stop_.load()) break;
      try {
        run_stage(s, t);
      } catch (...) {
        s.error = std::current_exception();
      }
      end_.arrive_and_wait();
      ++t;
      prepare_next(s, t);
    }
  }

  // Temporary -> stable copy for step `t`.
  void prepare_next(Stage& s, std::int64_t t) {
    if (options_.inject_stale_swap && (t % 2 == 1)) return;
    const std::size_t D = stages_.size();
    if (s.index > 0) s.stable_input.assign(s.temporary_input);
    if (s.index + 1 < D) s.stable_grad.assign(s.temporary_grad);
  }

  void emit(Stage& s, std::int64_t t, Op op, std::int64_t sample, std::int64_t duration = 1) {
    if (!options_.record_events) return;
    if (sample < 0 && op != Op::kUpdate) op = Op::kDummy;
    s.events.push_back({t, s.index, op, sample < 0 ? -1 : sample, duration});
  }

  void run_stage(Stage& s, std::int64_t t) {
    const std::size_t D = stages_.size();
    const bool learning = options_.mode == BalanceMode::kLearning;

    // (1) stable input
    if (s.index == 0) {
      s.stable_input.main.assign(input_);
      s.stable_input.sample_id = t;
      s.stable_input.written_step = t;
    } else if (t >= 1 && s.stable_input.written_step != t - 1) {
      ++s.buffer_violations;
    }
    const Payload<T>& in = s.stable_input;

    // (2) forward
    SkipInputs<T> skips;
    for (std::size_t k = 0; k < s.in_sources.size(); ++k) skips[s.in_sources[k]] = &in.skips[k];
    if (s.begin > 0) skips[static_cast<int>(s.begin) - 1] = &in.main;
    for (std::size_t i = 0; i < s.layers.size(); ++i) {
      const Tensor<T>& x = i == 0 ? in.main : s.activations[i - 1];
      s.activations[i] = layer_forward(s.layers[i], x, skips, s.begin + i);
      skips[static_cast<int>(s.begin + i)] = &s.activations[i];
    }
    emit(s, t, Op::kForward, in.sample_id);

    // (3) gradient for this stage's output
    const Tensor<T>& out = s.activations.back();
    Payload<T> local_grad;
    const Payload<T>* grad = nullptr;
    if (s.is_last(D)) {
      s.output.assign(out);
      s.loss_valid = false;
      if (in.sample_id >= 0 && has_target_) {
        s.loss = loss_eval(loss_, out, current_target_);
        if (!std::isfinite(s.loss)) {
          throw NumericError("non-finite loss at step " + std::to_string(t) + " (sample " +
                             std::to_string(in.sample_id) + ")");
        }
        s.loss_valid = true;
      }
      if (learning) {
        if (s.loss_valid) {
          local_grad.main = loss_grad(loss_, out, current_target_);
          local_grad.sample_id = in.sample_id;
        } else {
          local_grad.main = Tensor<T>(out.shape());
        }
        grad = &local_grad;
      }
    } else {
      if (learning) {
        if (t >= 1 && s.stable_grad.written_step != t - 1) ++s.buffer_violations;
        grad = &s.stable_grad;
      }
      // (5) hand the activation to the next stage
      Payload<T>& next = stages_[s.index + 1]->temporary_input;
      next.main.assign(out);
      for (std::size_t k = 0; k < s.out_sources.size(); ++k) next.skips[k].assign(*skips.at(s.out_sources[k]));
      next.sample_id = in.sample_id;
      next.written_step = t;
    }
    if (!learning) return;

    // (4) backward through this step's activations
    const std::size_t n = s.layers.size();
    std::vector<Tensor<T>> grads(n);
    grads[n - 1] = grad->main;
    Tensor<T> input_grad(in.main.shape());
    std::map<int, Tensor<T>> pass_grads;
    auto route = [&](int src, const Tensor<T>& g) {
      if (src >= static_cast<int>(s.begin)) {
        auto& acc = grads[static_cast<std::size_t>(src) - s.begin];
        if (acc.empty()) acc = g;
        else acc += g;
      } else if (src == static_cast<int>(s.begin) - 1) {
        input_grad += g;
      } else {
        auto it = pass_grads.find(src);
        if (it == pass_grads.end()) pass_grads.emplace(src, g);
        else it->second += g;
      }
    };
    for (std::size_t k = 0; k < s.out_sources.size(); ++k) route(s.out_sources[k], grad->skips[k]);
    for (std::size_t i = n; i-- > 0;) {
      const Tensor<T>& x = i == 0 ? in.main : s.activations[i - 1];
      if (grads[i].empty()) grads[i] = Tensor<T>(s.activations[i].shape());
      LayerGrads<T> lg = layer_backward(s.layers[i], x, grads[i], s.begin + i);
      s.weight_grads[i] = std::move(lg.weight_grads);
      for (const auto& [src, g] : lg.skip_grads) route(src, g);
      if (i == 0) input_grad += lg.input_grad;
      else if (grads[i - 1].empty()) grads[i - 1] = std::move(lg.input_grad);
      else grads[i - 1] += lg.input_grad;
    }
    emit(s, t, Op::kBackward, grad->sample_id);

    if (s.index > 0) {
      Payload<T>& up = stages_[s.index - 1]->temporary_grad;
      up.main.assign(input_grad);
      for (std::size_t k = 0; k < s.in_sources.size(); ++k) {
        auto it = pass_grads.find(s.in_sources[k]);
        if (it != pass_grads.end()) up.skips[k].assign(it->second);
        else up.skips[k].fill(T(0));
      }
      up.sample_id = grad->sample_id;
      up.written_step = t;
    }

    // (6) update, only once a real gradient has arrived
    if (grad->sample_id >= 0) {
      for (std::size_t i = 0; i < n; ++i) {
        auto& layer = s.layers[i];
        for (std::size_t p = 0; p < layer.weights.size(); ++p) {
          apply_update(s.optimizer, layer.weights[p], s.weight_grads[i][p], s.opt[i][p]);
        }
      }
      ++s.version;
      emit(s, t, Op::kUpdate, grad->sample_id, 0);
    }
    if (!options_.keep_gradients) {
      for (auto& wg : s.weight_grads) wg.clear();
    }
  }

  PipelineOptions options_;
  LossKind loss_;
  Shape input_shape_;
  std::uint64_t seed_;
  Shape sample_input_shape_, sample_target_shape_;
  StagePlan plan_;
  std::vector<std::unique_ptr<Stage>> stages_;
  std::vector<std::thread> workers_;
  std::barrier<> start_, end_;
  std::atomic<bool> stop_{false};
  std::atomic<bool> in_step_{false};
  bool broken_ = false;

  Tensor<T> input_;
  std::deque<Tensor<T>> targets_;
  Tensor<T> current_target_;
  bool has_target_ = false;
  std::int64_t step_ = 0;
  double last_step_seconds_ = 0.0;
  std::vector<TimelineEvent> events_;
};

struct RunRow {
  std::int64_t step = 0;
  std::int64_t sample_id = -1;
  double loss = 0.0;
  bool valid = false;
  double step_wall_seconds = 0.0;
};

struct RunReport {
  std::vector<RunRow> rows;
  double elapsed_seconds = 0.0;
  std::size_t valid_outputs = 0;
  double throughput = 0.0;  // valid outputs per second
  bool stream_exhausted = false;
};

inline void write_run_csv(std::ostream& os, const RunReport& r) {
  os << "step,sample_id,loss,valid,step_wall_seconds\n";
  for (const auto& row : r.rows) {
    os << row.step << ',' << row.sample_id << ',' << row.loss << ',' << (row.valid ? 1 : 0) << ','
       << row.step_wall_seconds << '\n';
  }
}

}  // namespace partime
