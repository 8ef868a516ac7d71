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

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "partime/error.hpp"
#include "partime/layers.hpp"
#include "partime/loss.hpp"
#include "partime/optimizer.hpp"
#include "partime/rng.hpp"
#include "partime/tensor.hpp"

namespace partime {

// Ordered layer stack with a loss. `input_shape` excludes the batch axis.
template <typename T>
struct Model {
  std::vector<Layer<T>> layers;
  LossKind loss = LossKind::kMse;
  Shape input_shape;
  std::uint64_t seed = 0;
  // Number of weight updates each layer has received; the pipeline stamps
  // extracted models with per-stage versions.
  std::vector<std::uint64_t> weight_versions;

  std::size_t size() const { return layers.size(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) {
      for (const auto& w : l.weights) n += w.size();
    }
    return n;
  }
};

// Per-sample output shapes of every layer; validates the whole stack.
inline std::vector<Shape> infer_shapes(const std::vector<LayerSpec>& specs, const Shape& input_shape) {
  std::vector<Shape> shapes;
  shapes.reserve(specs.size());
  Shape cur = input_shape;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const LayerSpec& s = specs[i];
    if (s.kind == LayerKind::kResidualAdd) {
      infer_output_shape(s, cur, i);
      const Shape& src = shapes[static_cast<std::size_t>(s.source)];
      if (src != cur) {
        throw ShapeError(layer_label(s, i) + ": skip source " + std::to_string(s.source) + " has shape " +
                         shape_string(src) + " but input is " + shape_string(cur));
      }
    }
    cur = infer_output_shape(s, cur, i);
    shapes.push_back(cur);
  }
  return shapes;
}

template <typename T>
std::vector<LayerSpec> layer_specs(const Model<T>& model) {
  std::vector<LayerSpec> out;
  out.reserve(model.layers.size());
  for (const auto& l : model.layers) out.push_back(l.spec);
  return out;
}

template <typename T>
std::vector<Shape> infer_shapes(const Model<T>& model) {
  return infer_shapes(layer_specs(model), model.input_shape);
}

// Leading dimension of the per-sample output shape (classes or channels).
template <typename T>
std::size_t output_dim(const Model<T>& model) {
  if (model.layers.empty()) return model.input_shape.empty() ? 0 : model.input_shape[0];
  return infer_shapes(model).back().at(0);
}

// Builds a model from layer specs, seeding each layer from (seed, index) and
// drawing fresh weights.
template <typename T>
Model<T> build_model(std::vector<LayerSpec> specs, Shape input_shape, LossKind loss, std::uint64_t seed) {
  infer_shapes(specs, input_shape);
  Model<T> m;
  m.loss = loss;
  m.input_shape = std::move(input_shape);
  m.seed = seed;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    LayerSpec s = specs[i];
    s.init_seed = mix_seed(seed, i);
    m.layers.push_back(Layer<T>{s, init_weights<T>(s)});
  }
  m.weight_versions.assign(m.layers.size(), 0);
  return m;
}

template <typename T>
void validate_model(const Model<T>& model) {
  infer_shapes(model);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    if (model.layers[i].spec.has_weights()) detail::check_weights(model.layers[i], i);
  }
}

// Layer indices whose outputs feed a residual_add.
inline std::set<int> skip_sources(const std::vector<LayerSpec>& specs) {
  std::set<int> out;
  for (const auto& s : specs) {
    if (s.kind == LayerKind::kResidualAdd) out.insert(s.source);
  }
  return out;
}

// Gradients of the loss w.r.t. every layer's weights (aligned with
// Model::layers; empty entries for parameter-free layers) and the input.
template <typename T>
struct GradientBundle {
  std::vector<std::vector<Tensor<T>>> weight_grads;
  Tensor<T> input_grad;
};

template <typename T>
struct ForwardTrace {
  std::vector<Tensor<T>> outputs;  // outputs[i] = output of layer i
};

template <typename T>
ForwardTrace<T> sequential_forward(const Model<T>& model, const Tensor<T>& x) {
  if (x.rank() != model.input_shape.size() + 1 ||
      Shape(x.shape().begin() + 1, x.shape().end()) != model.input_shape) {
    throw ShapeError("model input expects [B]+" + shape_string(model.input_shape) + ", got " +
                     shape_string(x.shape()));
  }
  ForwardTrace<T> trace;
  trace.outputs.reserve(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    const Tensor<T>& in = i == 0 ? x : trace.outputs[i - 1];
    SkipInputs<T> skips;
    const LayerSpec& spec = model.layers[i].spec;
    if (spec.kind == LayerKind::kResidualAdd && spec.source >= 0 &&
        static_cast<std::size_t>(spec.source) < i) {
      skips[spec.source] = &trace.outputs[static_cast<std::size_t>(spec.source)];
    }
    trace.outputs.push_back(layer_forward(model.layers[i], in, skips, i));
  }
  return trace;
}

template <typename T>
Tensor<T> model_forward(const Model<T>& model, const Tensor<T>& x) {
  if (model.layers.empty()) return x;
  return sequential_forward(model, x).outputs.back();
}

// Full reverse pass for the given output gradient.
template <typename T>
GradientBundle<T> sequential_backward(const Model<T>& model, const Tensor<T>& x, const ForwardTrace<T>& trace,
                                      const Tensor<T>& output_grad) {
  const std::size_t L = model.layers.size();
  GradientBundle<T> bundle;
  bundle.weight_grads.resize(L);
  if (L == 0) {
    bundle.input_grad = output_grad;
    return bundle;
  }
  // grads[i] accumulates dL/d(output of layer i).
  std::vector<Tensor<T>> grads(L);
  grads[L - 1] = output_grad;
  Tensor<T> input_grad;
  for (std::size_t j = L; j-- > 0;) {
    const Tensor<T>& in = j == 0 ? x : trace.outputs[j - 1];
    if (grads[j].empty()) grads[j] = Tensor<T>(trace.outputs[j].shape());
    LayerGrads<T> g = layer_backward(model.layers[j], in, grads[j], j);
    bundle.weight_grads[j] = std::move(g.weight_grads);
    for (auto& [src, sg] : g.skip_grads) {
      auto& acc = grads[static_cast<std::size_t>(src)];
      if (acc.empty()) acc = std::move(sg);
      else acc += sg;
    }
    if (j == 0) {
      input_grad = std::move(g.input_grad);
    } else if (grads[j - 1].empty()) {
      grads[j - 1] = std::move(g.input_grad);
    } else {
      grads[j - 1] += g.input_grad;
    }
  }
  bundle.input_grad = std::move(input_grad);
  return bundle;
}

template <typename T>
using OptimizerState = std::vector<LayerOptimizerState<T>>;

template <typename T>
OptimizerState<T> make_optimizer_state(const Model<T>& model) {
  OptimizerState<T> st(model.layers.size());
  for (std::size_t i = 0; i < model.layers.size(); ++i) st[i].resize(model.layers[i].weights.size());
  return st;
}

template <typename T>
struct StepResult {
  Tensor<T> output;
  T loss = 0;
  GradientBundle<T> gradients;
};

// Vanilla forward, backward and in-place update; the exactness oracle for
// the pipeline.
template <typename T>
StepResult<T> sequential_step(Model<T>& model, OptimizerState<T>& state, const Tensor<T>& x,
                              const Tensor<T>& target, const OptimizerConfig& optimizer,
                              std::uint64_t step_index = 0) {
  if (state.size() != model.layers.size()) state = make_optimizer_state(model);
  ForwardTrace<T> trace = sequential_forward(model, x);
  StepResult<T> r;
  r.output = model.layers.empty() ? x : trace.outputs.back();
  r.loss = loss_eval(model.loss, r.output, target);
  if (!std::isfinite(r.loss)) {
    throw NumericError("non-finite loss at step " + std::to_string(step_index));
  }
  r.gradients = sequential_backward(model, x, trace, loss_grad(model.loss, r.output, target));
  if (model.weight_versions.size() != model.layers.size()) model.weight_versions.assign(model.layers.size(), 0);
  for (std::size_t i = 0; i < model.layers.size(); ++i) {
    auto& layer = model.layers[i];
    if (layer.weights.empty()) continue;
    for (std::size_t p = 0; p < layer.weights.size(); ++p) {
      apply_update(optimizer, layer.weights[p], r.gradients.weight_grads[i][p], state[i][p]);
    }
    ++model.weight_versions[i];
  }
  return r;
}

// Owns a model plus its optimizer state and counts steps.
template <typename T>
class SequentialTrainer {
 public:
  SequentialTrainer(Model<T> model, OptimizerConfig optimizer)
      : model_(std::move(model)), optimizer_(optimizer), state_(make_optimizer_state(model_)) {}

  StepResult<T> step(const Tensor<T>& x, const Tensor<T>& target) {
    return sequential_step(model_, state_, x, target, optimizer_, steps_++);
  }

  Tensor<T> infer(const Tensor<T>& x) const { return model_forward(model_, x); }

  void set_learning_rate(double lr) { optimizer_.lr = lr; }
  const Model<T>& model() const { return model_; }
  std::uint64_t steps() const { return steps_; }

 private:
  Model<T> model_;
  OptimizerConfig optimizer_;
  OptimizerState<T> state_;
  std::uint64_t steps_ = 0;
};

template <typename T, typename U>
Model<U> cast_model(const Model<T>& m) {
  Model<U> out;
  out.loss = m.loss;
  out.input_shape = m.input_shape;
  out.seed = m.seed;
  out.weight_versions = m.weight_versions;
  for (const auto& l : m.layers) {
    Layer<U> nl{l.spec, {}};
    for (const auto& w : l.weights) nl.weights.push_back(w.template cast<U>());
    out.layers.push_back(std::move(nl));
  }
  return out;
}

}  // namespace partime
