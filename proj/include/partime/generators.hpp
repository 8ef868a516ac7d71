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
#include <vector>

#include "partime/error.hpp"
#include "partime/layers.hpp"
#include "partime/model.hpp"
#include "partime/rng.hpp"

namespace partime {

// Same-resolution convolutional stack for per-pixel regression: n_layers
// 3x3 convolutions (F filters, ReLU in between), mapping `channels` input
// planes of size R x R back to `channels` planes. Loss is mse.
template <typename T>
Model<T> pixelwise_model(std::size_t n_layers, std::size_t channels, std::size_t R, std::size_t F,
                         std::uint64_t seed) {
  if (n_layers < 1 || channels < 1 || R < 1 || F < 1) throw ContractViolation("pixelwise: all sizes must be >= 1");
  std::vector<LayerSpec> specs;
  std::size_t in = channels;
  for (std::size_t i = 0; i < n_layers; ++i) {
    const std::size_t out = i + 1 == n_layers ? channels : F;
    specs.push_back(LayerSpec::conv2d(in, out, 3));
    if (i + 1 < n_layers) specs.push_back(LayerSpec::relu());
    in = out;
  }
  return build_model<T>(specs, {channels, R, R}, LossKind::kMse, seed);
}

// Convolutional classifier over 3 x R x R inputs with 2x2 average pooling
// after every second convolution while the resolution allows, then a dense
// head over `classes` outputs. Loss is softmax cross-entropy.
template <typename T>
Model<T> classifier_model(std::size_t n_layers, std::size_t R, std::size_t F, std::uint64_t seed,
                          std::size_t classes = 10) {
  if (n_layers < 1 || R < 1 || F < 1) throw ContractViolation("classifier: all sizes must be >= 1");
  std::vector<LayerSpec> specs;
  std::size_t in = 3, res = R;
  for (std::size_t i = 0; i < n_layers; ++i) {
    specs.push_back(LayerSpec::conv2d(in, F, 3));
    specs.push_back(LayerSpec::relu());
    in = F;
    if (i % 2 == 1 && res % 2 == 0 && res >= 4) {
      specs.push_back(LayerSpec::avgpool2d(2));
      res /= 2;
    }
  }
  specs.push_back(LayerSpec::flatten());
  specs.push_back(LayerSpec::dense(F * res * res, classes));
  return build_model<T>(specs, {3, R, R}, LossKind::kSoftmaxCrossEntropy, seed);
}

// Multilayer perceptron: dense/tanh pairs, final dense.
template <typename T>
Model<T> mlp_model(const std::vector<std::size_t>& widths, LossKind loss, std::uint64_t seed) {
  if (widths.size() < 2) throw ContractViolation("mlp needs at least input and output widths");
  std::vector<LayerSpec> specs;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    specs.push_back(LayerSpec::dense(widths[i], widths[i + 1]));
    if (i + 2 < widths.size()) specs.push_back(LayerSpec::tanh());
  }
  return build_model<T>(specs, {widths.front()}, loss, seed);
}

struct RandomModel {
  std::vector<LayerSpec> specs;
  Shape input_shape;
  LossKind loss = LossKind::kMse;
};

// Random stack of at most `max_layers` layers mixing dense, conv, activations
// and residual adds (including skips that span several layers).
inline RandomModel random_model_spec(std::uint64_t seed, std::size_t max_layers = 12) {
  Rng rng(seed);
  RandomModel m;
  const std::size_t target = 2 + rng.below(max_layers - 1);
  const bool conv = rng.below(2) == 0;
  std::vector<Shape> shapes;
  auto push = [&](LayerSpec s) {
    const Shape in = shapes.empty() ? m.input_shape : shapes.back();
    shapes.push_back(infer_output_shape(s, in, m.specs.size()));
    m.specs.push_back(s);
  };
  std::size_t limit = 0;  // layers available before the fixed head
  auto room = [&] { return m.specs.size() < limit; };
  auto maybe_residual = [&] {
    if (!room() || m.specs.empty()) return;
    std::vector<int> candidates;
    for (std::size_t j = 0; j + 1 < shapes.size(); ++j) {
      if (shapes[j] == shapes.back()) candidates.push_back(static_cast<int>(j));
    }
    if (!candidates.empty() && rng.below(2) == 0) push(LayerSpec::residual_add(candidates[rng.below(candidates.size())]));
  };
  auto activation = [&] {
    if (room()) push(rng.below(2) == 0 ? LayerSpec::relu() : LayerSpec::tanh());
  };

  if (conv) {
    const std::size_t c = 1 + rng.below(2), res = 4;
    m.input_shape = {c, res, res};
    std::size_t ch = c;
    limit = std::max<std::size_t>(target - 2, 1);
    while (room()) {
      const std::size_t out = rng.below(2) == 0 ? ch : 1 + rng.below(3);
      push(LayerSpec::conv2d(ch, out, rng.below(2) == 0 ? 1 : 3));
      ch = out;
      activation();
      maybe_residual();
    }
    if (rng.below(2) == 0 && room()) push(LayerSpec::avgpool2d(2));
    push(LayerSpec::flatten());
    const std::size_t flat = shape_numel(shapes.back());
    push(LayerSpec::dense(flat, 2 + rng.below(3)));
  } else {
    const std::size_t in = 2 + rng.below(5);
    m.input_shape = {in};
    std::size_t w = in;
    limit = target - 1;
    while (room()) {
      const std::size_t out = rng.below(2) == 0 ? w : 2 + rng.below(5);
      push(LayerSpec::dense(w, out));
      w = out;
      activation();
      maybe_residual();
    }
    push(LayerSpec::dense(w, 2 + rng.below(3)));
  }
  m.loss = rng.below(2) == 0 ? LossKind::kMse : LossKind::kSoftmaxCrossEntropy;
  return m;
}

template <typename T>
Model<T> random_model(std::uint64_t seed, std::size_t max_layers = 12) {
  auto r = random_model_spec(seed, max_layers);
  return build_model<T>(r.specs, r.input_shape, r.loss, mix_seed(seed, 0x5eed));
}

// Batch of standard-normal inputs for `model`.
template <typename T>
Tensor<T> random_input(const Model<T>& model, std::size_t batch, Rng& rng) {
  Tensor<T> x(batched(batch, model.input_shape));
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = static_cast<T>(rng.normal());
  return x;
}

// Target matching the model's loss: labels for cross-entropy, dense values
// for mse.
template <typename T>
Tensor<T> random_target(const Model<T>& model, std::size_t batch, Rng& rng) {
  const auto out = infer_shapes(model).back();
  if (model.loss == LossKind::kSoftmaxCrossEntropy) {
    Tensor<T> y({batch});
    for (std::size_t i = 0; i < batch; ++i) y[i] = static_cast<T>(rng.below(out.back()));
    return y;
  }
  Tensor<T> y(batched(batch, out));
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = static_cast<T>(rng.normal());
  return y;
}

}  // namespace partime
