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

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "partime/error.hpp"
#include "partime/tensor.hpp"

namespace partime {

enum class OptimizerKind { kSgd, kAdam };

inline const char* optimizer_kind_name(OptimizerKind kind) { return kind == OptimizerKind::kSgd ? "sgd" : "adam"; }

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ParseError("unknown optimizer '" + s + "' (expected sgd or adam)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgd;
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam moments for one parameter tensor; unused by SGD.
template <typename T>
struct ParamState {
  std::vector<T> m;
  std::vector<T> v;
  std::uint64_t steps = 0;
};

template <typename T>
using LayerOptimizerState = std::vector<ParamState<T>>;

// In-place update of one parameter tensor.
template <typename T>
void apply_update(const OptimizerConfig& cfg, Tensor<T>& w, const Tensor<T>& grad, ParamState<T>& st) {
  if (w.shape() != grad.shape()) {
    throw ShapeError("gradient " + shape_string(grad.shape()) + " does not match weight " +
                     shape_string(w.shape()));
  }
  const T lr = static_cast<T>(cfg.lr);
  if (cfg.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
    ++st.steps;
    return;
  }
  if (st.m.size() != w.size()) {
    st.m.assign(w.size(), T(0));
    st.v.assign(w.size(), T(0));
  }
  ++st.steps;
  const T b1 = static_cast<T>(cfg.beta1), b2 = static_cast<T>(cfg.beta2), eps = static_cast<T>(cfg.eps);
  const T c1 = T(1) - static_cast<T>(std::pow(cfg.beta1, static_cast<double>(st.steps)));
  const T c2 = T(1) - static_cast<T>(std::pow(cfg.beta2, static_cast<double>(st.steps)));
  for (std::size_t i = 0; i < w.size(); ++i) {
    const T g = grad[i];
    st.m[i] = b1 * st.m[i] + (T(1) - b1) * g;
    st.v[i] = b2 * st.v[i] + (T(1) - b2) * g * g;
    const T mhat = st.m[i] / c1;
    const T vhat = st.v[i] / c2;
    w[i] -= lr * mhat / (std::sqrt(vhat) + eps);
  }
}

}  // namespace partime
