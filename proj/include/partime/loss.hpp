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
#include <string>
#include <vector>

#include "partime/error.hpp"
#include "partime/tensor.hpp"

namespace partime {

enum class LossKind { kMse, kSoftmaxCrossEntropy };

inline const char* loss_kind_name(LossKind kind) {
  return kind == LossKind::kMse ? "mse" : "softmax_cross_entropy";
}

inline LossKind parse_loss_kind(const std::string& s) {
  if (s == "mse") return LossKind::kMse;
  if (s == "softmax_cross_entropy") return LossKind::kSoftmaxCrossEntropy;
  throw ParseError("unknown loss '" + s + "'");
}

// Row-wise softmax of a [B, F] tensor.
template <typename T>
Tensor<T> softmax(const Tensor<T>& logits) {
  if (logits.rank() != 2) throw ShapeError("softmax expects [B,F], got " + shape_string(logits.shape()));
  const std::size_t B = logits.dim(0), F = logits.dim(1);
  Tensor<T> p(logits.shape());
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = logits.data() + b * F;
    T* pr = p.data() + b * F;
    const T zmax = *std::max_element(z, z + F);
    T sum = 0;
    for (std::size_t f = 0; f < F; ++f) {
      pr[f] = std::exp(z[f] - zmax);
      sum += pr[f];
    }
    for (std::size_t f = 0; f < F; ++f) pr[f] /= sum;
  }
  return p;
}

namespace detail {

// Cross-entropy targets are a [B] tensor of integral class indices.
template <typename T>
std::vector<std::size_t> class_labels(const Tensor<T>& output, const Tensor<T>& target) {
  if (output.rank() != 2) {
    throw ShapeError("softmax_cross_entropy expects output [B,F], got " + shape_string(output.shape()));
  }
  const std::size_t B = output.dim(0), F = output.dim(1);
  if (target.size() != B) {
    throw ShapeError("softmax_cross_entropy expects " + std::to_string(B) + " labels, got target " +
                     shape_string(target.shape()));
  }
  std::vector<std::size_t> labels(B);
  for (std::size_t b = 0; b < B; ++b) {
    const T v = target[b];
    if (!(v >= T(0)) || v != std::floor(v) || v >= static_cast<T>(F)) {
      throw Error("target class " + std::to_string(static_cast<double>(v)) + " outside [0," +
                  std::to_string(F) + ")");
    }
    labels[b] = static_cast<std::size_t>(v);
  }
  return labels;
}

template <typename T>
void check_mse(const Tensor<T>& output, const Tensor<T>& target) {
  if (output.shape() != target.shape()) {
    throw ShapeError("mse target shape " + shape_string(target.shape()) + " differs from output " +
                     shape_string(output.shape()));
  }
}

}  // namespace detail

// mse: mean of squared residuals over every element. Cross-entropy: mean over
// the batch of -log softmax(o)[label].
template <typename T>
T loss_eval(LossKind kind, const Tensor<T>& output, const Tensor<T>& target) {
  if (kind == LossKind::kMse) {
    detail::check_mse(output, target);
    T acc = 0;
    for (std::size_t i = 0; i < output.size(); ++i) {
      const T r = output[i] - target[i];
      acc += r * r;
    }
    return acc / static_cast<T>(output.size());
  }
  const auto labels = detail::class_labels(output, target);
  const std::size_t B = output.dim(0), F = output.dim(1);
  T acc = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = output.data() + b * F;
    const T zmax = *std::max_element(z, z + F);
    T sum = 0;
    for (std::size_t f = 0; f < F; ++f) sum += std::exp(z[f] - zmax);
    acc += std::log(sum) + zmax - z[labels[b]];
  }
  return acc / static_cast<T>(B);
}

template <typename T>
Tensor<T> loss_grad(LossKind kind, const Tensor<T>& output, const Tensor<T>& target) {
  if (kind == LossKind::kMse) {
    detail::check_mse(output, target);
    Tensor<T> g(output.shape());
    const T scale = T(2) / static_cast<T>(output.size());
    for (std::size_t i = 0; i < output.size(); ++i) g[i] = scale * (output[i] - target[i]);
    return g;
  }
  const auto labels = detail::class_labels(output, target);
  const std::size_t B = output.dim(0), F = output.dim(1);
  Tensor<T> g = softmax(output);
  const T inv_b = T(1) / static_cast<T>(B);
  for (std::size_t b = 0; b < B; ++b) {
    g[b * F + labels[b]] -= T(1);
    for (std::size_t f = 0; f < F; ++f) g[b * F + f] *= inv_b;
  }
  return g;
}

// Fraction of rows whose arg-max equals the label.
template <typename T>
double accuracy(const Tensor<T>& output, const Tensor<T>& target) {
  const auto labels = detail::class_labels(output, target);
  const std::size_t B = output.dim(0), F = output.dim(1);
  std::size_t hits = 0;
  for (std::size_t b = 0; b < B; ++b) {
    const T* z = output.data() + b * F;
    if (static_cast<std::size_t>(std::max_element(z, z + F) - z) == labels[b]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(B);
}

}  // namespace partime
