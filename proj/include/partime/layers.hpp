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
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "partime/error.hpp"
#include "partime/rng.hpp"
#include "partime/tensor.hpp"

namespace partime {

enum class LayerKind { kDense, kRelu, kTanh, kConv2d, kAvgPool2d, kFlatten, kResidualAdd };

inline const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::kDense: return "dense";
    case LayerKind::kRelu: return "relu";
    case LayerKind::kTanh: return "tanh";
    case LayerKind::kConv2d: return "conv2d";
    case LayerKind::kAvgPool2d: return "avgpool2d";
    case LayerKind::kFlatten: return "flatten";
    case LayerKind::kResidualAdd: return "residual_add";
  }
  return "?";
}

inline LayerKind parse_layer_kind(const std::string& s) {
  for (LayerKind k : {LayerKind::kDense, LayerKind::kRelu, LayerKind::kTanh, LayerKind::kConv2d,
                      LayerKind::kAvgPool2d, LayerKind::kFlatten, LayerKind::kResidualAdd}) {
    if (s == layer_kind_name(k)) return k;
  }
  throw ParseError("unknown layer kind '" + s + "'");
}

// Static description of one layer. Only the fields relevant to `kind` are
// meaningful.
struct LayerSpec {
  LayerKind kind = LayerKind::kRelu;
  std::size_t in_dim = 0;        // dense
  std::size_t out_dim = 0;       // dense
  std::size_t in_channels = 0;   // conv2d
  std::size_t out_channels = 0;  // conv2d
  std::size_t kernel = 0;        // conv2d, odd; stride 1, same padding
  std::size_t window = 0;        // avgpool2d
  int source = -1;               // residual_add: layer whose output is added
  std::uint64_t init_seed = 0;

  static LayerSpec dense(std::size_t in, std::size_t out) {
    LayerSpec s;
    s.kind = LayerKind::kDense;
    s.in_dim = in;
    s.out_dim = out;
    return s;
  }
  static LayerSpec relu() { return LayerSpec{}; }
  static LayerSpec tanh() {
    LayerSpec s;
    s.kind = LayerKind::kTanh;
    return s;
  }
  static LayerSpec conv2d(std::size_t in_ch, std::size_t out_ch, std::size_t k) {
    LayerSpec s;
    s.kind = LayerKind::kConv2d;
    s.in_channels = in_ch;
    s.out_channels = out_ch;
    s.kernel = k;
    return s;
  }
  static LayerSpec avgpool2d(std::size_t window) {
    LayerSpec s;
    s.kind = LayerKind::kAvgPool2d;
    s.window = window;
    return s;
  }
  static LayerSpec flatten() {
    LayerSpec s;
    s.kind = LayerKind::kFlatten;
    return s;
  }
  static LayerSpec residual_add(int source) {
    LayerSpec s;
    s.kind = LayerKind::kResidualAdd;
    s.source = source;
    return s;
  }

  bool has_weights() const { return kind == LayerKind::kDense || kind == LayerKind::kConv2d; }

  friend bool operator==(const LayerSpec&, const LayerSpec&) = default;
};

inline std::string layer_label(const LayerSpec& spec, std::size_t index) {
  return "layer " + std::to_string(index) + " (" + layer_kind_name(spec.kind) + ")";
}

// Shapes of the learnable tensors: {weight, bias} or nothing.
inline std::vector<Shape> param_shapes(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::kDense: return {{spec.out_dim, spec.in_dim}, {spec.out_dim}};
    case LayerKind::kConv2d:
      return {{spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}, {spec.out_channels}};
    default: return {};
  }
}

inline std::size_t fan_in(const LayerSpec& spec) {
  if (spec.kind == LayerKind::kDense) return spec.in_dim;
  if (spec.kind == LayerKind::kConv2d) return spec.in_channels * spec.kernel * spec.kernel;
  return 0;
}

// Per-sample output shape; throws naming the layer when `in` does not fit.
inline Shape infer_output_shape(const LayerSpec& spec, const Shape& in, std::size_t index) {
  auto fail = [&](const std::string& what) -> Shape {
    throw ShapeError(layer_label(spec, index) + ": " + what + ", got input " + shape_string(in));
  };
  switch (spec.kind) {
    case LayerKind::kDense:
      if (in.size() != 1 || in[0] != spec.in_dim) {
        return fail("expected input " + shape_string({spec.in_dim}));
      }
      return {spec.out_dim};
    case LayerKind::kRelu:
    case LayerKind::kTanh:
      return in;
    case LayerKind::kConv2d:
      if (spec.kernel % 2 == 0) return fail("kernel must be odd for same padding");
      if (in.size() != 3 || in[0] != spec.in_channels) {
        return fail("expected input [" + std::to_string(spec.in_channels) + ",H,W]");
      }
      return {spec.out_channels, in[1], in[2]};
    case LayerKind::kAvgPool2d:
      if (spec.window == 0) return fail("window must be positive");
      if (in.size() != 3 || in[1] % spec.window != 0 || in[2] % spec.window != 0) {
        return fail("expected [C,H,W] with H,W divisible by " + std::to_string(spec.window));
      }
      return {in[0], in[1] / spec.window, in[2] / spec.window};
    case LayerKind::kFlatten:
      return {shape_numel(in)};
    case LayerKind::kResidualAdd:
      if (spec.source < 0 || static_cast<std::size_t>(spec.source) >= index) {
        return fail("residual source " + std::to_string(spec.source) + " must precede the layer");
      }
      return in;
  }
  return in;
}

template <typename T>
struct Layer {
  LayerSpec spec;
  std::vector<Tensor<T>> weights;  // empty for parameter-free layers
};

// Uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)], drawn from the layer's own seed.
template <typename T>
std::vector<Tensor<T>> init_weights(const LayerSpec& spec) {
  std::vector<Tensor<T>> out;
  if (!spec.has_weights()) return out;
  Rng rng(spec.init_seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in(spec)));
  for (const Shape& s : param_shapes(spec)) {
    Tensor<T> t(s);
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<T>(rng.uniform(-bound, bound));
    out.push_back(std::move(t));
  }
  return out;
}

template <typename T>
using SkipInputs = std::map<int, const Tensor<T>*>;

template <typename T>
struct LayerGrads {
  Tensor<T> input_grad;
  std::vector<Tensor<T>> weight_grads;  // empty when the layer has no parameters
  std::map<int, Tensor<T>> skip_grads;  // residual_add: gradient addressed to its source
};

namespace detail {

inline void require(bool ok, const LayerSpec& spec, std::size_t index, const std::string& what,
                    const Shape& actual) {
  if (!ok) {
    throw ShapeError(layer_label(spec, index) + ": expected " + what + ", got " + shape_string(actual));
  }
}

template <typename T>
void check_input(const LayerSpec& spec, std::size_t index, const Tensor<T>& in) {
  const Shape& s = in.shape();
  switch (spec.kind) {
    case LayerKind::kDense:
      require(s.size() == 2 && s[1] == spec.in_dim, spec, index,
              "[B," + std::to_string(spec.in_dim) + "]", s);
      break;
    case LayerKind::kConv2d:
      require(s.size() == 4 && s[1] == spec.in_channels && spec.kernel % 2 == 1, spec, index,
              "[B," + std::to_string(spec.in_channels) + ",H,W] with odd kernel", s);
      break;
    case LayerKind::kAvgPool2d:
      require(s.size() == 4 && spec.window > 0 && s[2] % spec.window == 0 && s[3] % spec.window == 0,
              spec, index, "[B,C,H,W] with H,W divisible by " + std::to_string(spec.window), s);
      break;
    case LayerKind::kFlatten:
      require(s.size() >= 2, spec, index, "a batched tensor", s);
      break;
    default: break;
  }
}

template <typename T>
void check_weights(const Layer<T>& layer, std::size_t index) {
  const auto shapes = param_shapes(layer.spec);
  if (layer.weights.size() != shapes.size()) {
    throw ShapeError(layer_label(layer.spec, index) + ": expected " + std::to_string(shapes.size()) +
                     " weight tensors, got " + std::to_string(layer.weights.size()));
  }
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    require(layer.weights[i].shape() == shapes[i], layer.spec, index,
            "weight " + std::to_string(i) + " of shape " + shape_string(shapes[i]),
            layer.weights[i].shape());
  }
}

// out[b,o,:,:] += sum_c W[o,c] (*) in[b,c,:,:], stride 1, zero padding k/2.
template <typename T>
void conv2d_forward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& bias, Tensor<T>& out) {
  const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
  const std::size_t plane = H * W;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      T* op = out.data() + (b * O + o) * plane;
      std::fill(op, op + plane, bias[o]);
      for (std::size_t c = 0; c < C; ++c) {
        const T* ip = in.data() + (b * C + c) * plane;
        for (std::size_t dy = 0; dy < K; ++dy) {
          for (std::size_t dx = 0; dx < K; ++dx) {
            const T wv = w[((o * C + c) * K + dy) * K + dx];
            const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - pad;
            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - pad;
            const std::size_t y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -oy));
            const std::size_t y1 = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(H), static_cast<std::ptrdiff_t>(H) - oy));
            const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -ox));
            const std::size_t x1 = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(W) - ox));
            for (std::size_t y = y0; y < y1; ++y) {
              T* orow = op + y * W;
              const T* irow = ip + (static_cast<std::ptrdiff_t>(y) + oy) * static_cast<std::ptrdiff_t>(W) + ox;
              for (std::size_t x = x0; x < x1; ++x) orow[x] += wv * irow[x];
            }
          }
        }
      }
    }
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& in, const Tensor<T>& w, const Tensor<T>& g, Tensor<T>& din,
                     Tensor<T>& dw, Tensor<T>& db) {
  const std::size_t B = in.dim(0), C = in.dim(1), H = in.dim(2), W = in.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const std::ptrdiff_t pad = static_cast<std::ptrdiff_t>(K / 2);
  const std::size_t plane = H * W;
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t o = 0; o < O; ++o) {
      const T* gp = g.data() + (b * O + o) * plane;
      T bsum = 0;
      for (std::size_t i = 0; i < plane; ++i) bsum += gp[i];
      db[o] += bsum;
      for (std::size_t c = 0; c < C; ++c) {
        const T* ip = in.data() + (b * C + c) * plane;
        T* dip = din.data() + (b * C + c) * plane;
        for (std::size_t dy = 0; dy < K; ++dy) {
          for (std::size_t dx = 0; dx < K; ++dx) {
            const std::size_t widx = ((o * C + c) * K + dy) * K + dx;
            const T wv = w[widx];
            const std::ptrdiff_t oy = static_cast<std::ptrdiff_t>(dy) - pad;
            const std::ptrdiff_t ox = static_cast<std::ptrdiff_t>(dx) - pad;
            const std::size_t y0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -oy));
            const std::size_t y1 = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(H), static_cast<std::ptrdiff_t>(H) - oy));
            const std::size_t x0 = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, -ox));
            const std::size_t x1 = static_cast<std::size_t>(
                std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(W), static_cast<std::ptrdiff_t>(W) - ox));
            T acc = 0;
            for (std::size_t y = y0; y < y1; ++y) {
              const T* grow = gp + y * W;
              const std::ptrdiff_t shift = (static_cast<std::ptrdiff_t>(y) + oy) * static_cast<std::ptrdiff_t>(W) + ox;
              const T* irow = ip + shift;
              T* drow = dip + shift;
              for (std::size_t x = x0; x < x1; ++x) {
                acc += grow[x] * irow[x];
                drow[x] += wv * grow[x];
              }
            }
            dw[widx] += acc;
          }
        }
      }
    }
  }
}

}  // namespace detail

// Computes one layer's output. Pure; `skips` supplies residual sources by
// layer index.
template <typename T>
Tensor<T> layer_forward(const Layer<T>& layer, const Tensor<T>& input, const SkipInputs<T>& skips = {},
                        std::size_t index = 0) {
  const LayerSpec& spec = layer.spec;
  detail::check_input(spec, index, input);
  if (spec.has_weights()) detail::check_weights(layer, index);
  const Shape& s = input.shape();
  switch (spec.kind) {
    case LayerKind::kDense: {
      const std::size_t B = s[0], I = spec.in_dim, O = spec.out_dim;
      const Tensor<T>& w = layer.weights[0];
      const Tensor<T>& bias = layer.weights[1];
      Tensor<T> out({B, O});
      for (std::size_t b = 0; b < B; ++b) {
        const T* x = input.data() + b * I;
        for (std::size_t o = 0; o < O; ++o) {
          const T* wr = w.data() + o * I;
          T acc = bias[o];
          for (std::size_t i = 0; i < I; ++i) acc += wr[i] * x[i];
          out[b * O + o] = acc;
        }
      }
      return out;
    }
    case LayerKind::kRelu: {
      Tensor<T> out(s);
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
      return out;
    }
    case LayerKind::kTanh: {
      Tensor<T> out(s);
      for (std::size_t i = 0; i < input.size(); ++i) out[i] = std::tanh(input[i]);
      return out;
    }
    case LayerKind::kConv2d: {
      Tensor<T> out({s[0], spec.out_channels, s[2], s[3]});
      detail::conv2d_forward(input, layer.weights[0], layer.weights[1], out);
      return out;
    }
    case LayerKind::kAvgPool2d: {
      const std::size_t B = s[0], C = s[1], H = s[2], W = s[3], k = spec.window;
      const std::size_t Ho = H / k, Wo = W / k;
      Tensor<T> out({B, C, Ho, Wo});
      const T scale = T(1) / static_cast<T>(k * k);
      for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* ip = input.data() + bc * H * W;
        T* op = out.data() + bc * Ho * Wo;
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) op[(y / k) * Wo + x / k] += ip[y * W + x];
        }
        for (std::size_t i = 0; i < Ho * Wo; ++i) op[i] *= scale;
      }
      return out;
    }
    case LayerKind::kFlatten:
      return input.reshaped({s[0], input.size() / s[0]});
    case LayerKind::kResidualAdd: {
      auto it = skips.find(spec.source);
      if (it == skips.end() || it->second == nullptr) {
        throw ShapeError(layer_label(spec, index) + ": missing skip source " + std::to_string(spec.source));
      }
      const Tensor<T>& skip = *it->second;
      detail::require(skip.shape() == s, spec, index, "skip source shape equal to input " + shape_string(s),
                      skip.shape());
      Tensor<T> out = input;
      out += skip;
      return out;
    }
  }
  throw Error("unreachable layer kind");
}

// Exact reverse-mode gradients of layer_forward at `input` for the upstream
// gradient `upstream`.
template <typename T>
LayerGrads<T> layer_backward(const Layer<T>& layer, const Tensor<T>& input, const Tensor<T>& upstream,
                             std::size_t index = 0) {
  const LayerSpec& spec = layer.spec;
  detail::check_input(spec, index, input);
  if (spec.has_weights()) detail::check_weights(layer, index);
  const Shape& s = input.shape();
  Shape expected_out = s;
  switch (spec.kind) {
    case LayerKind::kDense: expected_out = {s[0], spec.out_dim}; break;
    case LayerKind::kConv2d: expected_out = {s[0], spec.out_channels, s[2], s[3]}; break;
    case LayerKind::kAvgPool2d: expected_out = {s[0], s[1], s[2] / spec.window, s[3] / spec.window}; break;
    case LayerKind::kFlatten: expected_out = {s[0], input.size() / s[0]}; break;
    default: break;
  }
  detail::require(upstream.shape() == expected_out, spec, index,
                  "upstream gradient of shape " + shape_string(expected_out), upstream.shape());

  LayerGrads<T> g;
  switch (spec.kind) {
    case LayerKind::kDense: {
      const std::size_t B = s[0], I = spec.in_dim, O = spec.out_dim;
      const Tensor<T>& w = layer.weights[0];
      Tensor<T> dw({O, I}), db({O}), dx({B, I});
      for (std::size_t b = 0; b < B; ++b) {
        const T* x = input.data() + b * I;
        const T* gr = upstream.data() + b * O;
        T* dxr = dx.data() + b * I;
        for (std::size_t o = 0; o < O; ++o) {
          const T go = gr[o];
          db[o] += go;
          T* dwr = dw.data() + o * I;
          const T* wr = w.data() + o * I;
          for (std::size_t i = 0; i < I; ++i) {
            dwr[i] += go * x[i];
            dxr[i] += go * wr[i];
          }
        }
      }
      g.input_grad = std::move(dx);
      g.weight_grads.push_back(std::move(dw));
      g.weight_grads.push_back(std::move(db));
      break;
    }
    case LayerKind::kRelu: {
      Tensor<T> dx(s);
      for (std::size_t i = 0; i < input.size(); ++i) dx[i] = input[i] > T(0) ? upstream[i] : T(0);
      g.input_grad = std::move(dx);
      break;
    }
    case LayerKind::kTanh: {
      Tensor<T> dx(s);
      for (std::size_t i = 0; i < input.size(); ++i) {
        const T y = std::tanh(input[i]);
        dx[i] = upstream[i] * (T(1) - y * y);
      }
      g.input_grad = std::move(dx);
      break;
    }
    case LayerKind::kConv2d: {
      Tensor<T> dx(s), dw(param_shapes(spec)[0]), db({spec.out_channels});
      detail::conv2d_backward(input, layer.weights[0], upstream, dx, dw, db);
      g.input_grad = std::move(dx);
      g.weight_grads.push_back(std::move(dw));
      g.weight_grads.push_back(std::move(db));
      break;
    }
    case LayerKind::kAvgPool2d: {
      const std::size_t B = s[0], C = s[1], H = s[2], W = s[3], k = spec.window;
      const std::size_t Wo = W / k, Ho = H / k;
      const T scale = T(1) / static_cast<T>(k * k);
      Tensor<T> dx(s);
      for (std::size_t bc = 0; bc < B * C; ++bc) {
        const T* gp = upstream.data() + bc * Ho * Wo;
        T* dp = dx.data() + bc * H * W;
        for (std::size_t y = 0; y < H; ++y) {
          for (std::size_t x = 0; x < W; ++x) dp[y * W + x] = gp[(y / k) * Wo + x / k] * scale;
        }
      }
      g.input_grad = std::move(dx);
      break;
    }
    case LayerKind::kFlatten:
      g.input_grad = upstream.reshaped(s);
      break;
    case LayerKind::kResidualAdd:
      g.input_grad = upstream;
      g.skip_grads.emplace(spec.source, upstream);
      break;
  }
  return g;
}

}  // namespace partime
