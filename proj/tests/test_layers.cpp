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

#include "oracles.hpp"
#include "partime/layers.hpp"
#include "partime/loss.hpp"
#include "partime/rng.hpp"

using namespace partime;

namespace {

Layer<double> dense_with(std::vector<double> w, std::vector<double> b, std::size_t in, std::size_t out) {
  return {LayerSpec::dense(in, out), {Tensor<double>({out, in}, std::move(w)), Tensor<double>({out}, std::move(b))}};
}

double dot(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace

TEST(Layers, DenseIdentity) {
  const auto l = dense_with({1, 0, 0, 1}, {0, 0}, 2, 2);
  EXPECT_EQ(layer_forward(l, Tensor<double>({1, 2}, {1, 2})), Tensor<double>({1, 2}, {1, 2}));
}

TEST(Layers, DenseMatrixVector) {
  const auto l = dense_with({1, 1, 0, 1}, {0, 0}, 2, 2);
  EXPECT_EQ(layer_forward(l, Tensor<double>({1, 2}, {1, 2})), Tensor<double>({1, 2}, {3, 2}));
}

TEST(Layers, Relu) {
  Layer<double> l{LayerSpec::relu(), {}};
  const Tensor<double> x({1, 2}, {-1, 2});
  EXPECT_EQ(layer_forward(l, x), Tensor<double>({1, 2}, {0, 2}));
  const auto g = layer_backward(l, x, Tensor<double>({1, 2}, {1, 1}));
  EXPECT_EQ(g.input_grad, Tensor<double>({1, 2}, {0, 1}));
  EXPECT_TRUE(g.weight_grads.empty());
}

TEST(Layers, DenseWeightGradIsOuterProduct) {
  Layer<double> l{LayerSpec::dense(3, 2), {}};
  l.spec.init_seed = 4;
  l.weights = init_weights<double>(l.spec);
  const Tensor<double> x({1, 3}, {0.5, -1, 2});
  const Tensor<double> up({1, 2}, {3, -2});
  const auto g = layer_backward(l, x, up);
  for (std::size_t o = 0; o < 2; ++o)
    for (std::size_t i = 0; i < 3; ++i) EXPECT_DOUBLE_EQ(g.weight_grads[0][o * 3 + i], up[o] * x[i]);
  Tensor<double> w = l.weights[0];
  auto f = [&] {
    Layer<double> tmp{l.spec, {w, l.weights[1]}};
    return dot(layer_forward(tmp, x), up);
  };
  EXPECT_LE(oracle::fd_rel_err(w, g.weight_grads[0], f), 1e-5);
}

TEST(Layers, ResidualAddRoutesGradient) {
  Layer<double> l{LayerSpec::residual_add(0), {}};
  const Tensor<double> x({1, 2}, {1, 2}), s({1, 2}, {10, 20});
  SkipInputs<double> skips{{0, &s}};
  EXPECT_EQ(layer_forward(l, x, skips, 2), Tensor<double>({1, 2}, {11, 22}));
  const Tensor<double> g({1, 2}, {0.5, -1});
  const auto gr = layer_backward(l, x, g, 2);
  EXPECT_EQ(gr.input_grad, g);
  ASSERT_EQ(gr.skip_grads.count(0), 1u);
  EXPECT_EQ(gr.skip_grads.at(0), g);
}

TEST(Layers, Errors) {
  const auto l = dense_with({1, 0, 0, 1}, {0, 0}, 2, 2);
  try {
    layer_forward(l, Tensor<double>({1, 3}), {}, 5);
    FAIL();
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("5"), std::string::npos);
  }
  Layer<double> r{LayerSpec::residual_add(0), {}};
  EXPECT_THROW(layer_forward(r, Tensor<double>({1, 2}), {}, 1), Error);
  EXPECT_THROW(layer_backward(l, Tensor<double>({1, 2}), Tensor<double>({1, 3})), ShapeError);
}

TEST(Layers, ConvAndPoolMatchReferenceLoops) {
  Rng rng(3);
  LayerSpec c = LayerSpec::conv2d(2, 3, 3);
  c.init_seed = 9;
  Layer<double> conv{c, init_weights<double>(c)};
  Tensor<double> x({2, 2, 5, 4});
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal();
  EXPECT_LE(max_abs_diff(layer_forward(conv, x), oracle::layer(conv, x, {})), 1e-12);
  Layer<double> pool{LayerSpec::avgpool2d(2), {}};
  Tensor<double> y({1, 2, 4, 4});
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
  EXPECT_LE(max_abs_diff(layer_forward(pool, y), oracle::layer(pool, y, {})), 1e-12);
}

TEST(Layers, InitWithinFanInBound) {
  LayerSpec s = LayerSpec::dense(16, 4);
  s.init_seed = 1;
  const auto w = init_weights<double>(s);
  for (double v : w[0].values()) EXPECT_LE(std::abs(v), 0.25);
  EXPECT_EQ(init_weights<double>(s)[0], w[0]);
}

TEST(Loss, MseZeroAndSoftmaxNormalised) {
  const Tensor<double> o({2, 3}, {1, 2, 3, -1, 0, 4});
  EXPECT_EQ(loss_eval(LossKind::kMse, o, o), 0.0);
  const auto p = softmax(o);
  for (std::size_t b = 0; b < 2; ++b) EXPECT_NEAR(p[b * 3] + p[b * 3 + 1] + p[b * 3 + 2], 1.0, 1e-12);
}

TEST(Loss, CrossEntropyLabelRange) {
  const Tensor<double> o({1, 3}, {1, 2, 3});
  EXPECT_THROW(loss_eval(LossKind::kSoftmaxCrossEntropy, o, Tensor<double>({1}, {3})), Error);
  EXPECT_THROW(loss_eval(LossKind::kSoftmaxCrossEntropy, o, Tensor<double>({1}, {-1})), Error);
  EXPECT_NO_THROW(loss_eval(LossKind::kSoftmaxCrossEntropy, o, Tensor<double>({1}, {2})));
}

TEST(Loss, GradientsMatchFiniteDifferences) {
  Rng rng(12);
  for (LossKind k : {LossKind::kMse, LossKind::kSoftmaxCrossEntropy}) {
    Tensor<double> o({3, 4});
    for (std::size_t i = 0; i < o.size(); ++i) o[i] = rng.normal();
    Tensor<double> y = k == LossKind::kMse ? Tensor<double>({3, 4}) : Tensor<double>({3}, {0, 3, 1});
    if (k == LossKind::kMse)
      for (std::size_t i = 0; i < y.size(); ++i) y[i] = rng.normal();
    const auto g = loss_grad(k, o, y);
    EXPECT_LE(oracle::fd_rel_err(o, g, [&] { return loss_eval(k, o, y); }), 1e-5);
  }
}
