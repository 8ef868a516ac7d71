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

#include <cmath>
#include <limits>

#include "partime/error.hpp"
#include "partime/rng.hpp"
#include "partime/tensor.hpp"

using namespace partime;

TEST(Tensor, ShapeAndData) {
  Tensor<double> t({2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_EQ(t.size(), 6u);
  EXPECT_EQ(t.rank(), 2u);
  EXPECT_EQ(t.dim(1), 3u);
  EXPECT_EQ(t[4], 5.0);
  EXPECT_EQ(t.bytes(), 48u);
  EXPECT_EQ(t.cast<float>().bytes(), 24u);
}

TEST(Tensor, RejectsBadConstruction) {
  EXPECT_THROW(Tensor<double>({2, 3}, {1, 2, 3}), ShapeError);
  EXPECT_THROW(Tensor<double>({2, 0}), ShapeError);
  EXPECT_THROW(Tensor<double>({1}, {std::numeric_limits<double>::quiet_NaN()}), NumericError);
  EXPECT_THROW(Tensor<double>({1}, {INFINITY}), NumericError);
  EXPECT_NO_THROW(Tensor<float>({1}, {INFINITY}));
}

TEST(Tensor, ArithmeticAndReshape) {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b = Tensor<double>::filled({2, 2}, 1.0);
  a += b;
  EXPECT_EQ(a, Tensor<double>({2, 2}, {2, 3, 4, 5}));
  EXPECT_EQ(a.reshaped({4}).shape(), Shape({4}));
  EXPECT_THROW(a.reshaped({3}), ShapeError);
  EXPECT_THROW(a += Tensor<double>({4}), ShapeError);
  EXPECT_DOUBLE_EQ(max_abs_diff(a, b), 4.0);
}

TEST(Tensor, NumericModeNames) {
  EXPECT_EQ(parse_numeric_mode("f32"), NumericMode::kF32);
  EXPECT_EQ(std::string(numeric_mode_name(numeric_mode_of<double>())), "f64");
  EXPECT_THROW(parse_numeric_mode("f16"), ParseError);
}

TEST(Rng, Deterministic) {
  Rng a(5), b(5), c(6);
  for (int i = 0; i < 10; ++i) {
    const double x = a.normal();
    EXPECT_EQ(x, b.normal());
    (void)c;
  }
  Rng d(5), e(6);
  EXPECT_NE(d.uniform(), e.uniform());
  EXPECT_NE(mix_seed(1, 2), mix_seed(2, 1));
}
