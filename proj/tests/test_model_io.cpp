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

#include <filesystem>
#include <fstream>
#include <sstream>

#include "partime/generators.hpp"
#include "partime/model_io.hpp"

using namespace partime;
namespace fs = std::filesystem;

namespace {

class ModelIo : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("partime_io_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }

  static std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
  }

  void write(const fs::path& p, const std::string& s) {
    std::ofstream os(p);
    os << s;
  }

  fs::path dir_;
};

}  // namespace

TEST_F(ModelIo, RoundTripIsByteStable) {
  const auto ok = build_model<double>({LayerSpec::conv2d(2, 3, 3), LayerSpec::relu(), LayerSpec::conv2d(3, 3, 1),
                                       LayerSpec::residual_add(0), LayerSpec::avgpool2d(2), LayerSpec::flatten(),
                                       LayerSpec::dense(12, 4)},
                                      {2, 4, 4}, LossKind::kSoftmaxCrossEntropy, 42);
  model_save(ok, dir_ / "a.model");
  const auto loaded = model_load<double>(dir_ / "a.model");
  model_save(loaded, dir_ / "b.model");
  EXPECT_EQ(slurp(dir_ / "a.model.weights"), slurp(dir_ / "b.model.weights"));
  auto spec_a = slurp(dir_ / "a.model"), spec_b = slurp(dir_ / "b.model");
  const auto strip = [](std::string s) { return s.substr(0, s.find("weights ")); };
  EXPECT_EQ(strip(spec_a), strip(spec_b));
  for (std::size_t i = 0; i < ok.layers.size(); ++i) {
    EXPECT_EQ(ok.layers[i].spec, loaded.layers[i].spec);
    EXPECT_EQ(ok.layers[i].weights, loaded.layers[i].weights);
  }
}

TEST_F(ModelIo, FloatModelRoundTrip) {
  const auto m = pixelwise_model<float>(2, 1, 4, 2, 3);
  model_save(m, dir_ / "p.model");
  ModelFileInfo info;
  const auto l = model_load<float>(dir_ / "p.model", &info);
  EXPECT_EQ(info.numeric, NumericMode::kF32);
  EXPECT_EQ(l.layers[0].weights, m.layers[0].weights);
}

TEST_F(ModelIo, SpecWithoutWeightsHonoursOutputWidth) {
  write(dir_ / "s.model",
        "partime-model 1\n# three layers\nseed 7\ninput 8\nloss mse\nlayer dense in=8 out=10\nlayer relu\n"
        "layer dense in=10 out=5\n");
  const auto m = model_load<double>(dir_ / "s.model");
  EXPECT_EQ(m.layers.size(), 3u);
  EXPECT_EQ(output_dim(m), 5u);
  EXPECT_EQ(m.layers[2].weights, model_load<double>(dir_ / "s.model").layers[2].weights);
}

TEST_F(ModelIo, MalformedFilesNameLineAndField) {
  write(dir_ / "bad.model", "partime-model 1\nseed 7\ninput 8\nloss mse\nlayer dense in=eight out=10\n");
  try {
    model_load<double>(dir_ / "bad.model");
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("line 5"), std::string::npos) << msg;
    EXPECT_NE(msg.find("'in'"), std::string::npos) << msg;
  }
  write(dir_ / "bad2.model", "partime-model 1\nseed 7\ninput 8\nloss hinge\n");
  EXPECT_THROW(model_load<double>(dir_ / "bad2.model"), ParseError);
  EXPECT_THROW(model_load<double>(dir_ / "missing.model"), Error);
}

TEST_F(ModelIo, WeightShapeMismatchNamesLayer) {
  const auto m = build_model<double>({LayerSpec::dense(4, 3), LayerSpec::relu(), LayerSpec::dense(3, 2)}, {4},
                                     LossKind::kMse, 1);
  model_save(m, dir_ / "m.model");
  auto spec = slurp(dir_ / "m.model");
  const auto pos = spec.find("out=2");
  ASSERT_NE(pos, std::string::npos);
  spec.replace(pos, 5, "out=3");
  write(dir_ / "m.model", spec);
  try {
    model_load<double>(dir_ / "m.model");
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("layer 2"), std::string::npos) << e.what();
  }
}
