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
#include <filesystem>
#include <fstream>

#include <unistd.h>

#include "partime/streams.hpp"

using namespace partime;
namespace fs = std::filesystem;

namespace {

DatasetFile tiny(std::size_t n) {
  DatasetFile ds;
  ds.shape = {2};
  ds.classes = 4;
  for (std::size_t i = 0; i < n; ++i) {
    ds.data.push_back(float(i));
    ds.data.push_back(float(10 * i));
    ds.labels.push_back(std::int32_t(i % 4));
  }
  return ds;
}

std::vector<std::size_t> rows(const ReplayStream<double>& s) {
  return {s.window_indices().begin(), s.window_indices().end()};
}

fs::path temp_file(const std::string& name) {
  return fs::temp_directory_path() / ("partime_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(Replay, NewestFirstWindow) {
  ReplayStream<double> s(tiny(4), 3);
  using V = std::vector<std::size_t>;
  s.next();
  EXPECT_EQ(rows(s), (V{0, 0, 0}));
  s.next();
  EXPECT_EQ(rows(s), (V{1, 0, 0}));
  s.next();
  EXPECT_EQ(rows(s), (V{2, 1, 0}));
  const auto last = s.next();
  EXPECT_EQ(rows(s), (V{3, 2, 1}));
  ASSERT_TRUE(last);
  EXPECT_EQ(last->x.shape(), (Shape{3, 2}));
  EXPECT_EQ(last->x[0], 3.0);
  EXPECT_EQ(last->x[5], 10.0);
  EXPECT_EQ(last->target[0], 3.0);
  EXPECT_FALSE(s.next());
}

TEST(Replay, RingWindowAndPasses) {
  ReplayStream<double> s(tiny(4), 3, 2, ReplayLayout::kRing);
  using V = std::vector<std::size_t>;
  s.next();
  s.next();
  EXPECT_EQ(rows(s), (V{1, 0, 0}));
  s.next();
  EXPECT_EQ(rows(s), (V{1, 2, 0}));
  s.next();
  EXPECT_EQ(rows(s), (V{1, 2, 3}));
  s.next();
  EXPECT_EQ(rows(s), (V{0, 2, 3}));
  int more = 0;
  while (s.next()) ++more;
  EXPECT_EQ(more, 3);
}

TEST(Replay, RejectsEmptyDataset) {
  EXPECT_THROW(ReplayStream<double>(tiny(0), 3), Error);
  EXPECT_THROW(ReplayStream<double>(tiny(2), 0), ContractViolation);
  EXPECT_EQ(parse_replay_layout("ring"), ReplayLayout::kRing);
  EXPECT_THROW(parse_replay_layout("lifo"), ParseError);
}

TEST(Dataset, RoundTripAndTruncation) {
  const auto path = temp_file("ds.bin");
  const auto ds = make_blob_dataset(50, 5, {3, 2, 2}, 0.5, 4, 9, 4);
  dataset_write(path, ds);
  const auto back = dataset_read(path);
  EXPECT_EQ(back.shape, ds.shape);
  EXPECT_EQ(back.classes, 5u);
  EXPECT_EQ(back.data, ds.data);
  EXPECT_EQ(back.labels, ds.labels);
  for (std::size_t i = 0; i + 1 < ds.size(); i += 4) EXPECT_EQ(ds.labels[i], ds.labels[i + 1]);

  const auto size = fs::file_size(path);
  fs::resize_file(path, size - 3);
  try {
    dataset_read(path);
    FAIL();
  } catch (const ParseError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find(std::to_string(size)), std::string::npos) << msg;
    EXPECT_NE(msg.find(std::to_string(size - 3)), std::string::npos) << msg;
  }
  {
    std::ofstream os(path, std::ios::binary);
    os << "nope";
  }
  EXPECT_THROW(dataset_read(path), ParseError);
  fs::remove(path);
}

TEST(Drift2d, MeansMoveSmoothly) {
  Drift2dConfig c;
  c.classes = 4;
  c.rho = 0.01;
  c.radius = 2.0;
  Drift2dStream<double> s(c);
  for (std::int64_t t = 0; t < 500; t += 7) {
    const auto a = s.class_means(t), b = s.class_means(t + 1);
    for (std::size_t k = 0; k < a.size(); ++k) {
      EXPECT_LE(std::hypot(a[k][0] - b[k][0], a[k][1] - b[k][1]), c.rho * c.radius + 1e-12);
      EXPECT_NEAR(std::hypot(a[k][0], a[k][1]), 2.0, 1e-12);
    }
  }
  c.rho = 0;
  Drift2dStream<double> still(c);
  EXPECT_EQ(still.class_means(0), still.class_means(100000));
}

TEST(Drift2d, SeededAndStratified) {
  Drift2dConfig c;
  c.batch = 5;
  c.seed = 17;
  Drift2dStream<double> a(c), b(c);
  for (int i = 0; i < 20; ++i) {
    const auto x = a.next(), y = b.next();
    EXPECT_EQ(x->x, y->x);
    EXPECT_EQ(x->id, i);
    for (std::size_t r = 0; r < 5; ++r) EXPECT_EQ(x->target[r], double(r % 3));
  }
  c.seed = 18;
  Drift2dStream<double> other(c);
  Drift2dStream<double> again(Drift2dConfig{.batch = 5, .seed = 17});
  EXPECT_NE(other.next()->x, again.next()->x);
  c.classes = 1;
  EXPECT_THROW(Drift2dStream<double>{c}, ContractViolation);
}

TEST(Constant, RepeatsItsSample) {
  Tensor<double> x({1, 3}), y({1, 1});
  x[1] = 2.5;
  ConstantStream<double> s(x, y);
  for (int i = 0; i < 4; ++i) {
    const auto v = s.next();
    EXPECT_EQ(v->x, x);
    EXPECT_EQ(v->id, i);
  }
  EXPECT_EQ(parse_stream_kind("replay"), StreamKind::kReplay);
  EXPECT_THROW(parse_stream_kind("firehose"), ParseError);
}
