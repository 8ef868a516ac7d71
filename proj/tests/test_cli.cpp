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

#include <sys/wait.h>
#include <unistd.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <sstream>

#include "partime/generators.hpp"
#include "partime/model_io.hpp"

namespace fs = std::filesystem;

namespace {

struct Run {
  int code = -1;
  std::string out;
};

Run cli(const std::string& args, bool merge_stderr = false) {
  const std::string cmd =
      std::string(PARTIME_CLI_PATH) + " " + args + (merge_stderr ? " 2>&1" : " 2>/dev/null");
  Run r;
  FILE* p = popen(cmd.c_str(), "r");
  if (!p) return r;
  std::array<char, 4096> buf;
  std::size_t n;
  while ((n = fread(buf.data(), 1, buf.size(), p)) > 0) r.out.append(buf.data(), n);
  const int status = pclose(p);
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return r;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() / ("partime_cli_" + std::to_string(::getpid()));
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& name) const { return (dir_ / name).string(); }
  fs::path dir_;
};

}  // namespace

TEST_F(Cli, SimulateGrid) {
  const auto r = cli("simulate --policy partime --stages 3 --steps 7");
  ASSERT_EQ(r.code, 0);
  std::istringstream is(r.out);
  std::string json, s1, s2, s3;
  std::getline(is, json);
  EXPECT_EQ(nlohmann::json::parse(json)["staleness"], nlohmann::json({4, 2, 0}));
  std::getline(is, s1);
  std::getline(is, s2);
  std::getline(is, s3);
  EXPECT_EQ(s1.rfind("S1 |", 0), 0u);
  EXPECT_NE(s1.find("F6B2U"), std::string::npos) << s1;
  EXPECT_NE(s3.find("F4B4U"), std::string::npos) << s3;
}

TEST_F(Cli, SimulateAllCsv) {
  const auto r = cli("simulate --policy all --stages 4 --steps 32");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(first_line(r.out),
            "policy,stages,micro_batches,throughput,speedup,mean_idle,max_staleness,max_weight_versions,"
            "max_activation_stash");
  const auto bad = cli("simulate --policy zerobubble", true);
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.out.find("zerobubble"), std::string::npos);
}

TEST_F(Cli, BalanceSingleStage) {
  const auto m = partime::pixelwise_model<double>(5, 2, 8, 3, 1);
  partime::model_save(m, path("p.model"));
  const auto r = cli("balance --model " + path("p.model") + " --stages 1");
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(first_line(r.out), "[" + std::to_string(m.layers.size()) + "]");
  const auto j = cli("balance --model " + path("p.model") + " --stages 3 --emit-profile " + path("prof.json") +
                     " --json");
  ASSERT_EQ(j.code, 0);
  EXPECT_EQ(nlohmann::json::parse(j.out)["ranges"].size(), 3u);
  const auto again = cli("balance --model " + path("p.model") + " --stages 3 --profile " + path("prof.json"));
  EXPECT_EQ(again.code, 0);
  EXPECT_EQ(cli("balance --model " + path("p.model") + " --stages 99").code, 2);
  EXPECT_EQ(cli("balance --model " + path("missing.model")).code, 2);
}

TEST_F(Cli, TrainCsv) {
  const auto r = cli("train --stream drift2d --steps 30 --stages 2 --compare-sequential --window 5");
  ASSERT_EQ(r.code, 0);
  EXPECT_EQ(first_line(r.out), "step,sample_id,loss,windowed_mean_loss,seq_loss,seq_windowed_mean_loss");
  const auto plain = cli("train --stream constant --steps 10 --stages 2 --seed 3");
  ASSERT_EQ(plain.code, 0);
  EXPECT_EQ(first_line(plain.out), "step,sample_id,loss,windowed_mean_loss");
  EXPECT_EQ(cli("train --stream constant --steps 10 --stages 2 --lr 1e300").code, 3);
}

TEST_F(Cli, ReplayFromDatasetFile) {
  ASSERT_EQ(cli("dataset --path " + path("d.bin") + " --samples 40 --classes 3 --shape 2,2").code, 0);
  const auto r = cli("train --stream replay --dataset " + path("d.bin") + " --replay-window 4 --steps 100 --eval " +
                         path("d.bin"),
                     true);
  ASSERT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("held-out accuracy"), std::string::npos);
}

TEST_F(Cli, VerifySuites) {
  const auto r = cli("verify --suite grad --suite partition");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_NE(r.out.find("all suites passed"), std::string::npos);
  const auto bad = cli("verify --suite buffer --inject-buffer-fault");
  EXPECT_NE(bad.code, 0);
  EXPECT_NE(bad.out.find("FAIL buffer"), std::string::npos) << bad.out;
}

TEST_F(Cli, BenchIdealAndErrors) {
  const auto r = cli("bench --generator pixelwise --layers 4 --resolution 8 --filters 4 --stages 1,2,4 --steps 12 "
                     "--ideal --repeat 1");
  ASSERT_EQ(r.code, 0);
  std::istringstream is(r.out);
  std::string header, line;
  std::getline(is, header);
  const auto cols = [](const std::string& s) {
    std::vector<std::string> v;
    std::stringstream ss(s);
    std::string c;
    while (std::getline(ss, c, ',')) v.push_back(c);
    return v;
  };
  // The quoted plan column holds commas, so index from the end.
  const auto names = cols(header);
  const auto from_end = names.end() - std::find(names.begin(), names.end(), "speedup");
  for (double want : {1.0, 2.0, 4.0}) {
    ASSERT_TRUE(std::getline(is, line));
    const auto v = cols(line);
    EXPECT_NEAR(std::stod(v.at(v.size() - static_cast<std::size_t>(from_end))), want, 1e-9) << line;
  }
  EXPECT_EQ(cli("bench --generator pixelwise --layers 4 --stages 4 --steps 3").code, 2);
}

TEST_F(Cli, GlobalFlagsAfterSubcommand) {
  const auto a = cli("simulate --stages 2 --steps 3 --json");
  ASSERT_EQ(a.code, 0);
  EXPECT_EQ(nlohmann::json::parse(a.out)["stages"], 2);
  ASSERT_EQ(cli("--out " + path("o.csv") + " simulate --policy all --stages 2 --steps 8").code, 0);
  std::ifstream in(path("o.csv"));
  std::string l;
  std::getline(in, l);
  EXPECT_EQ(l.rfind("policy,", 0), 0u);
}
