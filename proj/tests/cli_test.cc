// Copyright 2026 The Blockfuse Authors. All Rights Reserved.
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
#include <sstream>

#include "blockfuse/cost.h"
#include "blockfuse/expand.h"
#include "blockfuse/fixtures.h"
#include "blockfuse/serialize.h"
#include "cli.h"
#include "json.hpp"

namespace blockfuse {
namespace {

namespace fs = std::filesystem;

struct CliRun {
  int code;
  std::string out;
  std::string err;
};

CliRun blockfuse_cli(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

class CliTest : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() / (std::string("blockfuse_cli_") + info->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  std::string path(const std::string& rel) const { return (dir_ / rel).string(); }

  fs::path dir_;
};

TEST_F(CliTest, MissingRequiredFlagIsUsageError) {
  const CliRun r = blockfuse_cli({"shrink", "--weights", "w", "--mask", "m", "--out", "o"});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("--graph"), std::string::npos) << r.err;
}

TEST_F(CliTest, UnknownFlagAndMissingSubcommandAreUsageErrors) {
  EXPECT_EQ(blockfuse_cli({"cost", "--graph", "g.json", "--frobnicate"}).code, 2);
  EXPECT_EQ(blockfuse_cli({}).code, 2);
  EXPECT_EQ(blockfuse_cli({"gen-fixture", "mbv2", "--out", "o", "--precision", "f16"}).code, 2);
}

TEST_F(CliTest, HelpExitsZero) { EXPECT_EQ(blockfuse_cli({"--help"}).code, 0); }

TEST_F(CliTest, UnknownFixtureIsDomainErrorWithJson) {
  const CliRun r = blockfuse_cli({"gen-fixture", "resnet", "--out", path("x")});
  EXPECT_EQ(r.code, 1);
  const auto err = nlohmann::json::parse(r.err);
  EXPECT_TRUE(err.contains("error"));
  EXPECT_NE(err["message"].get<std::string>().find("resnet"), std::string::npos);
}

TEST_F(CliTest, MissingInputFileIsDomainError) {
  const CliRun r = blockfuse_cli({"cost", "--graph", path("nope.json")});
  EXPECT_EQ(r.code, 1);
  EXPECT_TRUE(nlohmann::json::accept(r.err)) << r.err;
}

TEST_F(CliTest, FixtureWeightsAreDeterministic) {
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "toy-irb-4", "--seed", "7", "--out", path("a")}).code, 0);
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "toy-irb-4", "--seed", "7", "--out", path("b")}).code, 0);
  EXPECT_EQ(read_file(path("a/weights.dswt")), read_file(path("b/weights.dswt")));
  EXPECT_EQ(read_file(path("a/graph.json")), read_file(path("b/graph.json")));
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "toy-irb-4", "--seed", "8", "--out", path("c")}).code, 0);
  EXPECT_NE(read_file(path("a/weights.dswt")), read_file(path("c/weights.dswt")));
}

TEST_F(CliTest, MobileNetFixtureFlops) {
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "mbv2", "--out", path("m")}).code, 0);
  for (const char* f : {"graph.json", "weights.dswt", "mask.json", "report.json", "latency.csv",
                        "masks/ds-a.json", "masks/ds-d.json"})
    EXPECT_TRUE(fs::exists(path(std::string("m/") + f))) << f;
  const double flops = flops_of_graph(load_graph(path("m/graph.json"))).total_flops;
  EXPECT_NEAR(flops / 1e9, 0.33, 0.033);
  const CliRun r = blockfuse_cli({"cost", "--graph", path("m/graph.json"), "--latency",
                               path("m/latency.csv"), "--out", path("cost")});
  EXPECT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(path("cost/report.json")));
  EXPECT_FALSE(r.out.empty());
}

TEST_F(CliTest, WideFixtureAcceptsAllSixMasks) {
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "mbv2-1.4", "--resolution", "32", "--out", path("w")})
                .code,
            0);
  const NetGraph g = load_graph(path("w/graph.json"));
  EXPECT_EQ(g.blocks.size(), 17u);
  for (const char* name : {"ds-a", "ds-b", "ds-c", "ds-d", "ds-e", "ds-f"}) {
    const std::vector<int> mask = load_mask(path(std::string("w/masks/") + name + ".json"));
    EXPECT_NO_THROW(static_cast<void>(apply_mask_vector(g, mask))) << name;
  }
}

TEST_F(CliTest, ShrinkThenVerifyOnZeroBiasMobileNet) {
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "mbv2", "--resolution", "32", "--out", path("m")}).code,
            0);
  const CliRun s = blockfuse_cli({"shrink", "--graph", path("m/graph.json"), "--weights",
                               path("m/weights.dswt"), "--mask", path("m/masks/ds-d.json"),
                               "--out", path("shrunk")});
  ASSERT_EQ(s.code, 0) << s.err;
  const CliRun v = blockfuse_cli({"verify", "--before", path("m/graph.json"), "--weights",
                               path("m/weights.dswt"), "--mask", path("m/masks/ds-d.json"),
                               "--after", path("shrunk/graph.json"), "--tol", "1e-8",
                               "--samples", "16", "--out", path("v")});
  EXPECT_EQ(v.code, 0) << v.out << v.err;
  EXPECT_TRUE(nlohmann::json::parse(read_file(path("v/report.json")))["pass"].get<bool>());

  // The same check fails once the merged weights are nudged.
  WeightTable w = load_weights(path("shrunk/weights.dswt"));
  WeightTable nudged;
  for (NamedArray a : w.arrays()) {
    if (a.name == "fc.weight")
      for (double& v : a.values) v += 1e-3;
    nudged.add(a);
  }
  save_weights(nudged, path("nudged.dswt"));
  const CliRun bad = blockfuse_cli({"verify", "--before", path("m/graph.json"), "--weights",
                                 path("m/weights.dswt"), "--mask", path("m/masks/ds-d.json"),
                                 "--after", path("shrunk/graph.json"), "--after-weights",
                                 path("nudged.dswt"), "--tol", "1e-8"});
  EXPECT_EQ(bad.code, 1);
  EXPECT_EQ(nlohmann::json::parse(bad.err)["error"], "equivalence");
}

TEST_F(CliTest, InputsAreNeverOverwrittenOrChanged) {
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "toy-irb-3", "--out", path("t")}).code, 0);
  const std::string graph = read_file(path("t/graph.json"));
  const std::string weights = read_file(path("t/weights.dswt"));
  const CliRun r = blockfuse_cli({"shrink", "--graph", path("t/graph.json"), "--weights",
                               path("t/weights.dswt"), "--mask", path("t/mask.json"), "--out",
                               path("t")});
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(read_file(path("t/graph.json")), graph);
  ASSERT_EQ(blockfuse_cli({"shrink", "--graph", path("t/graph.json"), "--weights",
                           path("t/weights.dswt"), "--mask", path("t/mask.json"), "--out",
                           path("s")})
                .code,
            0);
  EXPECT_EQ(read_file(path("t/graph.json")), graph);
  EXPECT_EQ(read_file(path("t/weights.dswt")), weights);
}

TEST_F(CliTest, SearchFinetuneShrinkVerifyPipeline) {
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "toy-irb-4", "--seed", "3", "--out", path("f")}).code,
            0);
  const std::vector<std::string> search{
      "search", "--graph", path("f/graph.json"), "--weights", path("f/weights.dswt"), "--k", "2",
      "--epochs", "1", "--samples", "64", "--latency", path("f/latency.csv"), "--decay", "0.05",
      "--seed", "5", "--out", path("s1")};
  const CliRun s = blockfuse_cli(search);
  ASSERT_EQ(s.code, 0) << s.err;
  const auto mask = load_mask(path("s1/mask.json"));
  EXPECT_EQ(std::count(mask.begin(), mask.end(), 1), 2);
  EXPECT_EQ(nlohmann::json::parse(read_file(path("s1/report.json")))["steps"].size(), 4u);

  std::vector<std::string> again = search;
  again.back() = path("s2");
  ASSERT_EQ(blockfuse_cli(again).code, 0);
  EXPECT_EQ(read_file(path("s1/weights.dswt")), read_file(path("s2/weights.dswt")));

  const CliRun f = blockfuse_cli({"finetune", "--graph", path("s1/graph.json"), "--weights",
                               path("s1/weights.dswt"), "--mask", path("s1/mask.json"),
                               "--teacher", path("s1/graph.json"), "--epochs", "1", "--samples",
                               "64", "--out", path("ft")});
  ASSERT_EQ(f.code, 0) << f.err;
  const CliRun sh = blockfuse_cli({"shrink", "--graph", path("ft/graph.json"), "--weights",
                                path("ft/weights.dswt"), "--mask", path("ft/mask.json"), "--out",
                                path("deploy")});
  ASSERT_EQ(sh.code, 0) << sh.err;
  const CliRun v = blockfuse_cli({"verify", "--before", path("ft/graph.json"), "--after",
                               path("deploy/graph.json"), "--mask", path("ft/mask.json")});
  EXPECT_EQ(v.code, 0) << v.out << v.err;
}

TEST_F(CliTest, ExpandThenShrinkRestoresArchitecture) {
  ASSERT_EQ(blockfuse_cli({"gen-fixture", "vgg-toy", "--out", path("v")}).code, 0);
  ASSERT_EQ(blockfuse_cli({"expand", "--graph", path("v/graph.json"), "--weights",
                           path("v/weights.dswt"), "--activation", "identity", "--out", path("e")})
                .code,
            0);
  ASSERT_EQ(blockfuse_cli({"shrink", "--graph", path("e/graph.json"), "--weights",
                           path("e/weights.dswt"), "--mask", path("e/mask.json"), "--out",
                           path("c")})
                .code,
            0);
  EXPECT_EQ(architecture_signature(load_graph(path("c/graph.json"))),
            architecture_signature(load_graph(path("v/graph.json"))));
  EXPECT_EQ(blockfuse_cli({"verify", "--before", path("e/graph.json"), "--mask",
                           path("e/mask.json"), "--after", path("c/graph.json"), "--tol", "1e-10"})
                .code,
            0);
}

}  // namespace
}  // namespace blockfuse
