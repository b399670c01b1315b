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

#include <numeric>

#include "blockfuse/errors.h"
#include "blockfuse/executor.h"
#include "blockfuse/fixtures.h"
#include "blockfuse/graph.h"
#include "test_util.h"

namespace blockfuse {
namespace {

std::string error_of(const NetGraph& g) {
  try {
    validate_graph(g);
  } catch (const ValidationError& e) {
    return e.what();
  }
  return "";
}

TEST(ValidateTest, MobileNetV2FeatureDims) {
  const NetGraph g = make_mobilenet_v2(1.0, 224);
  const ShapeTable shapes = validate_graph(g);
  EXPECT_EQ(shapes.at("head.act"), (Shape{1, 1280, 7, 7}));
  EXPECT_EQ(shapes.at("fc"), (Shape{1, 1000, 1, 1}));
  EXPECT_EQ(g.blocks.size(), 17u);
}

TEST(ValidateTest, EmptyGraph) {
  EXPECT_NE(error_of(NetGraph{}), "");
}

TEST(ValidateTest, DanglingInputNamesId) {
  NetGraph g;
  g.input_dims = {1, 1, 2, 2};
  g.nodes.push_back(Node{"a", ActivationLayer{}, {"ghost"}});
  EXPECT_NE(error_of(g).find("ghost"), std::string::npos);
}

TEST(ValidateTest, AddChannelConflictNamesNode) {
  NetGraph g;
  g.input_dims = {1, 2, 4, 4};
  g.nodes.push_back(Node{"c", ConvLayer::make(2, 3, 1), {kGraphInput}});
  g.nodes.push_back(Node{"sum", AddLayer{}, {kGraphInput, "c"}});
  const std::string err = error_of(g);
  EXPECT_NE(err.find("shape conflict"), std::string::npos) << err;
  EXPECT_NE(err.find("sum"), std::string::npos) << err;
}

TEST(ValidateTest, DuplicateIds) {
  NetGraph g;
  g.input_dims = {1, 1, 2, 2};
  g.nodes.push_back(Node{"a", ActivationLayer{}, {kGraphInput}});
  g.nodes.push_back(Node{"a", ActivationLayer{}, {"a"}});
  EXPECT_NE(error_of(g), "");
}

TEST(ValidateTest, TwoSinks) {
  NetGraph g;
  g.input_dims = {1, 1, 2, 2};
  g.nodes.push_back(Node{"a", ActivationLayer{}, {kGraphInput}});
  g.nodes.push_back(Node{"b", ActivationLayer{}, {kGraphInput}});
  EXPECT_NE(error_of(g), "");
}

TEST(ValidateTest, BlocksOutOfOrder) {
  NetGraph g = make_toy_irb(3);
  std::swap(g.blocks[0], g.blocks[1]);
  EXPECT_NE(error_of(g).find("re-indexed"), std::string::npos) << error_of(g);
  g = make_toy_irb(3);
  std::swap(g.blocks[0].block_id, g.blocks[1].block_id);
  EXPECT_NE(error_of(g), "");
}

TEST(ValidateTest, ResidualOnStridedBlockRejected) {
  testing::BlockSpec spec;
  spec.residual = true;
  NetGraph g = testing::block_graph(spec, 1);
  std::get<ConvLayer>(g.node("dw").layer).stride = 2;
  g.blocks[0].stride = 2;
  EXPECT_NE(error_of(g), "");
}

TEST(ValidateTest, WrongActivationListRejected) {
  NetGraph g = testing::block_graph({}, 1);
  g.blocks[0].act_node_ids = {"act1"};
  const std::string err = error_of(g);
  EXPECT_NE(err.find("block 0"), std::string::npos) << err;
}

TEST(ValidateTest, KernelAnnotationMismatchRejected) {
  NetGraph g = testing::block_graph({}, 1);
  g.blocks[0].dw_kernel = 5;
  EXPECT_NE(error_of(g), "");
}

TEST(ValidateTest, ExpandRatioMismatchRejected) {
  NetGraph g = testing::block_graph({}, 1);
  g.blocks[0].expand_ratio = 6;
  EXPECT_NE(error_of(g), "");
}

TEST(ValidateTest, DoesNotMutate) {
  const NetGraph g = randomize_weights(make_toy_irb(4), 3);
  const NetGraph copy = g;
  validate_graph(g);
  EXPECT_TRUE(structurally_equal(g, copy));
  EXPECT_EQ(std::get<ConvLayer>(g.node("b0.dw").layer).weights,
            std::get<ConvLayer>(copy.node("b0.dw").layer).weights);
}

TEST(TopologicalOrderTest, ProducersFirst) {
  const NetGraph g = make_toy_irb(4);
  const std::vector<int> order = topological_order(g);
  std::map<std::string, int> pos;
  for (std::size_t i = 0; i < order.size(); ++i) pos[g.nodes[order[i]].id] = i;
  for (const Node& n : g.nodes)
    for (const std::string& in : n.inputs)
      if (in != kGraphInput) EXPECT_LT(pos.at(in), pos.at(n.id));
}

TEST(ApplyMaskTest, AllOnesUnchanged) {
  const NetGraph g = randomize_weights(make_toy_irb(4), 4);
  const std::vector<int> ones(4, 1);
  const NetGraph m = apply_mask_vector(g, ones);
  Rng rng(5);
  const Tensor x = testing::random_tensor({2, 3, 8, 8}, rng);
  EXPECT_EQ(execute_graph(g, x), execute_graph(m, x));
}

int blocks_with_live_activations(const NetGraph& g) {
  int n = 0;
  for (const BlockAnnotation& b : g.blocks) {
    bool live = false;
    for (const std::string& id : b.act_node_ids)
      live = live || std::get<ActivationLayer>(g.node(id).layer).kind !=
                         ActivationKind::kIdentity;
    n += live;
  }
  return n;
}

TEST(ApplyMaskTest, ReferenceMasksOnWideFixture) {
  const NetGraph g = make_mobilenet_v2(1.4, 32);
  for (const auto& [name, mask] : mbv2_14_masks()) {
    const NetGraph m = apply_mask_vector(g, mask);
    EXPECT_EQ(blocks_with_live_activations(m),
              std::accumulate(mask.begin(), mask.end(), 0))
        << name;
    EXPECT_EQ(m.nodes.size(), g.nodes.size());
    EXPECT_EQ(validate_graph(m), validate_graph(g));
  }
  const auto& ds_a = mbv2_14_masks().front().second;
  EXPECT_EQ(blocks_with_live_activations(apply_mask_vector(g, ds_a)), 11);
  const auto& ds_f = mbv2_14_masks().back().second;
  EXPECT_EQ(blocks_with_live_activations(apply_mask_vector(g, ds_f)), 0);
}

TEST(ApplyMaskTest, LengthMismatch) {
  const NetGraph g = make_toy_irb(3);
  const std::vector<int> mask(2, 0);
  EXPECT_THROW(apply_mask_vector(g, mask), ValidationError);
}

TEST(LatencyTableTest, ChecksCoverage) {
  const NetGraph g = make_toy_irb(2);
  LatencyTable t{{{0, 1.0}, {1, 2.0}}};
  EXPECT_NO_THROW(check_latency_table(t, g));
  t.entries.pop_back();
  EXPECT_THROW(check_latency_table(t, g), ValidationError);
  t.entries = {{0, 1.0}, {1, -2.0}};
  EXPECT_THROW(check_latency_table(t, g), ValidationError);
}

}  // namespace
}  // namespace blockfuse
