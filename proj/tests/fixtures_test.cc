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
#include "blockfuse/merge.h"
#include "test_util.h"

namespace blockfuse {
namespace {

TEST(FixtureTest, Names) {
  EXPECT_EQ(make_fixture("mbv2", 32).blocks.size(), 17u);
  EXPECT_EQ(make_fixture("mbv2-1.4", 32).blocks.size(), 17u);
  EXPECT_EQ(make_fixture("toy-irb-5").blocks.size(), 5u);
  EXPECT_EQ(make_fixture("vgg-toy").blocks.size(), 0u);
  EXPECT_THROW(make_fixture("resnet"), Error);
  EXPECT_THROW(make_fixture("toy-irb-"), Error);
  EXPECT_THROW(make_fixture("toy-irb-x"), Error);
}

TEST(FixtureTest, WideLayoutChannels) {
  const NetGraph g = make_mobilenet_v2(1.4, 224);
  const ShapeTable s = validate_graph(g);
  EXPECT_EQ(s.at("stem.conv"), (Shape{1, 48, 112, 112}));
  EXPECT_EQ(s.at("head.act"), (Shape{1, 1792, 7, 7}));
  EXPECT_EQ(s.at("b16.bn3")[1], 448);
}

TEST(FixtureTest, ResidualBlocksFollowLayout) {
  const NetGraph g = make_mobilenet_v2(1.0, 224);
  int residual = 0;
  for (const BlockAnnotation& b : g.blocks) residual += b.has_residual;
  EXPECT_EQ(residual, 10);
  EXPECT_EQ(g.blocks[0].expand_ratio, 1.0);
  EXPECT_EQ(g.blocks[1].stride, 2);
}

TEST(FixtureTest, ReferenceMasksHaveSeventeenSlots) {
  const NetGraph g = make_mobilenet_v2(1.4, 32);
  for (const auto& [name, mask] : mbv2_14_masks()) {
    EXPECT_EQ(mask.size(), 17u) << name;
    EXPECT_NO_THROW(apply_mask_vector(g, mask));
  }
  for (const auto& [name, mask] : mbv2_masks()) EXPECT_EQ(mask.size(), 17u) << name;
  EXPECT_EQ(mbv2_14_masks().size(), 6u);
  EXPECT_EQ(mbv2_masks().size(), 4u);
}

TEST(FixtureTest, ZeroBiasWeightsFoldToZeroBias) {
  const NetGraph g = randomize_weights(make_toy_irb(3), 1);
  const std::vector<int> zeros(3, 0);
  const ShrinkResult r = shrink_graph(apply_mask_vector(g, zeros), zeros);
  EXPECT_TRUE(r.report.all_boundary_exact());
  for (const Node& n : r.graph.nodes)
    if (const auto* c = std::get_if<ConvLayer>(&n.layer))
      for (double b : c->bias) EXPECT_EQ(b, 0.0);
}

TEST(FixtureTest, SeededWeightsAreReproducible) {
  const NetGraph a = randomize_weights(make_toy_irb(2), 5);
  const NetGraph b = randomize_weights(make_toy_irb(2), 5);
  const NetGraph c = randomize_weights(make_toy_irb(2), 6);
  const Tensor x({1, 3, 8, 8}, 0.5);
  EXPECT_EQ(execute_graph(a, x), execute_graph(b, x));
  EXPECT_NE(execute_graph(a, x), execute_graph(c, x));
}

TEST(FixtureTest, LatencyTableCoversBlocks) {
  const NetGraph g = make_toy_irb(3);
  EXPECT_NO_THROW(check_latency_table(flops_latency_table(g), g));
}

}  // namespace
}  // namespace blockfuse
