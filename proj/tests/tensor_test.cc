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

#include <cmath>
#include <limits>

#include "blockfuse/errors.h"
#include "blockfuse/executor.h"
#include "blockfuse/kernels.h"
#include "test_util.h"

namespace blockfuse {
namespace {

using testing::oracle_conv;
using testing::random_conv;
using testing::random_tensor;

TEST(TensorTest, RejectsWrongDataLength) {
  EXPECT_THROW(Tensor({1, 2, 2, 2}, std::vector<double>(7)), ShapeError);
}

TEST(TensorTest, CheckedRejectsNonFinite) {
  std::vector<double> v(4, 1.0);
  v[2] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(Tensor::checked({1, 1, 2, 2}, v), NumericError);
  v[2] = std::numeric_limits<double>::infinity();
  EXPECT_THROW(Tensor::checked({1, 1, 2, 2}, v), NumericError);
}

TEST(TensorTest, F32RoundsToFloat) {
  Tensor t({1, 1, 1, 1}, 0.1, Precision::kF32);
  t.round_to_precision();
  EXPECT_EQ(t.data()[0], static_cast<double>(0.1f));
  EXPECT_NE(t.data()[0], 0.1);
}

TEST(ConvTest, IdentityPointwiseIsIdentity) {
  ConvLayer c = ConvLayer::make(2, 2, 1);
  c.w(0, 0, 0, 0) = 1.0;
  c.w(1, 1, 0, 0) = 1.0;
  Rng rng(1);
  const Tensor x = random_tensor({2, 2, 5, 3}, rng);
  EXPECT_EQ(conv2d(c, x), x);
}

TEST(ConvTest, DepthwiseMatchesOracle) {
  Rng rng(2);
  const ConvLayer c = random_conv(rng, 4, 4, 3, 1, 1, 4);
  const Tensor x = random_tensor({1, 4, 8, 8}, rng);
  EXPECT_LE(max_abs_diff(conv2d(c, x), oracle_conv(c, x)), 1e-12);
}

TEST(ConvTest, RandomConvsMatchOracle) {
  Rng rng(3);
  for (int trial = 0; trial < 40; ++trial) {
    const int groups = 1 + static_cast<int>(rng.below(3));
    const int c_in = groups * (1 + static_cast<int>(rng.below(3)));
    const int c_out = groups * (1 + static_cast<int>(rng.below(3)));
    const int k = 1 + 2 * static_cast<int>(rng.below(3));
    const int s = 1 + static_cast<int>(rng.below(2));
    const int p = static_cast<int>(rng.below(3));
    const int h = k + static_cast<int>(rng.below(6));
    const ConvLayer c = random_conv(rng, c_in, c_out, k, s, p, groups, trial % 2);
    const Tensor x = random_tensor({2, c_in, h, h + 1}, rng);
    EXPECT_LE(max_abs_diff(conv2d(c, x), oracle_conv(c, x)), 1e-12) << trial;
  }
}

TEST(ConvTest, GroupedEqualsConcatenatedDenseSlices) {
  Rng rng(4);
  const int groups = 3, per_in = 2, per_out = 2;
  const ConvLayer grouped =
      random_conv(rng, groups * per_in, groups * per_out, 3, 1, 1, groups);
  const Tensor x = random_tensor({1, groups * per_in, 6, 6}, rng);
  const Tensor y = conv2d(grouped, x);
  for (int g = 0; g < groups; ++g) {
    ConvLayer dense = ConvLayer::make(per_in, per_out, 3, 1, 1);
    for (int o = 0; o < per_out; ++o)
      for (int i = 0; i < per_in; ++i)
        for (int a = 0; a < 3; ++a)
          for (int b = 0; b < 3; ++b)
            dense.w(o, i, a, b) = grouped.w(g * per_out + o, i, a, b);
    Tensor slice({1, per_in, 6, 6});
    for (int i = 0; i < per_in; ++i)
      for (int h = 0; h < 6; ++h)
        for (int w = 0; w < 6; ++w) slice.at(0, i, h, w) = x.at(0, g * per_in + i, h, w);
    const Tensor part = conv2d(dense, slice);
    for (int o = 0; o < per_out; ++o)
      for (int h = 0; h < 6; ++h)
        for (int w = 0; w < 6; ++w)
          EXPECT_NEAR(part.at(0, o, h, w), y.at(0, g * per_out + o, h, w), 1e-12);
  }
}

TEST(ConvTest, ShapeLawHoldsForRandomGeometry) {
  Rng rng(5);
  for (int trial = 0; trial < 500; ++trial) {
    const int k = 1 + static_cast<int>(rng.below(7));
    const int s = 1 + static_cast<int>(rng.below(3));
    const int p = static_cast<int>(rng.below(4));
    const int in = std::max(1, k - 2 * p) + static_cast<int>(rng.below(20));
    const ConvLayer c = ConvLayer::make(1, 1, k, s, p);
    const Shape shapes[1] = {Shape{1, 1, in, in}};
    const Shape out = output_shape(Layer{c}, shapes);
    EXPECT_EQ(out[2], (in + 2 * p - k) / s + 1);
  }
}

TEST(ConvTest, ChannelMismatchNamesAxis) {
  const ConvLayer c = ConvLayer::make(3, 4, 3, 1, 1);
  const Shape shapes[1] = {Shape{1, 2, 8, 8}};
  try {
    output_shape(Layer{c}, shapes);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("channel"), std::string::npos);
  }
}

TEST(ConvTest, WindowLargerThanInputIsShapeError) {
  const ConvLayer c = ConvLayer::make(1, 1, 5);
  const Shape shapes[1] = {Shape{1, 1, 3, 3}};
  EXPECT_THROW(output_shape(Layer{c}, shapes), ShapeError);
}

TEST(ExecuteLayerTest, CheckedModeRejectsNaNInput) {
  Tensor x({1, 1, 2, 2});
  x.data()[1] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(execute_layer(Layer{ActivationLayer{ActivationKind::kReLU}}, x),
               NumericError);
}

TEST(ActivationTest, Relu6Clamps) {
  const Tensor x({1, 3, 1, 1}, std::vector<double>{-1, 3, 9});
  const Tensor y = activation(ActivationKind::kReLU6, x);
  EXPECT_EQ(y.vec(), (std::vector<double>{0, 3, 6}));
}

TEST(BatchNormTest, MatchesFormula) {
  Rng rng(6);
  const BatchNormLayer bn = testing::random_bn(rng, 3, false);
  const Tensor x = random_tensor({2, 3, 2, 2}, rng);
  const Tensor y = batch_norm(bn, x);
  for (int n = 0; n < 2; ++n)
    for (int c = 0; c < 3; ++c)
      for (int h = 0; h < 2; ++h)
        for (int w = 0; w < 2; ++w)
          EXPECT_NEAR(y.at(n, c, h, w), testing::oracle_bn(bn, c, x.at(n, c, h, w)),
                      1e-14);
}

TEST(LinearityTest, BiasFreeLayersAreLinear) {
  Rng rng(7);
  ConvLayer conv = random_conv(rng, 3, 2, 3, 2, 1);
  BatchNormLayer bn = testing::random_bn(rng, 3, true);
  LinearLayer fc = LinearLayer::make(12, 5, false);
  for (double& v : fc.weights) v = rng.normal();
  const std::vector<std::pair<Layer, Shape>> cases = {
      {conv, {2, 3, 6, 6}},
      {bn, {2, 3, 4, 4}},
      {AvgPoolLayer{2, 2}, {2, 3, 4, 4}},
      {fc, {2, 12, 1, 1}},
  };
  for (const auto& [layer, shape] : cases) {
    const Tensor x = random_tensor(shape, rng);
    const Tensor y = random_tensor(shape, rng);
    const double a = rng.normal(), b = rng.normal();
    Tensor mix(shape);
    for (std::size_t i = 0; i < mix.size(); ++i)
      mix.data()[i] = a * x.data()[i] + b * y.data()[i];
    const Tensor fx = execute_layer(layer, x), fy = execute_layer(layer, y);
    const Tensor fm = execute_layer(layer, mix);
    for (std::size_t i = 0; i < fm.size(); ++i)
      EXPECT_NEAR(fm.data()[i], a * fx.data()[i] + b * fy.data()[i], 1e-12)
          << op_name(layer);
  }
}

TEST(LinearTest, MatchesMatrixProduct) {
  LinearLayer fc = LinearLayer::make(3, 2, true);
  fc.weights = {1, 2, 3, 4, 5, 6};
  fc.bias = {0.5, -1};
  const Tensor y = linear(fc, Tensor({1, 3, 1, 1}, std::vector<double>{1, 0, -1}));
  EXPECT_EQ(y.vec(), (std::vector<double>{-1.5, -3}));
}

TEST(AvgPoolTest, AveragesWindows) {
  const Tensor x({1, 1, 2, 4}, std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8});
  const Tensor y = avg_pool(AvgPoolLayer{2, 2}, x);
  EXPECT_EQ(y.vec(), (std::vector<double>{3.5, 5.5}));
}

NetGraph chain(std::vector<Node> nodes, Shape input) {
  NetGraph g;
  g.input_dims = input;
  g.nodes = std::move(nodes);
  return g;
}

TEST(ExecuteGraphTest, SingleIdentityConv) {
  ConvLayer c = ConvLayer::make(2, 2, 1);
  c.w(0, 0, 0, 0) = c.w(1, 1, 0, 0) = 1.0;
  const NetGraph g = chain({Node{"c", c, {kGraphInput}}}, {1, 2, 4, 4});
  Rng rng(8);
  const Tensor x = random_tensor({1, 2, 4, 4}, rng);
  EXPECT_EQ(execute_graph(g, x), x);
}

TEST(ExecuteGraphTest, ChainEqualsSequentialLayers) {
  Rng rng(9);
  const ConvLayer a = random_conv(rng, 2, 3, 3, 1, 1);
  const ConvLayer b = random_conv(rng, 3, 2, 3, 2, 0, 1, true);
  const NetGraph g =
      chain({Node{"a", a, {kGraphInput}}, Node{"b", b, {"a"}}}, {1, 2, 7, 7});
  const Tensor x = random_tensor({1, 2, 7, 7}, rng);
  EXPECT_EQ(execute_graph(g, x), execute_layer(Layer{b}, execute_layer(Layer{a}, x)));
}

TEST(ExecuteGraphTest, ResidualAroundZeroConvIsIdentity) {
  const NetGraph g = chain({Node{"c", ConvLayer::make(3, 3, 3, 1, 1), {kGraphInput}},
                            Node{"add", AddLayer{}, {kGraphInput, "c"}}},
                           {1, 3, 5, 5});
  Rng rng(10);
  const Tensor x = random_tensor({2, 3, 5, 5}, rng);
  EXPECT_EQ(execute_graph(g, x), x);
}

TEST(ExecuteGraphTest, CyclicGraphIsIrError) {
  const NetGraph g = chain({Node{"a", ActivationLayer{}, {"b"}},
                            Node{"b", ActivationLayer{}, {"a"}}},
                           {1, 1, 2, 2});
  EXPECT_THROW(execute_graph(g, Tensor({1, 1, 2, 2})), IrError);
}

TEST(ExecuteGraphTest, RepeatedRunsAreBitIdentical) {
  const NetGraph g = randomize_weights(make_toy_irb(3), 11);
  Rng rng(12);
  const Tensor x = random_tensor({2, 3, 8, 8}, rng);
  EXPECT_EQ(execute_graph(g, x), execute_graph(g, x));
}

}  // namespace
}  // namespace blockfuse
