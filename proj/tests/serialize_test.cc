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

#include <bit>
#include <cstring>
#include <filesystem>

#include "blockfuse/errors.h"
#include "blockfuse/executor.h"
#include "blockfuse/fixtures.h"
#include "blockfuse/serialize.h"
#include "json.hpp"
#include "test_util.h"

namespace blockfuse {
namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "blockfuse_serialize_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

TEST(GraphJsonTest, MobileNetRoundTrip) {
  const NetGraph g = make_mobilenet_v2(1.0, 224);
  const auto path = temp_path("mbv2.json");
  save_graph(g, path);
  EXPECT_TRUE(structurally_equal(load_graph(path), g));
}

TEST(GraphJsonTest, RoundTripKeepsMetadataAndBias) {
  NetGraph g = make_toy_irb(2);
  g.metadata["note"] = "x";
  std::get<ConvLayer>(g.node("stem.conv").layer).bias.assign(8, 0.0);
  const NetGraph back = graph_from_json(graph_to_json(g));
  EXPECT_TRUE(structurally_equal(back, g));
  EXPECT_EQ(back.metadata.at("note"), "x");
  EXPECT_TRUE(std::get<ConvLayer>(back.node("stem.conv").layer).has_bias());
}

TEST(GraphJsonTest, SchemaErrorCarriesPath) {
  nlohmann::json doc = nlohmann::json::parse(graph_to_json(make_toy_irb(1)));
  doc["nodes"][0]["params"]["kernel"] = "3";
  const std::string text = doc.dump();
  try {
    graph_from_json(text);
    FAIL() << "expected ParseError";
  } catch (const ParseError& e) {
    EXPECT_NE(std::string(e.what()).find("/nodes/"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("kernel"), std::string::npos) << e.what();
  }
}

TEST(GraphJsonTest, MalformedJsonIsParseError) {
  EXPECT_THROW(graph_from_json("{\"version\": 1,"), ParseError);
  EXPECT_THROW(graph_from_json("[]"), ParseError);
}

TEST(GraphJsonTest, DanglingInputIsValidationError) {
  nlohmann::json doc = nlohmann::json::parse(graph_to_json(make_toy_irb(1)));
  doc["nodes"][1]["inputs"] = {"nowhere"};
  const std::string text = doc.dump();
  try {
    graph_from_json(text);
    FAIL() << "expected ValidationError";
  } catch (const ValidationError& e) {
    EXPECT_NE(std::string(e.what()).find("nowhere"), std::string::npos);
  }
}

// Expected encoding assembled byte by byte.
std::string expected_bytes(const NamedArray& a) {
  std::string out = "DSWT";
  auto u32 = [&](std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  u32(1);
  u32(1);
  out.push_back(static_cast<char>(a.name.size() & 0xff));
  out.push_back(static_cast<char>(a.name.size() >> 8));
  out += a.name;
  out.push_back(1);
  out.push_back(static_cast<char>(a.dims.size()));
  for (auto d : a.dims) u32(d);
  for (double v : a.values) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
  }
  return out;
}

TEST(WeightsTest, ByteLayoutAndRoundTrip) {
  NamedArray a{"conv.weight", DType::kF64, {2, 1, 3, 3}, {}};
  Rng rng(1);
  for (int i = 0; i < 18; ++i) a.values.push_back(rng.normal());
  WeightTable t;
  t.add(a);
  const std::string bytes = encode_weights(t);
  EXPECT_EQ(bytes, expected_bytes(a));
  const auto path = temp_path("w.dswt");
  save_weights(t, path);
  const WeightTable back = load_weights(path);
  EXPECT_EQ(encode_weights(back), bytes);
  EXPECT_EQ(back.find("conv.weight")->values, a.values);
}

TEST(WeightsTest, F32RoundTrip) {
  WeightTable t;
  t.add(NamedArray{"a", DType::kF32, {3}, {0.5, -1.25, static_cast<double>(0.1f)}});
  const WeightTable back = decode_weights(encode_weights(t));
  EXPECT_EQ(back.find("a")->values, t.find("a")->values);
  EXPECT_EQ(encode_weights(t).size(), 4u + 8 + 2 + 1 + 2 + 4 + 12);
}

TEST(WeightsTest, BadMagic) {
  WeightTable t;
  t.add(NamedArray{"a", DType::kF64, {1}, {1.0}});
  std::string bytes = encode_weights(t);
  bytes.replace(0, 4, "XXXX");
  EXPECT_THROW(decode_weights(bytes), FormatError);
}

TEST(WeightsTest, TruncatedAndTrailing) {
  WeightTable t;
  t.add(NamedArray{"a", DType::kF64, {2}, {1.0, 2.0}});
  const std::string bytes = encode_weights(t);
  for (std::size_t cut = 0; cut < bytes.size(); ++cut)
    EXPECT_THROW(decode_weights(bytes.substr(0, cut)), FormatError) << cut;
  EXPECT_THROW(decode_weights(bytes + "z"), FormatError);
}

TEST(WeightsTest, DuplicateName) {
  WeightTable t;
  t.add(NamedArray{"a", DType::kF64, {1}, {1.0}});
  EXPECT_THROW(t.add(NamedArray{"a", DType::kF64, {1}, {2.0}}), FormatError);
  // A file carrying the same name twice is rejected on read as well.
  std::string one = encode_weights(t);
  std::string two = one.substr(0, 8);
  two += '\x02';
  two += std::string(3, '\0');
  two += one.substr(12) + one.substr(12);
  EXPECT_THROW(decode_weights(two), FormatError);
}

TEST(WeightsTest, ExtractBindRoundTrip) {
  const NetGraph g = randomize_weights(make_toy_irb(3), 2, InitOptions{false});
  const WeightTable t = extract_weights(g);
  const NetGraph bound = bind_weights(randomize_weights(make_toy_irb(3), 9, InitOptions{false}), t);
  Rng rng(3);
  const Tensor x = testing::random_tensor({1, 3, 8, 8}, rng);
  EXPECT_EQ(execute_graph(bound, x), execute_graph(g, x));
}

TEST(WeightsTest, BindRejectsMissingAndExtra) {
  const NetGraph g = randomize_weights(make_toy_irb(1), 2);
  WeightTable t = extract_weights(g);
  WeightTable missing;
  for (std::size_t i = 1; i < t.arrays().size(); ++i) missing.add(t.arrays()[i]);
  EXPECT_THROW(bind_weights(g, missing), FormatError);
  t.add(NamedArray{"nobody.weight", DType::kF64, {1}, {0.0}});
  EXPECT_THROW(bind_weights(g, t), FormatError);
}

TEST(MaskFileTest, RoundTripAndErrors) {
  const std::vector<int> mask{1, 0, 0, 1};
  EXPECT_EQ(mask_from_json(mask_to_json(mask)), mask);
  EXPECT_THROW(mask_from_json("[1, 2]"), ParseError);
  EXPECT_THROW(mask_from_json("{\"a\": 1}"), ParseError);
}

TEST(LatencyCsvTest, RoundTripAndErrors) {
  const LatencyTable t{{{0, 1.5}, {1, 0.25}}};
  const LatencyTable back = latency_from_csv(latency_to_csv(t));
  EXPECT_EQ(back.entries, t.entries);
  EXPECT_THROW(latency_from_csv("id,ms\n0,1\n"), ParseError);
  EXPECT_THROW(latency_from_csv("block_id,latency_ms\n0,abc\n"), ParseError);
}

}  // namespace
}  // namespace blockfuse
