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

#include "blockfuse/autodiff.h"
#include "blockfuse/dataset.h"
#include "blockfuse/errors.h"
#include "blockfuse/executor.h"
#include "blockfuse/fixtures.h"
#include "blockfuse/serialize.h"
#include "blockfuse/train.h"
#include "test_util.h"

namespace blockfuse {
namespace {

Dataset toy_data(int count = 64, std::uint64_t seed = 1) {
  return make_two_class_dataset(3, 8, 8, count, seed);
}

NetGraph toy(int blocks, std::uint64_t seed = 2) {
  return randomize_weights(make_toy_irb(blocks), seed);
}

TrainConfig quick(int epochs = 3) {
  TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.batch_size = 16;
  cfg.lr = 0.05;
  cfg.seed = 3;
  return cfg;
}

TEST(MaskStateTest, InitialAndErrors) {
  const MaskState s = MaskState::initial(4, 2, {});
  EXPECT_EQ(s.m, std::vector<double>(4, 1.0));
  EXPECT_EQ(s.m_hat, (std::vector<int>{1, 1, 0, 0}));
  EXPECT_THROW(MaskState::initial(4, 5, {}), TrainError);
  EXPECT_THROW(MaskState::initial(4, -1, {}), TrainError);
  EXPECT_THROW(MaskState::initial(2, 1, {1.0}), TrainError);
  EXPECT_THROW(MaskState::initial(2, 1, {1.0, -1.0}), TrainError);
}

TEST(TrainConfigTest, RejectsBadFields) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  EXPECT_THROW(cfg.check(), TrainError);
  cfg = TrainConfig{};
  cfg.label_smoothing = 1.0;
  EXPECT_THROW(cfg.check(), TrainError);
  cfg = TrainConfig{};
  cfg.distill_temperature = 0;
  EXPECT_THROW(cfg.check(), TrainError);
}

TEST(CosineTest, Schedule) {
  EXPECT_DOUBLE_EQ(cosine_lr(0.1, 0, 10), 0.1);
  EXPECT_NEAR(cosine_lr(0.1, 5, 10), 0.05, 1e-15);
  EXPECT_NEAR(cosine_lr(0.1, 10, 10), 0.0, 1e-15);
}

TEST(DatasetTest, TwoClassIsSeparableAlongTemplate) {
  const Dataset d = toy_data(40);
  EXPECT_EQ(d.num_classes, 2);
  EXPECT_EQ(d.size(), 40u);
  // Any two samples of opposite class differ along the spatial mean; the
  // balanced labels alternate.
  for (std::size_t i = 0; i < d.size(); ++i) EXPECT_EQ(d.samples[i].label, int(i % 2));
  const Dataset again = toy_data(40);
  EXPECT_EQ(again.samples[7].x, d.samples[7].x);
}

TEST(DatasetTest, IdxRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "blockfuse_idx_test";
  std::filesystem::create_directories(dir);
  std::string images{0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2};
  images += std::string{0, char(255), 0, 0, 51, 51, 51, 51};
  std::string labels{0, 0, 8, 1, 0, 0, 0, 2, 7, 3};
  write_file(dir / "img", images);
  write_file(dir / "lbl", labels);
  const Dataset d = load_idx_dataset((dir / "img").string(), (dir / "lbl").string());
  ASSERT_EQ(d.size(), 2u);
  EXPECT_EQ(d.samples[0].x.shape(), (Shape{1, 1, 2, 2}));
  EXPECT_EQ(d.samples[0].x.data()[1], 1.0);
  EXPECT_EQ(d.samples[1].x.data()[0], 0.2);
  EXPECT_EQ(d.samples[0].label, 7);
  EXPECT_EQ(d.num_classes, 8);
  write_file(dir / "bad", images.substr(0, 18));
  EXPECT_THROW(load_idx_dataset((dir / "bad").string(), (dir / "lbl").string()),
               FormatError);
}

TEST(SearchTest, BudgetHeldEveryStep) {
  const SearchResult r = search_masks(toy(4), toy_data(), std::vector<double>(4, 1.0),
                                      [] { auto c = quick(2); c.decay_strength = 0.1; return c; }(),
                                      2);
  ASSERT_FALSE(r.log.empty());
  for (const StepLog& s : r.log) EXPECT_EQ(s.kept_blocks, 2);
  EXPECT_EQ(std::accumulate(r.state.m_hat.begin(), r.state.m_hat.end(), 0), 2);
  EXPECT_EQ(r.ranking.size(), 4u);
}

TEST(SearchTest, FullBudgetNoDecayKeepsAllAndLearns) {
  const Dataset data = toy_data(96);
  TrainConfig cfg = quick(5);
  const SearchResult r = search_masks(toy(4), data, std::vector<double>(4, 1.0), cfg, 4);
  for (const StepLog& s : r.log) EXPECT_EQ(s.kept_blocks, 4);
  EXPECT_EQ(r.state.m_hat, std::vector<int>(4, 1));
  // Per-epoch mean loss decreases.
  const std::size_t per_epoch = r.log.size() / 5;
  std::vector<double> epoch_loss;
  for (int e = 0; e < 5; ++e) {
    double sum = 0;
    for (std::size_t i = 0; i < per_epoch; ++i) sum += r.log[e * per_epoch + i].loss;
    epoch_loss.push_back(sum / per_epoch);
  }
  for (int e = 1; e < 5; ++e) EXPECT_LT(epoch_loss[e], epoch_loss[e - 1]) << e;
}

TEST(SearchTest, PlantedLatencyRanksExpensiveBlockFirst) {
  TrainConfig cfg = quick(3);
  cfg.decay_strength = 5.0;
  const double eps = 1e-3;
  const SearchResult r =
      search_masks(toy(4), toy_data(), std::vector<double>{eps, eps, 1.0, eps}, cfg, 2);
  EXPECT_EQ(r.ranking.front(), 2);
  for (int b : {0, 1, 3}) EXPECT_LT(r.state.m[2], r.state.m[b]);
  EXPECT_EQ(r.state.m_hat[2], 0);
}

TEST(SearchTest, ZeroBudgetRunsLinearNetwork) {
  const SearchResult r =
      search_masks(toy(3), toy_data(), std::vector<double>(3, 1.0), quick(1), 0);
  for (const StepLog& s : r.log) EXPECT_EQ(s.kept_blocks, 0);
  EXPECT_EQ(r.state.m_hat, std::vector<int>(3, 0));
}

TEST(SearchTest, DeterministicGivenSeed) {
  const auto run = [] {
    TrainConfig cfg = quick(2);
    cfg.decay_strength = 0.5;
    return search_masks(toy(3), toy_data(), std::vector<double>{0.2, 1.0, 0.5}, cfg, 1);
  };
  const SearchResult a = run(), b = run();
  EXPECT_EQ(a.state.m, b.state.m);
  EXPECT_EQ(encode_weights(extract_weights(a.graph)), encode_weights(extract_weights(b.graph)));
}

TEST(SearchTest, Errors) {
  EXPECT_THROW(search_masks(toy(2), Dataset{}, std::vector<double>(2, 1.0), quick(), 1),
               TrainError);
  EXPECT_THROW(search_masks(toy(2), toy_data(), std::vector<double>(2, 1.0), quick(), 3),
               TrainError);
}

TEST(SearchTest, LatencyTableOverload) {
  const NetGraph g = toy(2);
  const SearchResult r = search_masks(g, toy_data(32), flops_latency_table(g), quick(1), 1);
  EXPECT_EQ(r.state.lambda.size(), 2u);
  EXPECT_DOUBLE_EQ(*std::max_element(r.state.lambda.begin(), r.state.lambda.end()), 1.0);
}

TEST(SearchTest, ExactMergeConstraintKeepsShiftsFrozen) {
  const NetGraph g = toy(2);
  TrainConfig cfg = quick(2);
  const SearchResult r = search_masks(g, toy_data(), std::vector<double>(2, 1.0), cfg, 1);
  const auto frozen = exact_merge_frozen(g);
  EXPECT_TRUE(frozen.count("b0.bn1.beta"));
  EXPECT_FALSE(frozen.count("b0.bn2.beta"));
  EXPECT_EQ(std::get<BatchNormLayer>(r.graph.node("b0.bn1").layer).beta,
            std::vector<double>(16, 0.0));
  EXPECT_NE(std::get<BatchNormLayer>(r.graph.node("b0.bn2").layer).beta,
            std::vector<double>(16, 0.0));
}

TEST(StepLogTest, JsonLine) {
  const std::string line = step_log_to_json(StepLog{3, 0.5, 0.25, 2, 0.1});
  EXPECT_EQ(line, R"({"decay_term":0.25,"kept_blocks":2,"loss":0.5,"lr":0.1,"step":3})");
}

TEST(FinetuneTest, ReachesHighAccuracy) {
  const Dataset data = toy_data(128);
  const FinetuneResult r = finetune(toy(2), data, quick(8));
  EXPECT_GE(r.train_accuracy, 0.95);
  EXPECT_EQ(evaluate_accuracy(r.graph, data), r.train_accuracy);
}

TEST(FinetuneTest, DistillationTermZeroAtFirstStepWithSelfTeacher) {
  const NetGraph g = toy(2);
  TrainConfig cfg = quick(1);
  cfg.distill = true;
  cfg.distill_temperature = 2.0;
  const Dataset data = toy_data(32);
  const FinetuneResult with = finetune(g, data, cfg, &g);
  cfg.distill = false;
  const FinetuneResult without = finetune(g, data, cfg);
  EXPECT_EQ(with.log.front().loss, without.log.front().loss);
}

TEST(FinetuneTest, ZeroAlphaIsBitIdenticalToNoDistillation) {
  const NetGraph student = apply_mask_vector(toy(2), std::vector<int>{0, 1});
  const NetGraph teacher = toy(2, 9);
  TrainConfig cfg = quick(2);
  cfg.distill = true;
  cfg.distill_alpha = 0.0;
  const Dataset data = toy_data(32);
  const FinetuneResult a = finetune(student, data, cfg, &teacher);
  cfg.distill = false;
  const FinetuneResult b = finetune(student, data, cfg);
  EXPECT_EQ(encode_weights(extract_weights(a.graph)), encode_weights(extract_weights(b.graph)));
}

TEST(FinetuneTest, TeacherShapeMismatch) {
  TrainConfig cfg = quick(1);
  cfg.distill = true;
  const NetGraph vgg = randomize_weights(make_vgg_toy(16), 1);
  EXPECT_THROW(finetune(toy(2), toy_data(16), cfg, &vgg), TrainError);
  NetGraph three = make_toy_irb(2, 8, 3);
  EXPECT_THROW(finetune(toy(2), toy_data(16), cfg, &three), TrainError);
}

TEST(FreeActivationTest, InsertedAfterDroppedBlocks) {
  const NetGraph g = toy(3);
  const std::vector<int> mask{0, 1, 0};
  const NetGraph f = insert_free_activations(g, mask);
  EXPECT_EQ(f.nodes.size(), g.nodes.size() + 2);
  const Node& a = f.node("b0.add.free_act");
  EXPECT_EQ(std::get<ActivationLayer>(a.layer).kind, ActivationKind::kReLU6);
  EXPECT_EQ(a.inputs, std::vector<std::string>{"b0.add"});
  EXPECT_EQ(f.node("b1.pw1").inputs, std::vector<std::string>{"b0.add.free_act"});
  EXPECT_NE(f.find("b2.add.free_act"), nullptr);
  EXPECT_EQ(f.find("b1.bn3.free_act"), nullptr);
}

}  // namespace
}  // namespace blockfuse
