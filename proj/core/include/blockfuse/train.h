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

#pragma once

#include <cstdint>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "blockfuse/dataset.h"
#include "blockfuse/graph.h"

namespace blockfuse {

/// Exactly min(k, N) ones at the k largest entries of m; ties go to the lower
/// index. Throws TrainError when k < 0.
std::vector<int> topk_binarize(std::span<const double> m, int k);

struct MaskState {
  std::vector<double> m;
  int k = 0;
  std::vector<double> lambda;
  std::vector<int> m_hat;

  /// m = 1 everywhere. Throws TrainError when k is outside [0, N] or lambda
  /// has the wrong length or a negative entry.
  static MaskState initial(int num_blocks, int k, std::vector<double> lambda);
  void rebinarize() { m_hat = topk_binarize(m, k); }
};

struct TrainConfig {
  int epochs = 5;
  int batch_size = 16;
  double lr = 0.05;
  /// Learning rate for the mask scores; <= 0 means "same as lr".
  double mask_lr = 0.0;
  double momentum = 0.9;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  double decay_strength = 0.0;
  bool distill = false;
  double distill_alpha = 0.5;
  double distill_temperature = 1.0;
  double label_smoothing = 0.0;
  /// Keep the shift (batch-norm beta, conv bias) of every layer that sits
  /// inside a block ahead of a zero-padded conv frozen, so later merges stay
  /// exact at the tensor border.
  bool exact_merge_constraint = true;

  /// Throws TrainError naming the first invalid field.
  void check() const;
};

struct StepLog {
  int step = 0;
  double loss = 0.0;
  double decay_term = 0.0;
  int kept_blocks = 0;
  double lr = 0.0;
};

/// One line of the training log: {"step":..,"loss":..,"decay_term":..,
/// "kept_blocks":..,"lr":..}.
std::string step_log_to_json(const StepLog& log);

/// lr * (1 + cos(pi * step / total)) / 2.
double cosine_lr(double lr, int step, int total_steps);

/// Parameter names that exact_merge_constraint keeps fixed.
std::set<std::string> exact_merge_frozen(const NetGraph& graph);

struct SearchResult {
  NetGraph graph;  // trained weights, activations untouched
  MaskState state;
  /// Block indices by final m ascending (first = first to drop activations).
  std::vector<int> ranking;
  std::vector<StepLog> log;
};

/// Joint SGD over parameters and mask scores: forward with top-k gates,
/// straight-through mask gradients, plus decay_strength * lambda_b * sign(m_b)
/// on every mask entry. Deterministic given cfg.seed.
SearchResult search_masks(const NetGraph& graph, const Dataset& data,
                          const std::vector<double>& lambda,
                          const TrainConfig& cfg, int k);
SearchResult search_masks(const NetGraph& graph, const Dataset& data,
                          const LatencyTable& latency, const TrainConfig& cfg,
                          int k);

struct FinetuneResult {
  NetGraph graph;
  std::vector<StepLog> log;
  double train_accuracy = 0.0;
};

/// Plain SGD on cross-entropy, plus the distillation term when cfg.distill is
/// on and `teacher` is given. The teacher stays frozen. Throws TrainError
/// when teacher and student disagree on input or logit dims.
FinetuneResult finetune(const NetGraph& graph, const Dataset& data,
                        const TrainConfig& cfg,
                        const NetGraph* teacher = nullptr);

/// Fraction of samples whose argmax logit equals the label.
double evaluate_accuracy(const NetGraph& graph, const Dataset& data);

/// Adds an activation "<exit>.free_act" after the exit of every top-level
/// block whose mask entry is 0, rewiring its consumers. Blocks nested inside
/// another block get none.
NetGraph insert_free_activations(const NetGraph& graph, std::span<const int> mask,
                                 ActivationKind kind = ActivationKind::kReLU6);

}  // namespace blockfuse
