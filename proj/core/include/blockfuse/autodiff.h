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

#include <map>
#include <span>
#include <string>
#include <vector>

#include "blockfuse/graph.h"
#include "blockfuse/tensor.h"

namespace blockfuse {

/// A trainable parameter tensor, viewed in place inside its layer. Names
/// follow the weights container: "<node>.weight", "<node>.bias",
/// "<node>.gamma", "<node>.beta".
struct ParamView {
  std::string name;
  std::span<double> values;
};

/// Conv and linear weights and biases plus batch-norm gamma and beta, in node
/// order. Running statistics are not trainable (inference-mode batch norm).
std::vector<ParamView> trainable_parameters(NetGraph& graph);

/// Values recorded by forward_masked for one batch.
class GradTape {
 public:
  const Tensor& input() const { return input_; }
  const Tensor& value(const std::string& node_id) const;
  const std::vector<int>& m_hat() const { return m_hat_; }
  bool gated() const { return !m_hat_.empty(); }

 private:
  friend struct TapeAccess;
  std::vector<std::string> node_ids_;
  Tensor input_;
  std::map<std::string, Tensor> values_;
  std::vector<int> m_hat_;
  std::map<std::string, int> gate_block_;  // activation id -> block index
};

struct ForwardResult {
  Tensor logits;
  GradTape tape;
};

/// Runs the graph recording every intermediate. With a non-empty `m_hat`
/// (one entry per block) each activation listed by block b computes
/// m_hat[b] * act(z) + (1 - m_hat[b]) * z; an empty `m_hat` runs activations
/// as stored.
ForwardResult forward_masked(const NetGraph& graph, std::span<const int> m_hat,
                             const Tensor& x);

struct Gradients {
  std::map<std::string, std::vector<double>> params;
  /// Per block: sum over its gated sites of <dL/dout, act(z) - z>.
  std::vector<double> m_hat;
  /// Straight-through: a copy of m_hat.
  std::vector<double> m;
  Tensor input;
};

/// Reverse pass from dL/dlogits. Throws TrainError when the tape was
/// recorded on a different graph or `loss_grad` does not match the logits.
Gradients backward(const NetGraph& graph, const GradTape& tape,
                   const Tensor& loss_grad);

struct LossResult {
  double loss = 0.0;
  double cross_entropy = 0.0;
  double distill = 0.0;
  int correct = 0;
  Tensor grad;  // dL/dlogits
};

/// Batch-mean softmax cross-entropy against smoothed one-hot targets
/// (1 - s) * onehot + s / C. When `teacher` is given and alpha > 0, adds
/// alpha * T^2 * KL(softmax(teacher/T) || softmax(student/T)).
LossResult classification_loss(const Tensor& logits,
                               const std::vector<int>& labels,
                               double label_smoothing = 0.0,
                               const Tensor* teacher = nullptr,
                               double alpha = 0.0, double temperature = 1.0);

}  // namespace blockfuse
