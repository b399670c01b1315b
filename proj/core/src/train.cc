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

#include "blockfuse/train.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <numeric>

#include "json.hpp"

#include "blockfuse/autodiff.h"
#include "blockfuse/cost.h"
#include "blockfuse/errors.h"
#include "blockfuse/executor.h"
#include "blockfuse/rng.h"

namespace blockfuse {

std::vector<int> topk_binarize(std::span<const double> m, int k) {
  if (k < 0) throw TrainError("k must be non-negative");
  std::vector<int> order(m.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return m[a] > m[b]; });
  std::vector<int> out(m.size(), 0);
  const std::size_t keep = std::min<std::size_t>(k, m.size());
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = 1;
  return out;
}

MaskState MaskState::initial(int num_blocks, int k, std::vector<double> lambda) {
  if (num_blocks < 0) throw TrainError("block count must be non-negative");
  if (k < 0 || k > num_blocks)
    throw TrainError("k = " + std::to_string(k) + " is outside [0, " +
                     std::to_string(num_blocks) + "]");
  if (lambda.empty()) lambda.assign(num_blocks, 0.0);
  if (static_cast<int>(lambda.size()) != num_blocks)
    throw TrainError("lambda has " + std::to_string(lambda.size()) +
                     " entries for " + std::to_string(num_blocks) + " blocks");
  for (double l : lambda)
    if (!(l >= 0.0) || !std::isfinite(l))
      throw TrainError("lambda entries must be finite and non-negative");
  MaskState s;
  s.m.assign(num_blocks, 1.0);
  s.k = k;
  s.lambda = std::move(lambda);
  s.rebinarize();
  return s;
}

void TrainConfig::check() const {
  auto fail = [](const std::string& what) { throw TrainError(what); };
  if (epochs < 0) fail("epochs must be non-negative");
  if (batch_size < 1) fail("batch_size must be positive");
  if (!(lr > 0.0)) fail("lr must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) fail("momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) fail("weight_decay must be non-negative");
  if (!(decay_strength >= 0.0)) fail("decay_strength must be non-negative");
  if (!(distill_alpha >= 0.0 && distill_alpha <= 1.0))
    fail("distill_alpha must be in [0, 1]");
  if (!(distill_temperature > 0.0)) fail("distill_temperature must be positive");
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0))
    fail("label_smoothing must be in [0, 1)");
}

std::string step_log_to_json(const StepLog& log) {
  nlohmann::json j;
  j["step"] = log.step;
  j["loss"] = log.loss;
  j["decay_term"] = log.decay_term;
  j["kept_blocks"] = log.kept_blocks;
  j["lr"] = log.lr;
  return j.dump();
}

double cosine_lr(double lr, int step, int total_steps) {
  if (total_steps <= 0) return lr;
  return 0.5 * lr *
         (1.0 + std::cos(std::numbers::pi * double(step) / total_steps));
}

std::set<std::string> exact_merge_frozen(const NetGraph& graph) {
  std::set<std::string> frozen;
  for (const BlockAnnotation& block : graph.blocks) {
    int last_padded = -1;
    for (std::size_t i = 0; i < block.node_ids.size(); ++i) {
      const auto* c = std::get_if<ConvLayer>(&graph.node(block.node_ids[i]).layer);
      if (c && c->padding > 0) last_padded = static_cast<int>(i);
    }
    for (int i = 0; i < last_padded; ++i) {
      const Node& n = graph.node(block.node_ids[i]);
      if (std::holds_alternative<BatchNormLayer>(n.layer))
        frozen.insert(n.id + ".beta");
      else if (std::holds_alternative<ConvLayer>(n.layer))
        frozen.insert(n.id + ".bias");
    }
  }
  return frozen;
}

namespace {

// SGD with momentum over the trainable parameters of one graph.
class Sgd {
 public:
  Sgd(NetGraph& graph, const TrainConfig& cfg, std::set<std::string> frozen)
      : cfg_(cfg), frozen_(std::move(frozen)) {
    for (ParamView& p : trainable_parameters(graph)) {
      velocity_[p.name].assign(p.values.size(), 0.0);
    }
  }

  void step(NetGraph& graph, const Gradients& grads, double lr) {
    for (ParamView& p : trainable_parameters(graph)) {
      if (frozen_.count(p.name)) continue;
      auto g = grads.params.find(p.name);
      if (g == grads.params.end()) continue;
      std::vector<double>& v = velocity_[p.name];
      for (std::size_t i = 0; i < p.values.size(); ++i) {
        v[i] = cfg_.momentum * v[i] + g->second[i] +
               cfg_.weight_decay * p.values[i];
        p.values[i] -= lr * v[i];
      }
    }
  }

 private:
  const TrainConfig& cfg_;
  std::set<std::string> frozen_;
  std::map<std::string, std::vector<double>> velocity_;
};

void check_dataset(const NetGraph& graph, const Dataset& data) {
  if (data.samples.empty()) throw TrainError("dataset is empty");
  const Shape d = data.sample_dims();
  if (d[1] != graph.input_dims[1] || d[2] != graph.input_dims[2] ||
      d[3] != graph.input_dims[3])
    throw TrainError("dataset samples " + to_string(d) +
                     " do not match graph input " + to_string(graph.input_dims));
}

int steps_per_epoch(const Dataset& data, int batch) {
  return static_cast<int>((data.size() + batch - 1) / batch);
}

void shuffle(std::vector<std::size_t>& order, Rng& rng) {
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[rng.below(i)]);
}

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

}  // namespace

SearchResult search_masks(const NetGraph& graph, const Dataset& data,
                          const std::vector<double>& lambda,
                          const TrainConfig& cfg, int k) {
  cfg.check();
  validate_graph(graph);
  check_dataset(graph, data);
  SearchResult result;
  result.graph = graph;
  result.state = MaskState::initial(static_cast<int>(graph.blocks.size()), k,
                                    lambda);
  MaskState& state = result.state;
  NetGraph& net = result.graph;
  Sgd sgd(net, cfg,
          cfg.exact_merge_constraint ? exact_merge_frozen(net)
                                     : std::set<std::string>{});
  std::vector<double> mask_velocity(state.m.size(), 0.0);
  const double mask_lr_base = cfg.mask_lr > 0.0 ? cfg.mask_lr : cfg.lr;

  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const int per_epoch = steps_per_epoch(data, cfg.batch_size);
  const int total = cfg.epochs * per_epoch;
  std::vector<int> labels;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t first = 0; first < data.size(); first += cfg.batch_size) {
      const std::size_t count =
          std::min<std::size_t>(cfg.batch_size, data.size() - first);
      const Tensor batch = make_batch(data, order, first, count, &labels);
      const double lr = cosine_lr(cfg.lr, step, total);
      const double mask_lr = cosine_lr(mask_lr_base, step, total);

      ForwardResult fwd = forward_masked(net, state.m_hat, batch);
      const LossResult loss =
          classification_loss(fwd.logits, labels, cfg.label_smoothing);
      const Gradients grads = backward(net, fwd.tape, loss.grad);

      double decay_term = 0.0;
      for (std::size_t b = 0; b < state.m.size(); ++b)
        decay_term += cfg.decay_strength * state.lambda[b] * std::abs(state.m[b]);
      sgd.step(net, grads, lr);
      for (std::size_t b = 0; b < state.m.size(); ++b) {
        const double g =
            grads.m[b] + cfg.decay_strength * state.lambda[b] * sign(state.m[b]);
        mask_velocity[b] = cfg.momentum * mask_velocity[b] + g;
        state.m[b] -= mask_lr * mask_velocity[b];
      }
      state.rebinarize();

      StepLog log;
      log.step = step;
      log.loss = loss.loss;
      log.decay_term = decay_term;
      log.kept_blocks = std::accumulate(state.m_hat.begin(), state.m_hat.end(), 0);
      log.lr = lr;
      result.log.push_back(log);
      ++step;
    }
  }
  result.ranking.resize(state.m.size());
  std::iota(result.ranking.begin(), result.ranking.end(), 0);
  std::stable_sort(result.ranking.begin(), result.ranking.end(),
                   [&](int a, int b) { return state.m[a] < state.m[b]; });
  return result;
}

SearchResult search_masks(const NetGraph& graph, const Dataset& data,
                          const LatencyTable& latency, const TrainConfig& cfg,
                          int k) {
  check_latency_table(latency, graph);
  return search_masks(
      graph, data,
      latency_decay_weights(latency, static_cast<int>(graph.blocks.size())),
      cfg, k);
}

FinetuneResult finetune(const NetGraph& graph, const Dataset& data,
                        const TrainConfig& cfg, const NetGraph* teacher) {
  cfg.check();
  validate_graph(graph);
  check_dataset(graph, data);
  const bool use_teacher = cfg.distill && teacher != nullptr;
  if (use_teacher) {
    validate_graph(*teacher);
    const auto& a = teacher->input_dims;
    const auto& b = graph.input_dims;
    if (a[1] != b[1] || a[2] != b[2] || a[3] != b[3])
      throw TrainError("teacher input " + to_string(a) +
                       " does not match student input " + to_string(b));
    const Shape probe{1, b[1], b[2], b[3]};
    const Tensor zero(probe);
    if (execute_graph(*teacher, zero).shape() != execute_graph(graph, zero).shape())
      throw TrainError("teacher and student logits have different dims");
  }

  FinetuneResult result;
  result.graph = graph;
  NetGraph& net = result.graph;
  Sgd sgd(net, cfg,
          cfg.exact_merge_constraint ? exact_merge_frozen(net)
                                     : std::set<std::string>{});
  int kept = 0;
  for (const BlockAnnotation& block : net.blocks)
    kept += std::any_of(block.act_node_ids.begin(), block.act_node_ids.end(),
                        [&](const std::string& id) {
                          const auto* a =
                              std::get_if<ActivationLayer>(&net.node(id).layer);
                          return a && a->kind != ActivationKind::kIdentity;
                        });
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const int total = cfg.epochs * steps_per_epoch(data, cfg.batch_size);
  std::vector<int> labels;
  int step = 0;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    shuffle(order, rng);
    for (std::size_t first = 0; first < data.size(); first += cfg.batch_size) {
      const std::size_t count =
          std::min<std::size_t>(cfg.batch_size, data.size() - first);
      const Tensor batch = make_batch(data, order, first, count, &labels);
      const double lr = cosine_lr(cfg.lr, step, total);
      ForwardResult fwd = forward_masked(net, {}, batch);
      Tensor teacher_logits;
      if (use_teacher) teacher_logits = execute_graph(*teacher, batch);
      const LossResult loss = classification_loss(
          fwd.logits, labels, cfg.label_smoothing,
          use_teacher ? &teacher_logits : nullptr, cfg.distill_alpha,
          cfg.distill_temperature);
      const Gradients grads = backward(net, fwd.tape, loss.grad);
      sgd.step(net, grads, lr);
      StepLog log;
      log.step = step++;
      log.loss = loss.loss;
      log.kept_blocks = kept;
      log.lr = lr;
      result.log.push_back(log);
    }
  }
  result.train_accuracy = evaluate_accuracy(net, data);
  return result;
}

double evaluate_accuracy(const NetGraph& graph, const Dataset& data) {
  if (data.samples.empty()) throw TrainError("dataset is empty");
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> labels;
  int correct = 0;
  constexpr std::size_t kChunk = 64;
  for (std::size_t first = 0; first < data.size(); first += kChunk) {
    const std::size_t count = std::min(kChunk, data.size() - first);
    const Tensor logits =
        execute_graph(graph, make_batch(data, order, first, count, &labels));
    const std::size_t classes = logits.size() / count;
    for (std::size_t n = 0; n < count; ++n) {
      const auto row = logits.data().subspan(n * classes, classes);
      const auto best = std::max_element(row.begin(), row.end()) - row.begin();
      if (best == labels[n]) ++correct;
    }
  }
  return double(correct) / data.size();
}

NetGraph insert_free_activations(const NetGraph& graph, std::span<const int> mask,
                                 ActivationKind kind) {
  validate_graph(graph);
  if (mask.size() != graph.blocks.size())
    throw ValidationError("mask has " + std::to_string(mask.size()) +
                          " entries but the graph has " +
                          std::to_string(graph.blocks.size()) + " blocks");
  std::map<std::string, std::string> after;  // exit -> free activation id
  for (std::size_t b = 0; b < graph.blocks.size(); ++b) {
    if (mask[b] != 0) continue;
    const BlockAnnotation& block = graph.blocks[b];
    bool nested = false;
    for (const BlockAnnotation& other : graph.blocks) {
      if (other.node_ids.size() <= block.node_ids.size()) continue;
      nested = nested || std::find(other.node_ids.begin(), other.node_ids.end(),
                                   block.node_ids.front()) != other.node_ids.end();
    }
    if (nested) continue;
    const std::string id = block_exit(block) + ".free_act";
    if (graph.find(id)) throw IrError("node '" + id + "' already exists");
    after[block_exit(block)] = id;
  }
  NetGraph out = graph;
  out.nodes.clear();
  for (const Node& n : graph.nodes) {
    Node copy = n;
    for (std::string& in : copy.inputs)
      if (auto it = after.find(in); it != after.end()) in = it->second;
    out.nodes.push_back(std::move(copy));
    if (auto it = after.find(n.id); it != after.end())
      out.nodes.push_back(Node{it->second, ActivationLayer{kind}, {n.id}});
  }
  validate_graph(out);
  return out;
}

}  // namespace blockfuse
