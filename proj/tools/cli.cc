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

#include "cli.h"

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "blockfuse/cost.h"
#include "blockfuse/dataset.h"
#include "blockfuse/errors.h"
#include "blockfuse/expand.h"
#include "blockfuse/fixtures.h"
#include "blockfuse/merge.h"
#include "blockfuse/serialize.h"
#include "blockfuse/train.h"
#include "json.hpp"

namespace blockfuse::cli {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Domain failure that is not a library error (e.g. verification failed).
struct CommandFailure {
  std::string kind;
  std::string message;
  json detail;
};

struct Common {
  std::string graph;
  std::string weights;
  std::string out;
  std::uint64_t seed = 0;
  std::string precision = "f64";

  DType dtype() const { return precision == "f32" ? DType::kF32 : DType::kF64; }
};

struct DataFlags {
  std::string images;
  std::string labels;
  int samples = 256;
  std::optional<std::uint64_t> data_seed;
};

struct TrainFlags {
  int epochs = 5;
  int batch_size = 16;
  double lr = 0.05;
  double mask_lr = 0.0;
  double weight_decay = 0.0;
  double label_smoothing = 0.0;
  bool unconstrained = false;
};

// Output files never replace an input file.
class Outputs {
 public:
  void input(const std::string& path) {
    if (!path.empty()) inputs_.insert(fs::weakly_canonical(path));
  }
  fs::path file(const std::string& dir, const std::string& name) const {
    const fs::path p = fs::path(dir) / name;
    if (inputs_.count(fs::weakly_canonical(p)))
      throw Error("refusing to overwrite input file " + p.string());
    return p;
  }

 private:
  std::set<fs::path> inputs_;
};

std::string resolve_weights(const std::string& explicit_path, const std::string& graph_path) {
  if (!explicit_path.empty()) return explicit_path;
  const fs::path sibling = fs::path(graph_path).parent_path() / "weights.dswt";
  if (fs::exists(sibling)) return sibling.string();
  throw FormatError("no weights for " + graph_path + ": pass a weights file or keep weights.dswt "
                    "next to the graph");
}

NetGraph load_model(const std::string& graph_path, const std::string& weights_path) {
  return bind_weights(load_graph(graph_path), load_weights(weights_path));
}

int num_classes(const NetGraph& g) { return validate_graph(g).at(sink_id(g))[1]; }

Dataset load_data(const DataFlags& f, const NetGraph& g, std::uint64_t seed) {
  const Shape in = g.input_dims;
  Dataset data;
  if (!f.images.empty() || !f.labels.empty()) {
    if (f.images.empty() || f.labels.empty())
      throw FormatError("--images and --labels must be given together");
    data = load_idx_dataset(f.images, f.labels);
  } else {
    if (num_classes(g) != 2)
      throw TrainError("the synthetic two-class set needs a 2-class graph; pass --images/--labels");
    data = make_two_class_dataset(in[1], in[2], in[3], f.samples, f.data_seed.value_or(seed));
  }
  const Shape d = data.sample_dims();
  if (d[1] != in[1] || d[2] != in[2] || d[3] != in[3])
    throw ShapeError("dataset samples do not match the graph input dims");
  return data;
}

TrainConfig train_config(const TrainFlags& t, const Common& c) {
  TrainConfig cfg;
  cfg.epochs = t.epochs;
  cfg.batch_size = t.batch_size;
  cfg.lr = t.lr;
  cfg.mask_lr = t.mask_lr;
  cfg.weight_decay = t.weight_decay;
  cfg.label_smoothing = t.label_smoothing;
  cfg.exact_merge_constraint = !t.unconstrained;
  cfg.seed = c.seed;
  return cfg;
}

json log_json(const std::vector<StepLog>& log) {
  json steps = json::array();
  for (const StepLog& s : log) steps.push_back(json::parse(step_log_to_json(s)));
  return steps;
}

void write_model(const Outputs& o, const std::string& dir, const NetGraph& g,
                 const std::vector<int>& mask, const json& report, DType dtype) {
  fs::create_directories(dir);
  save_graph(g, o.file(dir, "graph.json"));
  save_weights(extract_weights(g, dtype), o.file(dir, "weights.dswt"));
  save_mask(mask, o.file(dir, "mask.json"));
  write_file(o.file(dir, "report.json"), report.dump(1) + "\n");
}

void add_common(CLI::App* app, Common& c, bool graph, bool weights, bool out) {
  if (graph) app->add_option("--graph", c.graph, "Graph JSON")->required();
  if (weights) app->add_option("--weights", c.weights, "DSWT weight file")->required();
  if (out) app->add_option("--out", c.out, "Output directory")->required();
  app->add_option("--seed", c.seed, "Seed")->capture_default_str();
  app->add_option("--precision", c.precision, "Weight and evaluation precision")
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();
}

void add_data(CLI::App* app, DataFlags& d) {
  app->add_option("--images", d.images, "IDX image file");
  app->add_option("--labels", d.labels, "IDX label file");
  app->add_option("--samples", d.samples, "Synthetic sample count")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app->add_option("--data-seed", d.data_seed, "Synthetic data seed (defaults to --seed)");
}

void add_train(CLI::App* app, TrainFlags& t) {
  app->add_option("--epochs", t.epochs)->capture_default_str();
  app->add_option("--batch-size", t.batch_size)->capture_default_str();
  app->add_option("--lr", t.lr)->capture_default_str();
  app->add_option("--mask-lr", t.mask_lr, "Mask learning rate (0: same as --lr)");
  app->add_option("--weight-decay", t.weight_decay)->capture_default_str();
  app->add_option("--label-smoothing", t.label_smoothing)->capture_default_str();
  app->add_flag("--no-exact-merge", t.unconstrained,
                "Also train shifts that make later merges only interior-exact");
}

std::optional<ActivationKind> free_act(const std::string& name) {
  if (name == "none") return std::nullopt;
  return parse_activation(name);
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Merge inverted residual blocks into dense convolutions", "blockfuse"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  Common common;
  DataFlags data;
  TrainFlags tf;
  std::string mask_path, latency_path, teacher_graph, teacher_weights, fixture, activation;
  std::string before, after, before_weights, after_weights, free_activation = "relu6";
  int k = 0, samples = 8, bits = 16, resolution = 0;
  double decay = 0.0, tol = 1e-8, alpha = 0.5, temperature = 1.0, ratio = 6.0;
  std::optional<int> border;
  bool biased = false;

  CLI::App* search = app.add_subcommand("search", "Learn which blocks to merge");
  add_common(search, common, true, true, true);
  add_data(search, data);
  add_train(search, tf);
  search->add_option("--k", k, "Blocks kept (mask ones)")->required();
  search->add_option("--decay", decay, "Sparsity decay strength")->capture_default_str();
  search->add_option("--latency", latency_path, "Per-block latency CSV for the decay weights");

  CLI::App* shrink = app.add_subcommand("shrink", "Merge every mask-0 block");
  add_common(shrink, common, true, true, true);
  shrink->add_option("--mask", mask_path, "Mask JSON")->required();

  CLI::App* verify = app.add_subcommand("verify", "Compare two graphs on random inputs");
  verify->add_option("--before", before, "Reference graph JSON")->required();
  verify->add_option("--after", after, "Candidate graph JSON")->required();
  verify->add_option("--weights,--before-weights", before_weights,
                     "Reference weights (default: weights.dswt beside the graph)");
  verify->add_option("--after-weights", after_weights,
                     "Candidate weights (default: weights.dswt beside the graph)");
  verify->add_option("--mask", mask_path, "Mask applied to the reference graph first");
  verify->add_option("--tol", tol)->capture_default_str();
  verify->add_option("--samples", samples)->check(CLI::PositiveNumber)->capture_default_str();
  verify->add_option("--border", border, "Ignored edge pixels for the interior error");
  verify->add_option("--out", common.out, "Directory for report.json");
  verify->add_option("--seed", common.seed)->capture_default_str();
  verify->add_option("--precision", common.precision)
      ->check(CLI::IsMember({"f32", "f64"}))
      ->capture_default_str();

  CLI::App* finetune = app.add_subcommand("finetune", "Train the masked graph");
  add_common(finetune, common, true, true, true);
  add_data(finetune, data);
  add_train(finetune, tf);
  finetune->add_option("--mask", mask_path, "Mask JSON")->required();
  finetune->add_option("--free-act", free_activation,
                       "Activation after each merged block, or none")
      ->capture_default_str();
  finetune->add_option("--teacher", teacher_graph, "Teacher graph JSON for distillation");
  finetune->add_option("--teacher-weights", teacher_weights, "Teacher weights");
  finetune->add_option("--alpha", alpha, "Distillation weight")->capture_default_str();
  finetune->add_option("--temperature", temperature)->capture_default_str();

  CLI::App* expand = app.add_subcommand("expand", "Expand plain convs into blocks for training");
  add_common(expand, common, true, true, true);
  expand->add_option("--expand-ratio", ratio)->capture_default_str();
  expand->add_option("--activation", activation = "relu6")->capture_default_str();

  CLI::App* cost = app.add_subcommand("cost", "FLOPs, parameters and activation memory");
  cost->add_option("--graph", common.graph, "Graph JSON")->required();
  cost->add_option("--bits", bits, "Activation precision in bits")->capture_default_str();
  cost->add_option("--latency", latency_path, "Per-block latency CSV");
  cost->add_option("--out", common.out, "Directory for report.json");

  CLI::App* gen = app.add_subcommand("gen-fixture", "Write a reference network");
  gen->add_option("name", fixture, "mbv2, mbv2-1.4, toy-irb-N or vgg-toy")->required();
  add_common(gen, common, false, false, true);
  gen->add_option("--resolution", resolution, "Input resolution (0: fixture default)");
  gen->add_flag("--biased", biased, "Random conv biases and batch-norm shifts");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  Outputs outputs;
  for (const std::string* p : {&common.graph, &common.weights, &mask_path, &latency_path,
                               &teacher_graph, &teacher_weights, &before, &after,
                               &before_weights, &after_weights, &data.images, &data.labels})
    outputs.input(*p);

  try {
    if (*gen) {
      InitOptions init;
      init.zero_bias = !biased;
      const NetGraph g = randomize_weights(make_fixture(fixture, resolution), common.seed, init);
      const CostReport c = flops_of_graph(g);
      json report = {{"fixture", fixture},
                     {"seed", common.seed},
                     {"blocks", g.blocks.size()},
                     {"cost", json::parse(cost_report_to_json(c))}};
      write_model(outputs, common.out, g, std::vector<int>(g.blocks.size(), 1), report,
                  common.dtype());
      save_latency(flops_latency_table(g), outputs.file(common.out, "latency.csv"));
      const bool wide = fixture == "mbv2-1.4";
      if (wide || fixture == "mbv2") {
        fs::create_directories(fs::path(common.out) / "masks");
        for (const auto& [name, mask] : wide ? mbv2_14_masks() : mbv2_masks())
          save_mask(mask, outputs.file((fs::path(common.out) / "masks").string(), name + ".json"));
      }
      out << fixture << ": " << g.nodes.size() << " nodes, " << g.blocks.size() << " blocks, "
          << c.total_flops / 1e6 << " MFLOPs -> " << common.out << "\n";
    } else if (*cost) {
      const NetGraph g = load_graph(common.graph);
      std::optional<LatencyTable> lat;
      if (!latency_path.empty()) lat = load_latency(latency_path);
      const CostReport c = cost_report(g, bits, lat ? &*lat : nullptr);
      out << cost_report_to_text(c);
      if (!common.out.empty()) {
        fs::create_directories(common.out);
        write_file(outputs.file(common.out, "report.json"), cost_report_to_json(c));
      }
    } else if (*shrink) {
      const NetGraph g = load_model(common.graph, common.weights);
      const std::vector<int> mask = load_mask(mask_path);
      const ShrinkResult r = shrink_graph(apply_mask_vector(g, mask), mask);
      const double flops_before = flops_of_graph(g).total_flops;
      const double flops_after = flops_of_graph(r.graph).total_flops;
      json report = {{"shrink", json::parse(shrink_report_to_json(r.report))},
                     {"flops_before", flops_before},
                     {"flops_after", flops_after}};
      write_model(outputs, common.out, r.graph, r.mask, report, common.dtype());
      const auto merged = std::count(mask.begin(), mask.end(), 0);
      out << "merged " << merged << " of " << mask.size() << " blocks, " << flops_before / 1e6
          << " -> " << flops_after / 1e6 << " MFLOPs"
          << (r.report.all_boundary_exact() ? "" : " (interior-exact only)") << "\n";
    } else if (*verify) {
      NetGraph g_before = load_model(before, resolve_weights(before_weights, before));
      const NetGraph g_after = load_model(after, resolve_weights(after_weights, after));
      if (!mask_path.empty()) g_before = apply_mask_vector(g_before, load_mask(mask_path));
      VerifyOptions opt;
      opt.n_samples = samples;
      opt.tol = tol;
      opt.seed = common.seed;
      opt.precision = parse_precision(common.precision);
      opt.border = border;
      const EquivalenceReport rep = verify_equivalence(g_before, g_after, opt);
      const json report = json::parse(equivalence_report_to_json(rep));
      if (!common.out.empty()) {
        fs::create_directories(common.out);
        write_file(outputs.file(common.out, "report.json"), report.dump(1) + "\n");
      }
      out << (rep.pass ? "PASS" : "FAIL") << ": max abs err " << rep.max_abs_err
          << ", interior " << rep.interior_max_abs_err << ", tol " << rep.tol << "\n";
      if (!rep.pass) throw CommandFailure{"equivalence", "graphs differ beyond tolerance", report};
    } else if (*search) {
      const NetGraph g = load_model(common.graph, common.weights);
      const Dataset d = load_data(data, g, common.seed);
      TrainConfig cfg = train_config(tf, common);
      cfg.decay_strength = decay;
      const SearchResult r =
          latency_path.empty()
              ? search_masks(g, d, std::vector<double>(g.blocks.size(), 1.0), cfg, k)
              : search_masks(g, d, load_latency(latency_path), cfg, k);
      json report = {{"k", k},
                     {"m", r.state.m},
                     {"mask", r.state.m_hat},
                     {"ranking", r.ranking},
                     {"steps", log_json(r.log)}};
      write_model(outputs, common.out, r.graph, r.state.m_hat, report, common.dtype());
      out << "mask " << mask_to_json(r.state.m_hat);
    } else if (*finetune) {
      const NetGraph g = load_model(common.graph, common.weights);
      const std::vector<int> mask = load_mask(mask_path);
      NetGraph student = apply_mask_vector(g, mask);
      if (const auto act = free_act(free_activation))
        student = insert_free_activations(student, mask, *act);
      std::optional<NetGraph> teacher;
      if (!teacher_graph.empty())
        teacher = load_model(teacher_graph, resolve_weights(teacher_weights, teacher_graph));
      const Dataset d = load_data(data, g, common.seed);
      TrainConfig cfg = train_config(tf, common);
      cfg.distill = teacher.has_value();
      cfg.distill_alpha = alpha;
      cfg.distill_temperature = temperature;
      const FinetuneResult r = blockfuse::finetune(student, d, cfg, teacher ? &*teacher : nullptr);
      json report = {{"train_accuracy", r.train_accuracy}, {"steps", log_json(r.log)}};
      write_model(outputs, common.out, r.graph, mask, report, common.dtype());
      out << "train accuracy " << r.train_accuracy << " after " << r.log.size() << " steps\n";
    } else if (*expand) {
      const NetGraph g = load_model(common.graph, common.weights);
      ExpandOptions opt;
      opt.expand_ratio = ratio;
      opt.activation = parse_activation(activation);
      opt.seed = common.seed;
      const ExpandResult r = expand_for_training(g, opt);
      json report = {{"added", r.added}, {"signature", architecture_signature(g)}};
      write_model(outputs, common.out, r.graph, r.collapse_mask(), report, common.dtype());
      out << "expanded " << g.blocks.size() << " -> " << r.graph.blocks.size()
          << " blocks; mask.json collapses back\n";
    }
  } catch (const CommandFailure& f) {
    err << json{{"error", f.kind}, {"message", f.message}, {"detail", f.detail}}.dump() << "\n";
    return 1;
  } catch (const Error& e) {
    err << json{{"error", e.kind()}, {"message", e.what()}}.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << json{{"error", "io"}, {"message", e.what()}}.dump() << "\n";
    return 1;
  }
  return 0;
}

int run(int argc, const char* const* argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace blockfuse::cli
