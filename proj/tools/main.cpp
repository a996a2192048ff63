#include <cstdint>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "blkrew/config.hpp"
#include "blkrew/model_io.hpp"
#include "blkrew/report.hpp"

namespace {

using namespace blkrew;

struct CommonArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out;
  int workers = 0;  // 0 = unset
  int64_t seed = -1;
};

RunConfig load_config(const CommonArgs& args) {
  if (args.config_path.empty()) throw ConfigError("--config is required for this command");
  RunConfig cfg = RunConfig::parse_file(args.config_path);
  if (args.seed >= 0) cfg.override_value("seed", std::to_string(args.seed));
  return cfg;
}

std::string out_or(const CommonArgs& args, const std::string& fallback) {
  return args.out.empty() ? fallback : args.out;
}

int cmd_train(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  cfg.require_keys({"task", "arch", "lr", "epochs"});
  TrainOptions opts = train_options_from(cfg);
  const ParsedTask task = task_from(cfg, opts.seed);
  const Dataset data = load_task(task);

  std::vector<int64_t> arch = arch_from(cfg);
  if (arch.front() != data.features.size() / data.features.shape()[0])
    throw ConfigError("arch input dim " + std::to_string(arch.front()) +
                      " does not match dataset features");
  if (arch.back() != data.classes)
    throw ConfigError("arch output dim does not match dataset classes");

  Network net = make_mlp(arch, opts.seed);
  TrainResult tr = train_dense(net, data, opts);
  const double accuracy = evaluate(net, data.features, data.labels);

  const std::string model_path = out_or(args, "dense.blk");
  save_model(from_network_dense(net), model_path);

  Json report;
  report["command"] = "train";
  report["seed"] = opts.seed;
  report["epochs"] = tr.epochs_run;
  report["final_loss"] = tr.final_loss;
  report["train_accuracy"] = accuracy;
  report["model"] = model_path;
  const std::string report_path = default_report_name("train", opts.seed);
  write_report(report, report_path);
  std::cout << "trained " << model_path << "  accuracy " << accuracy << "  report "
            << report_path << "\n";
  return 0;
}

int cmd_prune(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  cfg.require_keys({"task", "lr", "lambda", "block"});
  TrainOptions opts = train_options_from(cfg);
  const ParsedTask task = task_from(cfg, opts.seed);
  const Dataset data = load_task(task);

  PipelineOptions pipeline;
  pipeline.train = opts;
  pipeline.reg = reg_config_from(cfg);
  pipeline.prune = prune_config_from(cfg);

  Network net;
  Network reference;
  const Network* reference_ptr = nullptr;
  if (!args.checkpoint.empty()) {
    ModelFile ckpt = load_model(args.checkpoint);
    net = to_network(ckpt, opts.seed);
    net.clear_masks();
    reference = net;
    reference_ptr = &reference;
    pipeline.pretrain_epochs = 0;
  } else {
    cfg.require_keys({"arch", "epochs"});
    net = make_mlp(arch_from(cfg), opts.seed);
    pipeline.pretrain_epochs = opts.epochs;
  }

  std::vector<bool> clamped;
  const auto blocks = blocks_from(cfg, net.weights.size(), net);
  const auto schemes = schemes_for(net, blocks, &clamped);
  pipeline.clamped_schemes = clamped;

  PipelineResult result = run_pipeline(std::move(net), data, schemes, pipeline, reference_ptr);

  const std::string model_path = out_or(args, "pruned.blk");
  save_model(from_network_masked(result.net, result.mask, schemes), model_path);

  Json report = to_json(result.report);
  report["command"] = "prune";
  report["seed"] = opts.seed;
  report["model"] = model_path;
  const std::string report_path = default_report_name("prune", opts.seed);
  write_report(report, report_path);
  std::cout << "pruned " << model_path << "  compression " << result.report.compression_rate
            << "x  accuracy " << result.report.pruned_accuracy << " (base "
            << result.report.base_accuracy << ")  report " << report_path << "\n";
  return 0;
}

int cmd_reorder(const CommonArgs& args) {
  if (args.checkpoint.empty()) throw ConfigError("--checkpoint is required for reorder");
  int64_t fuzzy = 0;
  if (!args.config_path.empty()) {
    RunConfig cfg = RunConfig::parse_file(args.config_path);
    fuzzy = cfg.get_int("fuzzy_merge", 0);
  }
  ModelFile model = load_model(args.checkpoint);
  if (model.all_reordered()) {
    save_model(model, out_or(args, "reordered.blk"));  // no-op rewrite
    std::cout << "model already reordered; wrote " << out_or(args, "reordered.blk") << "\n";
    return 0;
  }
  if (!model.any_masked())
    std::cerr << "warning: model has no masks; reordering dense layers yields a single group\n";
  ModelFile reordered = to_reordered(model, fuzzy);
  const std::string path = out_or(args, "reordered.blk");
  save_model(reordered, path);
  std::cout << "reordered " << path << "\n";
  return 0;
}

int cmd_infer(const CommonArgs& args) {
  if (args.checkpoint.empty()) throw ConfigError("--checkpoint is required for infer");
  RunConfig cfg = load_config(args);
  cfg.require_keys({"task"});
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
  const ParsedTask task = task_from(cfg, seed);
  const Dataset data = load_task(task);
  const int workers = workers_from(cfg, args.workers);

  ModelFile model = load_model(args.checkpoint);
  const double accuracy = model_accuracy(model, data, workers);

  Json report;
  report["command"] = "infer";
  report["seed"] = seed;
  report["workers"] = workers;
  report["accuracy"] = accuracy;
  const std::string report_path =
      args.out.empty() ? default_report_name("infer", seed) : args.out;
  write_report(report, report_path);
  std::cout << "accuracy " << accuracy << "  workers " << workers << "  report " << report_path
            << "\n";
  return 0;
}

int cmd_bench(const CommonArgs& args) {
  RunConfig cfg = load_config(args);
  const uint64_t seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
  const int workers = workers_from(cfg, args.workers);
  const int repeats = static_cast<int>(cfg.get_int("repeats", 5));

  Json cases = Json::array();
  if (!args.checkpoint.empty()) {
    // Bench the model's own layers against a random activation batch.
    ModelFile model = load_model(args.checkpoint);
    uint64_t layer_seed = seed;
    for (const auto& layer : model.layers) {
      if (layer.repr != WeightRepr::Masked || !layer.mask) continue;
      BenchCase bc =
          bench_masked(layer.weights, *layer.mask, cfg.get_int("samples", 256), repeats,
                       workers, layer_seed++);
      cases.push_back(to_json(bc));
    }
    if (cases.empty())
      throw ConfigError("bench --checkpoint needs a masked (pruned) model");
  } else {
    cfg.require_keys({"shapes"});
    const double sparsity = cfg.get_double("sparsity", 0.9);
    std::pair<int64_t, int64_t> block{16, 16};
    if (cfg.has("block")) {
      const std::string b = cfg.get_string("block", "16x16");
      const size_t x = b.find('x');
      if (x == std::string::npos) throw ConfigError("bench block must be MxN");
      block = {std::stoll(b.substr(0, x)), std::stoll(b.substr(x + 1))};
    }
    std::stringstream ss(cfg.require_string("shapes"));
    std::string shape;
    uint64_t shape_seed = seed;
    while (std::getline(ss, shape, ';')) {
      int64_t dims[3];
      std::stringstream sp(shape);
      std::string part;
      int i = 0;
      while (std::getline(sp, part, 'x') && i < 3) dims[i++] = std::stoll(part);
      if (i != 3) throw ConfigError("bad shape '" + shape + "': expected MxKxN");
      BenchCase bc = bench_shape(dims[0], dims[1], dims[2], block.first, block.second,
                                 sparsity, repeats, workers, shape_seed++);
      cases.push_back(to_json(bc));
    }
  }

  Json report;
  report["command"] = "bench";
  report["seed"] = seed;
  report["workers"] = workers;
  report["cases"] = std::move(cases);
  const std::string report_path =
      args.out.empty() ? default_report_name("bench", seed) : args.out;
  write_report(report, report_path);
  std::cout << report.dump(2) << "\n";
  std::cout << "bench report " << report_path << "\n";
  return 0;
}

int cmd_report(const std::string& path) {
  Json j = read_report(path);
  std::cout << j.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"block-sparse pruning and reorder-runtime toolkit"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string report_path;

  auto add_common = [&](CLI::App* cmd, bool with_config = true) {
    if (with_config) cmd->add_option("--config", args.config_path, "run config file");
    cmd->add_option("--checkpoint", args.checkpoint, "model file to start from");
    cmd->add_option("--out", args.out, "output path");
    cmd->add_option("--workers", args.workers, "worker thread count");
    cmd->add_option("--seed", args.seed, "override config seed");
  };

  add_common(app.add_subcommand("train", "train a dense baseline"));
  add_common(app.add_subcommand("prune", "reweighted block pruning pipeline"));
  add_common(app.add_subcommand("reorder", "convert a pruned model to reordered form"));
  add_common(app.add_subcommand("infer", "run inference, report accuracy"));
  add_common(app.add_subcommand("bench", "time dense vs sparse execution"));
  auto* report_cmd = app.add_subcommand("report", "pretty-print a report json");
  report_cmd->add_option("path", report_path, "report json path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (app.got_subcommand("train")) return cmd_train(args);
    if (app.got_subcommand("prune")) return cmd_prune(args);
    if (app.got_subcommand("reorder")) return cmd_reorder(args);
    if (app.got_subcommand("infer")) return cmd_infer(args);
    if (app.got_subcommand("bench")) return cmd_bench(args);
    if (app.got_subcommand("report")) return cmd_report(report_path);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
