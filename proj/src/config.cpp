#include "blkrew/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

namespace blkrew {

namespace {

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {
      // task / data
      "task", "data", "classes", "features", "samples", "noise",
      // architecture & training
      "arch", "seed", "lr", "momentum", "batch", "epochs",
      // regularization
      "lambda", "epsilon_scale", "directions", "mode",
      // blocks & pruning
      "block", "T", "tau", "threshold_mode", "retrain_epochs", "epochs_per_iteration",
      "baseline", "target_rate", "phase_order",
      // runtime
      "workers", "fuzzy_merge",
      // bench
      "shapes", "sparsity", "repeats",
  };
  return keys;
}

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

}  // namespace

RunConfig RunConfig::parse_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_string(ss.str(), path);
}

RunConfig RunConfig::parse_string(const std::string& text, const std::string& origin) {
  RunConfig cfg;
  cfg.origin_ = origin;
  std::stringstream ss(text);
  std::string line;
  int line_no = 0;
  while (std::getline(ss, line)) {
    ++line_no;
    const size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty())
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": empty key");
    if (!known_keys().count(key))
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": unknown key '" + key + "'");
    if (cfg.values_.count(key))
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": duplicate key '" + key +
                        "' (first at line " + std::to_string(cfg.lines_[key]) + ")");
    cfg.values_[key] = value;
    cfg.lines_[key] = line_no;
  }
  return cfg;
}

void RunConfig::fail(const std::string& key, const std::string& why) const {
  auto it = lines_.find(key);
  const std::string loc =
      it == lines_.end() ? origin_ : origin_ + ":" + std::to_string(it->second);
  throw ConfigError(loc + ": " + why);
}

std::string RunConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  return it == values_.end() ? fallback : it->second;
}

std::string RunConfig::require_string(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end())
    throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return it->second;
}

int64_t RunConfig::parse_int(const std::string& key) const {
  const std::string& v = values_.at(key);
  try {
    size_t used = 0;
    const long long x = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(key, "value of '" + key + "' is not an integer: '" + v + "'");
  }
}

double RunConfig::parse_double(const std::string& key) const {
  const std::string& v = values_.at(key);
  try {
    size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return x;
  } catch (const std::exception&) {
    fail(key, "value of '" + key + "' is not a number: '" + v + "'");
  }
}

int64_t RunConfig::get_int(const std::string& key, int64_t fallback) const {
  return has(key) ? parse_int(key) : fallback;
}

double RunConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? parse_double(key) : fallback;
}

double RunConfig::require_double(const std::string& key) const {
  if (!has(key)) throw ConfigError(origin_ + ": missing required key '" + key + "'");
  return parse_double(key);
}

void RunConfig::require_keys(const std::vector<std::string>& keys) const {
  for (const auto& key : keys)
    if (!has(key)) throw ConfigError(origin_ + ": missing required key '" + key + "'");
}

void RunConfig::override_value(const std::string& key, const std::string& value) {
  if (!known_keys().count(key)) throw ConfigError("unknown key '" + key + "'");
  values_[key] = value;
  lines_[key] = 0;
}

ParsedTask task_from(const RunConfig& cfg, uint64_t seed) {
  ParsedTask task;
  task.task = cfg.require_string("task");
  if (task.task == "blobs") {
    task.blobs.classes = cfg.get_int("classes", 3);
    task.blobs.features = cfg.get_int("features", 16);
    task.blobs.samples = cfg.get_int("samples", 600);
    task.blobs.noise = cfg.get_double("noise", 1.0);
    task.blobs.seed = seed;
  } else if (task.task == "digits") {
    task.digits.samples = cfg.get_int("samples", 2000);
    task.digits.noise = cfg.get_double("noise", 0.25);
    task.digits.seed = seed;
  } else if (task.task == "csv" || task.task == "idx") {
    task.data_path = cfg.require_string("data");
  } else {
    throw ConfigError("unknown task '" + task.task + "' (expected blobs|digits|csv|idx)");
  }
  return task;
}

Dataset load_task(const ParsedTask& task) {
  if (task.task == "blobs") return make_blobs(task.blobs);
  if (task.task == "digits") return make_digits(task.digits);
  if (task.task == "csv") return load_csv(task.data_path);
  // idx: "images_path,labels_path"
  const size_t comma = task.data_path.find(',');
  if (comma == std::string::npos)
    throw ConfigError("idx task needs data = images_path,labels_path");
  return load_idx(task.data_path.substr(0, comma), task.data_path.substr(comma + 1));
}

std::vector<int64_t> arch_from(const RunConfig& cfg) {
  const std::string arch = cfg.require_string("arch");
  std::vector<int64_t> dims;
  std::stringstream ss(arch);
  std::string part;
  while (std::getline(ss, part, '-')) {
    try {
      dims.push_back(std::stoll(part));
    } catch (const std::exception&) {
      throw ConfigError("bad arch '" + arch + "': expected dims like 64-128-64-10");
    }
    if (dims.back() < 1) throw ConfigError("arch dims must be >= 1");
  }
  if (dims.size() < 2) throw ConfigError("arch needs at least two dims");
  return dims;
}

TrainOptions train_options_from(const RunConfig& cfg) {
  TrainOptions opts;
  opts.lr = cfg.require_double("lr");
  if (opts.lr <= 0.0) throw ConfigError("lr must be > 0");
  opts.epochs = static_cast<int>(cfg.get_int("epochs", 100));
  opts.batch = static_cast<int>(cfg.get_int("batch", 64));
  if (opts.batch < 1) throw ConfigError("batch must be >= 1");
  opts.momentum = cfg.get_double("momentum", 0.0);
  opts.seed = static_cast<uint64_t>(cfg.get_int("seed", 1));
  return opts;
}

RegConfig reg_config_from(const RunConfig& cfg) {
  RegConfig reg;
  reg.lambda = cfg.get_double("lambda", 0.0);
  reg.epsilon_scale = cfg.get_double("epsilon_scale", 1e-3);
  const std::string dirs = cfg.get_string("directions", "row,column");
  reg.row_dir = dirs.find("row") != std::string::npos;
  reg.col_dir = dirs.find("col") != std::string::npos;
  if (dirs == "both") reg.row_dir = reg.col_dir = true;
  if (!reg.row_dir && !reg.col_dir)
    throw ConfigError("directions must name row, column, or both");
  const std::string mode = cfg.get_string("mode", "reweighted");
  if (mode == "reweighted")
    reg.mode = RegMode::Reweighted;
  else if (mode == "static_lasso" || mode == "static")
    reg.mode = RegMode::StaticLasso;
  else
    throw ConfigError("mode must be reweighted or static_lasso");
  return reg;
}

PruneConfig prune_config_from(const RunConfig& cfg) {
  PruneConfig prune;
  prune.T = static_cast<int>(cfg.get_int("T", 4));
  prune.epochs_per_iteration = static_cast<int>(cfg.get_int("epochs_per_iteration", 25));
  prune.retrain_epochs = static_cast<int>(cfg.get_int("retrain_epochs", 100));
  prune.tau = cfg.get_double("tau", 0.05);
  const std::string tm = cfg.get_string("threshold_mode", "relative");
  if (tm == "relative")
    prune.threshold_mode = ThresholdMode::Relative;
  else if (tm == "absolute")
    prune.threshold_mode = ThresholdMode::Absolute;
  else
    throw ConfigError("threshold_mode must be relative or absolute");
  const std::string baseline = cfg.get_string("baseline", "none");
  if (baseline == "none")
    prune.baseline = BaselineKind::None;
  else if (baseline == "static_lasso")
    prune.baseline = BaselineKind::StaticLasso;
  else if (baseline == "magnitude")
    prune.baseline = BaselineKind::Magnitude;
  else
    throw ConfigError("baseline must be none, static_lasso, or magnitude");
  prune.target_rate = cfg.get_double("target_rate", 8.0);
  const std::string phase = cfg.get_string("phase_order", "simultaneous");
  if (phase == "sequential")
    prune.sequential_directions = true;
  else if (phase != "simultaneous")
    throw ConfigError("phase_order must be simultaneous or sequential");
  prune.validate();
  return prune;
}

namespace {

std::pair<int64_t, int64_t> parse_block_pair(const std::string& text, const Network& net,
                                             size_t layer) {
  if (text == "whole") {
    if (layer >= net.weights.size()) throw ConfigError("block list longer than layer count");
    return {net.weights[layer].rows(), net.weights[layer].cols()};
  }
  const size_t x = text.find('x');
  if (x == std::string::npos)
    throw ConfigError("bad block '" + text + "': expected MxN or whole");
  try {
    return {std::stoll(text.substr(0, x)), std::stoll(text.substr(x + 1))};
  } catch (const std::exception&) {
    throw ConfigError("bad block '" + text + "': expected MxN or whole");
  }
}

}  // namespace

std::vector<std::pair<int64_t, int64_t>> blocks_from(const RunConfig& cfg, size_t layer_count,
                                                     const Network& net) {
  const std::string block = cfg.require_string("block");
  std::vector<std::string> parts;
  std::stringstream ss(block);
  std::string part;
  while (std::getline(ss, part, ';')) parts.push_back(part);
  std::vector<std::pair<int64_t, int64_t>> out;
  if (parts.size() == 1) {
    for (size_t i = 0; i < layer_count; ++i) out.push_back(parse_block_pair(parts[0], net, i));
  } else {
    if (parts.size() != layer_count)
      throw ConfigError("block list has " + std::to_string(parts.size()) + " entries but " +
                        std::to_string(layer_count) + " parameterized layers");
    for (size_t i = 0; i < parts.size(); ++i) out.push_back(parse_block_pair(parts[i], net, i));
  }
  return out;
}

int workers_from(const RunConfig& cfg, int cli_workers) {
  if (cli_workers > 0) return cli_workers;
  if (cfg.has("workers")) {
    const int w = static_cast<int>(cfg.get_int("workers", 1));
    if (w < 1) throw ConfigError("workers must be >= 1");
    return w;
  }
  if (const char* env = std::getenv("BLKREW_THREADS")) {
    try {
      const int w = std::stoi(env);
      if (w >= 1) return w;
    } catch (const std::exception&) {
      // fall through to the default
    }
  }
  return 1;
}

}  // namespace blkrew
