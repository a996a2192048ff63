#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "blkrew/dataset.hpp"
#include "blkrew/prune.hpp"

namespace blkrew {

// Flat `key = value` text config, UTF-8, '#' comments. Unknown and duplicate
// keys are rejected with line numbers; each subcommand declares its required
// keys and every other known key has a default.
class RunConfig {
 public:
  static RunConfig parse_file(const std::string& path);
  static RunConfig parse_string(const std::string& text, const std::string& origin = "<config>");

  bool has(const std::string& key) const { return values_.count(key) > 0; }
  std::string get_string(const std::string& key, const std::string& fallback) const;
  std::string require_string(const std::string& key) const;
  int64_t get_int(const std::string& key, int64_t fallback) const;
  double get_double(const std::string& key, double fallback) const;
  double require_double(const std::string& key) const;

  void require_keys(const std::vector<std::string>& keys) const;
  void override_value(const std::string& key, const std::string& value);

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::string origin_;
  std::map<std::string, std::string> values_;
  std::map<std::string, int> lines_;

  int64_t parse_int(const std::string& key) const;
  double parse_double(const std::string& key) const;
  [[noreturn]] void fail(const std::string& key, const std::string& why) const;
};

// Typed views over the config.
struct ParsedTask {
  std::string task;  // blobs | digits | csv | idx
  BlobsSpec blobs;
  DigitsSpec digits;
  std::string data_path;    // csv, or "images,labels" for idx
};

ParsedTask task_from(const RunConfig& cfg, uint64_t seed);
Dataset load_task(const ParsedTask& task);

std::vector<int64_t> arch_from(const RunConfig& cfg);  // "64-128-64-10"
TrainOptions train_options_from(const RunConfig& cfg);
RegConfig reg_config_from(const RunConfig& cfg);
PruneConfig prune_config_from(const RunConfig& cfg);

// "4x16", "whole", or a per-layer semicolon list; resolved against the
// network's GEMM dims by schemes_for.
std::vector<std::pair<int64_t, int64_t>> blocks_from(const RunConfig& cfg, size_t layer_count,
                                                     const Network& net);

int workers_from(const RunConfig& cfg, int cli_workers);  // flag > config > env > 1

}  // namespace blkrew
