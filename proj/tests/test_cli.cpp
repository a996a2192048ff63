#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <string>

#include "blkrew/model_io.hpp"
#include "blkrew/report.hpp"

using namespace blkrew;

namespace {

int run(const std::string& args, const std::string& log = "cli_out.txt") {
  const std::string cmd = std::string(BLKREW_CLI_PATH) + " " + args + " >" + log + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

const char* kTrainCfg =
    "task = blobs\n"
    "classes = 3\n"
    "features = 16\n"
    "samples = 240\n"
    "noise = 0.8\n"
    "arch = 16-12-3\n"
    "lr = 0.1\n"
    "epochs = 30\n"
    "seed = 4\n";

std::string prune_cfg(const std::string& extra) {
  return std::string(kTrainCfg) +
         "lambda = 0.002\n"
         "block = 4x4\n"
         "T = 2\n"
         "epochs_per_iteration = 5\n"
         "retrain_epochs = 10\n" +
         extra;
}

}  // namespace

TEST_CASE("train writes a model and is byte-identical per seed") {
  write_file("cli_train.cfg", kTrainCfg);
  CHECK(run("train --config cli_train.cfg --out cli_a.blk") == 0);
  CHECK(run("train --config cli_train.cfg --out cli_b.blk") == 0);
  CHECK(slurp("cli_a.blk") == slurp("cli_b.blk"));
  CHECK(!slurp("cli_a.blk").empty());
}

TEST_CASE("missing lr key exits 2 and names the key") {
  write_file("cli_nolr.cfg",
             "task = blobs\narch = 16-12-3\nepochs = 5\nseed = 1\n");
  CHECK(run("train --config cli_nolr.cfg", "cli_nolr_out.txt") == 2);
  const std::string out = slurp("cli_nolr_out.txt");
  CHECK(out.find("lr") != std::string::npos);
}

TEST_CASE("unknown config key exits 2 with a line number") {
  write_file("cli_bad.cfg", "task = blobs\nwat = 1\n");
  CHECK(run("train --config cli_bad.cfg", "cli_bad_out.txt") == 2);
  CHECK(slurp("cli_bad_out.txt").find("cli_bad.cfg:2") != std::string::npos);
}

TEST_CASE("inert pipeline: lambda 0 and tiny tau give compression 1x") {
  write_file("cli_inert.cfg", std::string(kTrainCfg) +
                                  "lambda = 0.0\n"
                                  "block = 4x4\n"
                                  "T = 2\n"
                                  "epochs_per_iteration = 5\n"
                                  "retrain_epochs = 10\n"
                                  "tau = 1e-12\n");
  CHECK(run("prune --config cli_inert.cfg --out cli_inert.blk") == 0);
  ModelFile model = load_model("cli_inert.blk");
  CHECK(model.any_masked());
  int64_t total = 0, surviving = 0;
  for (const auto& layer : model.layers) {
    if (!layer.mask) continue;
    total += layer.mask->total_elements();
    surviving += layer.mask->surviving_elements();
  }
  CHECK(total == surviving);
}

TEST_CASE("prune, reorder, infer pipeline agrees across representations") {
  write_file("cli_prune.cfg", prune_cfg(""));
  REQUIRE(run("prune --config cli_prune.cfg --out cli_pruned.blk") == 0);

  REQUIRE(run("reorder --checkpoint cli_pruned.blk --out cli_reordered.blk") == 0);
  // idempotent: reordering the reordered file reproduces it byte for byte
  REQUIRE(run("reorder --checkpoint cli_reordered.blk --out cli_reordered2.blk") == 0);
  CHECK(slurp("cli_reordered.blk") == slurp("cli_reordered2.blk"));

  REQUIRE(run("infer --config cli_prune.cfg --checkpoint cli_pruned.blk --out cli_inf_masked.json") == 0);
  REQUIRE(run("infer --config cli_prune.cfg --checkpoint cli_reordered.blk --out cli_inf_re1.json") == 0);
  Json masked = read_report("cli_inf_masked.json");
  Json re1 = read_report("cli_inf_re1.json");
  CHECK(masked["accuracy"] == re1["accuracy"]);

  // worker sweep leaves accuracy bit-identical
  for (int workers : {2, 4, 8}) {
    const std::string out = "cli_inf_w" + std::to_string(workers) + ".json";
    REQUIRE(run("infer --config cli_prune.cfg --checkpoint cli_reordered.blk --workers " +
                std::to_string(workers) + " --out " + out) == 0);
    CHECK(read_report(out)["accuracy"] == re1["accuracy"]);
  }
}

TEST_CASE("prune resumes from a train checkpoint") {
  write_file("cli_train2.cfg", kTrainCfg);
  REQUIRE(run("train --config cli_train2.cfg --out cli_ck.blk") == 0);
  write_file("cli_prune2.cfg", prune_cfg(""));
  CHECK(run("prune --config cli_prune2.cfg --checkpoint cli_ck.blk --out cli_ck_pruned.blk") == 0);
  ModelFile model = load_model("cli_ck_pruned.blk");
  CHECK(model.any_masked());
}

TEST_CASE("bench json lists the three variants with median/min/max") {
  write_file("cli_bench.cfg",
             "shapes = 64x64x16\nsparsity = 0.8\nrepeats = 3\nblock = 8x8\nseed = 2\n");
  REQUIRE(run("bench --config cli_bench.cfg --out cli_bench.json") == 0);
  Json report = read_report("cli_bench.json");
  REQUIRE(report["cases"].size() == 1);
  const auto& variants = report["cases"][0]["variants"];
  REQUIRE(variants.size() == 3);
  std::set<std::string> names;
  for (const auto& v : variants) {
    names.insert(v["name"].get<std::string>());
    CHECK(v.contains("median_ms"));
    CHECK(v.contains("min_ms"));
    CHECK(v.contains("max_ms"));
  }
  CHECK(names == std::set<std::string>{"dense", "naive_sparse", "reordered"});
}

TEST_CASE("report pretty-prints a json file") {
  write_file("cli_rep.json", "{\"hello\": 1}\n");
  CHECK(run("report cli_rep.json", "cli_rep_out.txt") == 0);
  CHECK(slurp("cli_rep_out.txt").find("hello") != std::string::npos);
}

TEST_CASE("reorder requires a checkpoint") {
  CHECK(run("reorder", "cli_noreq.txt") == 2);
}

TEST_CASE("corrupted checkpoint fails with exit 1") {
  write_file("cli_corrupt.blk", "BLKREW01 this is not a valid payload");
  CHECK(run("infer --config cli_prune.cfg --checkpoint cli_corrupt.blk", "cli_c.txt") == 1);
}
