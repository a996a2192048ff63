#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "blkrew/model_io.hpp"
#include "testutil.hpp"

using namespace blkrew;
using namespace blkrew::testutil;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempFile {
  std::string path;
  explicit TempFile(std::string p) : path(std::move(p)) {}
  ~TempFile() { std::remove(path.c_str()); }
};

Network trained_toy(uint64_t seed) {
  Network net = make_mlp({6, 8, 4}, seed);
  std::mt19937_64 rng(seed + 100);
  for (auto& w : net.weights)
    for (int64_t j = 0; j < w.size(); ++j) w[j] = random_tensor({1, 1}, rng)[0];
  return net;
}

}  // namespace

TEST_CASE("dense save/load round-trip is bit-identical") {
  Network net = trained_toy(1);
  ModelFile model = from_network_dense(net);
  TempFile f("io_dense.blk");
  save_model(model, f.path);
  const std::string bytes = slurp(f.path);

  ModelFile back = load_model(f.path);
  TempFile f2("io_dense2.blk");
  save_model(back, f2.path);
  CHECK(slurp(f2.path) == bytes);

  Network restored = to_network(back);
  for (size_t p = 0; p < net.weights.size(); ++p) {
    CHECK(restored.weights[p] == net.weights[p]);
    CHECK(restored.biases[p] == net.biases[p]);
  }
}

TEST_CASE("masked save/load round-trip is bit-identical") {
  Network net = trained_toy(2);
  auto schemes = schemes_for(net, 2, 3);
  PruneConfig cfg;
  cfg.tau = 0.5;
  SparseMask mask = prune_threshold(net, schemes, cfg);

  ModelFile model = from_network_masked(net, mask, schemes);
  TempFile f("io_masked.blk");
  save_model(model, f.path);
  ModelFile back = load_model(f.path);
  TempFile f2("io_masked2.blk");
  save_model(back, f2.path);
  CHECK(slurp(f.path) == slurp(f2.path));

  Network restored = to_network(back);
  CHECK(restored.mask_active());
  for (size_t p = 0; p < net.weights.size(); ++p)
    CHECK(restored.weights[p] == net.weights[p]);
}

TEST_CASE("reordered save/load round-trip is bit-identical") {
  Network net = trained_toy(3);
  auto schemes = schemes_for(net, 2, 3);
  PruneConfig cfg;
  cfg.tau = 0.4;
  SparseMask mask = prune_threshold(net, schemes, cfg);
  ModelFile masked = from_network_masked(net, mask, schemes);
  ModelFile reordered = to_reordered(masked);
  CHECK(reordered.all_reordered());

  TempFile f("io_reordered.blk");
  save_model(reordered, f.path);
  ModelFile back = load_model(f.path);
  TempFile f2("io_reordered2.blk");
  save_model(back, f2.path);
  CHECK(slurp(f.path) == slurp(f2.path));

  // reordering a reordered model is a no-op
  ModelFile again = to_reordered(back);
  TempFile f3("io_reordered3.blk");
  save_model(again, f3.path);
  CHECK(slurp(f3.path) == slurp(f.path));
}

TEST_CASE("checksum tamper detection") {
  Network net = trained_toy(4);
  ModelFile model = from_network_dense(net);
  TempFile f("io_tamper.blk");
  save_model(model, f.path);
  std::string bytes = slurp(f.path);
  bytes[bytes.size() / 2] ^= 0x40;  // flip one payload bit
  {
    std::ofstream out(f.path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_model(f.path), IoError);
}

TEST_CASE("bad magic and truncation are rejected") {
  TempFile f("io_bad.blk");
  {
    std::ofstream out(f.path, std::ios::binary);
    out << "NOTMODEL and then some bytes";
  }
  CHECK_THROWS_AS(load_model(f.path), IoError);

  Network net = trained_toy(5);
  TempFile f2("io_trunc.blk");
  save_model(from_network_dense(net), f2.path);
  std::string bytes = slurp(f2.path);
  bytes.resize(bytes.size() / 2);
  {
    std::ofstream out(f2.path, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  }
  CHECK_THROWS_AS(load_model(f2.path), IoError);
}

TEST_CASE("model_forward on reordered layers matches the dense masked path") {
  Network net = trained_toy(6);
  auto schemes = schemes_for(net, 2, 3);
  PruneConfig cfg;
  cfg.tau = 0.4;
  SparseMask mask = prune_threshold(net, schemes, cfg);
  ModelFile masked = from_network_masked(net, mask, schemes);
  ModelFile reordered = to_reordered(masked);

  std::mt19937_64 rng(9);
  Tensor batch = random_tensor({10, 6}, rng);
  Tensor a = model_forward(masked, batch, 1);
  for (int workers : {1, 2, 4, 8}) {
    Tensor b = model_forward(reordered, batch, workers);
    CHECK(max_abs_diff(a, b) <= 1e-9);
  }
}

TEST_CASE("stored layer table preserves conv specs") {
  std::vector<LayerSpec> specs;
  specs.push_back({LayerKind::Conv2d, {2, 5, 5, 3, 2, 2, 1, 1}, true});
  specs.push_back({LayerKind::Relu, {}, false});
  ConvSpec cs{2, 3, 2, 2, 1, 1};
  specs.push_back({LayerKind::FullyConnected, {3 * cs.out_h(5) * cs.out_w(5), 4}, true});
  specs.push_back({LayerKind::SoftmaxXent, {4}, false});
  Network net = make_network(std::move(specs), 7);

  TempFile f("io_conv.blk");
  save_model(from_network_dense(net), f.path);
  ModelFile back = load_model(f.path);
  REQUIRE(back.layers.size() == 4);
  CHECK(back.layers[0].spec.kind == LayerKind::Conv2d);
  CHECK(back.layers[0].spec.dims == std::vector<int64_t>{2, 5, 5, 3, 2, 2, 1, 1});

  std::mt19937_64 rng(10);
  Tensor batch = random_tensor({2, 2, 5, 5}, rng);
  Tensor want = forward(net, batch);
  Tensor got = model_forward(back, batch.reshaped({2, 50}), 1);
  CHECK(max_abs_diff(got, want) <= 1e-12);
}
