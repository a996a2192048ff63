#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "blkrew/reorder.hpp"
#include "testutil.hpp"

using namespace blkrew;
using namespace blkrew::testutil;

namespace {

LayerMask random_mask(const BlockScheme& scheme, std::mt19937_64& rng, double kill = 0.4) {
  LayerMask mask = LayerMask::all_alive(scheme);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  for (int64_t b = 0; b < scheme.block_count(); ++b) {
    for (int64_t p = 0; p < scheme.row_end(b) - scheme.row_begin(b); ++p)
      if (uni(rng) < kill) mask.set_row(b, p, false);
    for (int64_t q = 0; q < scheme.col_end(b) - scheme.col_begin(b); ++q)
      if (uni(rng) < kill) mask.set_col(b, q, false);
  }
  return mask;
}

std::vector<bool> row_pattern(const LayerMask& mask, int64_t r) {
  std::vector<bool> pattern(mask.scheme.layer_cols);
  for (int64_t c = 0; c < mask.scheme.layer_cols; ++c) pattern[c] = mask.element_alive(r, c);
  return pattern;
}

}  // namespace

TEST_CASE("fully dense mask: all signatures identical") {
  BlockScheme s = partition(8, 12, 2, 4);
  LayerMask mask = LayerMask::all_alive(s);
  auto sigs = compute_signatures(mask);
  for (const auto& sig : sigs) {
    CHECK(!sig.empty);
    CHECK(sig.col_bits == sigs[0].col_bits);
  }
}

TEST_CASE("two distinct row patterns yield exactly two signature classes") {
  BlockScheme s = partition(6, 8, 6, 4);  // one block row
  LayerMask mask = LayerMask::all_alive(s);
  // odd rows lose block 0, even rows lose block 1
  for (int64_t p = 0; p < 6; ++p) mask.set_row(p % 2 == 0 ? 1 : 0, p, false);
  auto sigs = compute_signatures(mask);
  std::set<std::vector<uint64_t>> classes;
  for (const auto& sig : sigs) classes.insert(sig.col_bits);
  CHECK(classes.size() == 2);
}

TEST_CASE("signature equality matches brute-force row-pattern comparison") {
  std::mt19937_64 rng(7);
  for (int it = 0; it < 30; ++it) {
    BlockScheme s = partition(10, 12, 2 + it % 3, 3 + it % 4);
    LayerMask mask = random_mask(s, rng);
    auto sigs = compute_signatures(mask);
    for (int64_t a = 0; a < s.layer_rows; ++a)
      for (int64_t b = 0; b < s.layer_rows; ++b) {
        const bool sig_eq = sigs[a].col_bits == sigs[b].col_bits;
        const bool pat_eq = row_pattern(mask, a) == row_pattern(mask, b);
        CHECK(sig_eq == pat_eq);
      }
  }
}

TEST_CASE("empty rows carry the empty signature") {
  BlockScheme s = partition(4, 4, 2, 2);
  LayerMask mask = LayerMask::all_alive(s);
  mask.set_row(0, 0, false);
  mask.set_row(1, 0, false);  // row 0 dead in both block-columns
  auto sigs = compute_signatures(mask);
  CHECK(sigs[0].empty);
  CHECK(!sigs[1].empty);
}

TEST_CASE("dense matrix reorders to a single identity group") {
  std::mt19937_64 rng(11);
  Tensor w = random_tensor({6, 8}, rng);
  BlockScheme s = partition(6, 8, 2, 4);
  LayerMask mask = LayerMask::all_alive(s);
  ReorderedModel model = reorder(w, mask);
  REQUIRE(model.groups.size() == 1);
  CHECK(model.groups[0].row_count == 6);
  CHECK(model.zero_rows == 0);
  CHECK(model.groups[0].gather.size() == 8);
  for (int64_t r = 0; r < 6; ++r) CHECK(model.perm[r] == r);  // stable
}

TEST_CASE("odd/even patterns interleave into two equal groups") {
  // 6x8 matrix, one block row of two blocks: odd rows keep only block A,
  // even rows keep only block B.
  BlockScheme s = partition(6, 8, 6, 4);
  LayerMask mask = LayerMask::all_alive(s);
  for (int64_t p = 0; p < 6; ++p) mask.set_row(p % 2 == 0 ? 1 : 0, p, false);
  std::mt19937_64 rng(13);
  Tensor w = apply_mask(random_tensor({6, 8}, rng), mask);
  ReorderedModel model = reorder(w, mask);
  REQUIRE(model.groups.size() == 2);
  CHECK(model.groups[0].row_count == 3);
  CHECK(model.groups[1].row_count == 3);
  // each group holds all-even or all-odd original rows, in stable order
  std::vector<int64_t> first = {model.inv[0], model.inv[1], model.inv[2]};
  std::vector<int64_t> second = {model.inv[3], model.inv[4], model.inv[5]};
  const std::vector<int64_t> evens = {0, 2, 4}, odds = {1, 3, 5};
  const bool even_first = first == evens && second == odds;
  const bool odd_first = first == odds && second == evens;
  CHECK((even_first || odd_first));
}

TEST_CASE("round-trip reconstruction reproduces the masked matrix exactly") {
  std::mt19937_64 rng(17);
  for (int it = 0; it < 30; ++it) {
    BlockScheme s = partition(9, 11, 1 + it % 4, 2 + it % 5);
    LayerMask mask = random_mask(s, rng, 0.5);
    Tensor w = random_tensor({9, 11}, rng);
    Tensor masked = apply_mask(w, mask);
    ReorderedModel model = reorder(masked, mask);
    CHECK(reconstruct(model) == masked);

    // permutation bijectivity
    std::set<int64_t> seen(model.perm.begin(), model.perm.end());
    CHECK(seen.size() == static_cast<size_t>(model.rows));

    // gather indices strictly increasing
    for (const auto& g : model.groups)
      for (size_t k = 1; k < g.gather.size(); ++k) CHECK(g.gather[k] > g.gather[k - 1]);

    // groups cover all nonzero rows exactly once
    int64_t covered = 0;
    for (const auto& g : model.groups) covered += g.row_count;
    CHECK(covered + model.zero_rows == model.rows);
  }
}

TEST_CASE("sparse_exec on a dense mask matches gemm exactly") {
  std::mt19937_64 rng(19);
  Tensor w = random_tensor({7, 9}, rng);
  BlockScheme s = partition(7, 9, 3, 3);
  LayerMask mask = LayerMask::all_alive(s);
  ReorderedModel model = reorder(w, mask);
  Tensor input = random_tensor({9, 5}, rng);
  Tensor got = sparse_exec(model, input, make_plan(model, 2));
  Tensor want = gemm(w, input);
  CHECK(max_abs_diff(got, want) == 0.0);
}

TEST_CASE("sparse_exec matches the dense masked oracle across worker counts") {
  std::mt19937_64 rng(23);
  for (int it = 0; it < 100; ++it) {
    const int64_t rows = 3 + it % 12, cols = 4 + (it * 7) % 13;
    const int64_t m = std::min<int64_t>(rows, 1 + it % 5);
    const int64_t n = std::min<int64_t>(cols, 1 + (it / 2) % 6);
    BlockScheme s = partition(rows, cols, m, n);
    LayerMask mask = random_mask(s, rng, 0.45);
    Tensor w = apply_mask(random_tensor({rows, cols}, rng), mask);
    Tensor input = random_tensor({cols, 6}, rng);
    ReorderedModel model = reorder(w, mask);
    Tensor want = gemm_oracle(w, input);

    Tensor first;
    for (int workers : {1, 2, 4, 8}) {
      Tensor got = sparse_exec(model, input, make_plan(model, workers));
      CHECK(max_abs_diff(got, want) <= 1e-9);
      if (workers == 1)
        first = got;
      else
        CHECK(got == first);  // byte-identical across worker counts
    }
  }
}

TEST_CASE("multiply-count conservation") {
  std::mt19937_64 rng(29);
  for (int it = 0; it < 50; ++it) {
    BlockScheme s = partition(8, 10, 2, 2);
    LayerMask mask = random_mask(s, rng, 0.5);
    Tensor w = apply_mask(random_tensor({8, 10}, rng), mask);
    ReorderedModel model = reorder(w, mask);
    CHECK(model.multiply_count() == mask.surviving_elements());
  }
}

TEST_CASE("balance metrics: dense even split") {
  std::mt19937_64 rng(31);
  Tensor w = random_tensor({8, 8}, rng);
  BlockScheme s = partition(8, 8, 2, 2);
  LayerMask mask = LayerMask::all_alive(s);
  ReorderedModel model = reorder(w, mask);
  BalanceMetrics m = balance_metrics(model, make_plan(model, 4));
  CHECK(m.imbalance == 1.0);
  CHECK(m.divergence == 0.0);
}

TEST_CASE("one heavy row among empties under two workers gives imbalance 2") {
  std::vector<std::vector<int64_t>> costs = {{10, 0, 0}, {0, 0, 0}};
  BalanceMetrics m = balance_from_costs(costs);
  CHECK(m.imbalance == 2.0);
}

TEST_CASE("reordered plan balances at least as well as the naive split") {
  std::mt19937_64 rng(37);
  int wins = 0;
  const int cases = 50;
  for (int it = 0; it < cases; ++it) {
    BlockScheme s = partition(24, 24, 4, 4);
    LayerMask mask = random_mask(s, rng, 0.5);
    Tensor w = apply_mask(random_tensor({24, 24}, rng), mask);
    ReorderedModel model = reorder(w, mask);
    BalanceMetrics reordered = balance_metrics(model, make_plan(model, 4));
    BalanceMetrics naive = naive_balance_metrics(mask, 4);
    if (reordered.imbalance <= naive.imbalance) ++wins;
  }
  CHECK(wins >= cases * 8 / 10);  // the reorder is a heuristic, not an optimum
}

TEST_CASE("fuzzy merge joins near-identical classes and stays exact") {
  BlockScheme s = partition(6, 8, 6, 2);  // four block-columns
  LayerMask mask = LayerMask::all_alive(s);
  // rows 0-2 keep all blocks; rows 3-5 lose one block-column
  for (int64_t p = 3; p < 6; ++p) mask.set_row(2, p, false);
  std::mt19937_64 rng(41);
  Tensor w = apply_mask(random_tensor({6, 8}, rng), mask);

  ReorderedModel exact = reorder(w, mask, 0);
  CHECK(exact.groups.size() == 2);
  ReorderedModel fuzzy = reorder(w, mask, 1);
  CHECK(fuzzy.groups.size() == 1);
  CHECK(reconstruct(fuzzy) == apply_mask(w, mask));

  Tensor input = random_tensor({8, 4}, rng);
  Tensor a = sparse_exec(exact, input, make_plan(exact, 2));
  Tensor b = sparse_exec(fuzzy, input, make_plan(fuzzy, 2));
  CHECK(max_abs_diff(a, b) <= 1e-9);
}

TEST_CASE("bench smoke: three variants with median/min/max, dense ignores mask") {
  BenchCase bc = bench_shape(64, 64, 16, 8, 8, 0.8, 3, 2, 5);
  REQUIRE(bc.variants.size() == 3);
  CHECK(bc.variants[0].name == "dense");
  CHECK(bc.variants[1].name == "naive_sparse");
  CHECK(bc.variants[2].name == "reordered");
  for (const auto& v : bc.variants) {
    CHECK(v.min_ms <= v.median_ms);
    CHECK(v.median_ms <= v.max_ms);
  }
  CHECK(bc.repeats == 3);
  CHECK(bc.actual_sparsity >= 0.8);

  // dense output depends only on the weights, not the mask
  std::mt19937_64 rng(43);
  Tensor w = random_tensor({8, 8}, rng);
  Tensor input = random_tensor({8, 3}, rng);
  Tensor dense_out = gemm(w, input);
  BlockScheme s = partition(8, 8, 4, 4);
  LayerMask m1 = random_mask(s, rng, 0.3), m2 = random_mask(s, rng, 0.7);
  (void)m1;
  (void)m2;
  CHECK(gemm(w, input) == dense_out);
}

TEST_CASE("plans assign every grouped row to exactly one worker") {
  std::mt19937_64 rng(53);
  for (int it = 0; it < 20; ++it) {
    BlockScheme s = partition(16, 16, 4, 4);
    LayerMask mask = random_mask(s, rng, 0.5);
    Tensor w = apply_mask(random_tensor({16, 16}, rng), mask);
    ReorderedModel model = reorder(w, mask);
    for (int workers : {1, 3, 5}) {
      ExecutionPlan plan = make_plan(model, workers);
      std::vector<int> hits;
      for (const auto& g : model.groups) hits.insert(hits.end(), g.row_count, 0);
      int64_t offset = 0;
      std::vector<int64_t> group_offset;
      for (const auto& g : model.groups) {
        group_offset.push_back(offset);
        offset += g.row_count;
      }
      for (const auto& spans : plan.assignments)
        for (const auto& span : spans)
          for (int64_t r = span.begin; r < span.end; ++r) ++hits[group_offset[span.group] + r];
      for (int h : hits) CHECK(h == 1);
    }
  }
}

TEST_CASE("zero-signature rows are skipped but still produce zero output") {
  BlockScheme s = partition(4, 4, 2, 2);
  LayerMask mask = LayerMask::all_alive(s);
  mask.set_row(0, 0, false);
  mask.set_row(1, 0, false);  // row 0 fully dead
  std::mt19937_64 rng(47);
  Tensor w = apply_mask(random_tensor({4, 4}, rng), mask);
  ReorderedModel model = reorder(w, mask);
  CHECK(model.zero_rows == 1);
  Tensor input = random_tensor({4, 3}, rng);
  Tensor out = sparse_exec(model, input, make_plan(model, 2));
  for (int64_t c = 0; c < 3; ++c) CHECK(out.at(0, c) == 0.0);
  CHECK(max_abs_diff(out, gemm_oracle(w, input)) <= 1e-9);
}
