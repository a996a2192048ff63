#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blkrew/blocks.hpp"

namespace blkrew {

// Per-row sparsity pattern: which block-columns the row touches, plus the
// exact surviving-column bitset (the canonical grouping key).
struct RowSignature {
  std::vector<uint64_t> block_cols;  // bit per block-column, set iff the row
                                     // has at least one live element there
  std::vector<uint64_t> col_bits;    // full-width column bitset
  bool empty = true;
};

std::vector<RowSignature> compute_signatures(const LayerMask& mask);

struct RowGroup {
  int64_t row_start = 0;  // reordered coordinates
  int64_t row_count = 0;
  std::vector<int64_t> gather;   // strictly increasing input columns
  std::vector<double> compact;   // row_count x gather.size(), row-major
};

// Compact executable form of one masked matrix: rows permuted so identical
// patterns are adjacent, per-group all-zero columns compacted away.
struct ReorderedModel {
  int64_t rows = 0, cols = 0;
  std::vector<int64_t> perm;  // original row -> reordered position
  std::vector<int64_t> inv;   // reordered position -> original row
  std::vector<RowGroup> groups;  // cover all nonzero rows exactly once
  int64_t zero_rows = 0;         // trailing skipped rows

  int64_t multiply_count() const;  // per input column
};

// Rows stably sorted by (signature key, original index), exact-match classes
// merged into groups. fuzzy_span > 0 additionally merges adjacent classes
// whose signatures differ in at most that many block-columns; merged groups
// execute the union pattern with explicit zeros.
ReorderedModel reorder(const Tensor& weights, const LayerMask& mask, int64_t fuzzy_span = 0);

// Scatter the compact weights back; equals the masked matrix exactly.
Tensor reconstruct(const ReorderedModel& model);

struct ExecutionPlan {
  struct Span {
    int64_t group = 0;
    int64_t begin = 0;  // row range within the group
    int64_t end = 0;
  };
  int workers = 1;
  std::vector<std::vector<Span>> assignments;  // one span list per worker
};

// Equal-multiply-count contiguous cuts over the reordered row sequence; a
// large group is processed by every worker, each taking consecutive rows.
ExecutionPlan make_plan(const ReorderedModel& model, int workers);

// output = masked_weights x input. Deterministic per-row ascending-k sums,
// so the result is byte-identical for any worker count.
Tensor sparse_exec(const ReorderedModel& model, const Tensor& input, const ExecutionPlan& plan);

struct BalanceMetrics {
  double divergence = 0.0;  // mean pairwise per-row multiply-count gap within workers
  double imbalance = 1.0;   // max / mean per-worker multiply count
};

BalanceMetrics balance_metrics(const ReorderedModel& model, const ExecutionPlan& plan);

// Metrics for the unreordered execution: original row order, contiguous
// equal-row-count split across workers.
BalanceMetrics naive_balance_metrics(const LayerMask& mask, int workers);

// Generic core: per-worker lists of per-row multiply counts.
BalanceMetrics balance_from_costs(const std::vector<std::vector<int64_t>>& per_worker_costs);

struct BenchVariant {
  std::string name;  // dense | naive_sparse | reordered
  double median_ms = 0.0;
  double min_ms = 0.0;
  double max_ms = 0.0;
};

struct BenchCase {
  int64_t m = 0, k = 0, n = 0;
  int64_t block_m = 0, block_n = 0;
  double target_sparsity = 0.0;
  double actual_sparsity = 0.0;
  int repeats = 0;
  int workers = 1;
  std::vector<BenchVariant> variants;
};

// Block-sparse mask with clustered row patterns (trained models keep a
// degree of pattern regularity; `templates` row patterns per layer).
LayerMask random_block_mask(const BlockScheme& scheme, double sparsity, uint64_t seed,
                            int templates = 4);

// Median wall-clock of dense / naive-sparse / reordered execution for a
// given weight matrix and mask. The dense variant ignores the mask.
BenchCase bench_masked(const Tensor& weights, const LayerMask& mask, int64_t n, int repeats,
                       int workers, uint64_t seed);

// Same, over a synthetic weight matrix and a random block-sparse mask at the
// given GEMM shape.
BenchCase bench_shape(int64_t m, int64_t k, int64_t n, int64_t block_m, int64_t block_n,
                      double sparsity, int repeats, int workers, uint64_t seed);

}  // namespace blkrew
