#pragma once

#include <cstdint>
#include <vector>

#include "blkrew/tensor.hpp"

namespace blkrew {

enum class Direction { Row, Column };

// m x n tiling of one layer's GEMM-form weight matrix. Trailing blocks are
// smaller when the dims do not divide evenly (ragged-edge policy; no padding).
struct BlockScheme {
  int64_t m = 1;           // block height
  int64_t n = 1;           // block width
  int64_t layer_rows = 0;  // matrix dims
  int64_t layer_cols = 0;

  int64_t grid_rows() const { return (layer_rows + m - 1) / m; }
  int64_t grid_cols() const { return (layer_cols + n - 1) / n; }
  int64_t block_count() const { return grid_rows() * grid_cols(); }

  // Blocks are indexed row-major over the block grid.
  int64_t row_begin(int64_t block) const { return (block / grid_cols()) * m; }
  int64_t row_end(int64_t block) const {
    int64_t e = row_begin(block) + m;
    return e < layer_rows ? e : layer_rows;
  }
  int64_t col_begin(int64_t block) const { return (block % grid_cols()) * n; }
  int64_t col_end(int64_t block) const {
    int64_t e = col_begin(block) + n;
    return e < layer_cols ? e : layer_cols;
  }
  int64_t block_of(int64_t r, int64_t c) const {
    return (r / m) * grid_cols() + (c / n);
  }

  bool operator==(const BlockScheme&) const = default;
};

BlockScheme partition(int64_t layer_rows, int64_t layer_cols, int64_t m, int64_t n);

// One row or one column of one block, with its global coordinates resolved.
// For Row groups `fixed` is the global row and [span_begin, span_end) the
// global column range; for Column groups the roles swap.
struct GroupRef {
  int32_t layer = 0;
  int64_t block = 0;
  Direction dir = Direction::Row;
  int64_t index = 0;  // p (row within block) or q (column within block)
  int64_t fixed = 0;
  int64_t span_begin = 0;
  int64_t span_end = 0;

  int64_t size() const { return span_end - span_begin; }
};

// Every (block, in-block index) pair exactly once, block-major then index.
std::vector<GroupRef> enumerate_groups(const BlockScheme& scheme, Direction dir);

double group_norm(const Tensor& weights, const GroupRef& g);
double group_sq_norm(const Tensor& weights, const GroupRef& g);

// Surviving row/column groups of the blocks of one layer, packed 64 bits per
// word. An element survives iff both its row group and its column group do.
struct BlockBits {
  std::vector<uint64_t> row_words;
  std::vector<uint64_t> col_words;
};

struct LayerMask {
  BlockScheme scheme;
  std::vector<BlockBits> blocks;

  static LayerMask all_alive(const BlockScheme& scheme);

  bool row_alive(int64_t block, int64_t p) const {
    return (blocks[block].row_words[p >> 6] >> (p & 63)) & 1u;
  }
  bool col_alive(int64_t block, int64_t q) const {
    return (blocks[block].col_words[q >> 6] >> (q & 63)) & 1u;
  }
  void set_row(int64_t block, int64_t p, bool alive);
  void set_col(int64_t block, int64_t q, bool alive);
  bool group_alive(const GroupRef& g) const;
  void set_group(const GroupRef& g, bool alive);

  bool element_alive(int64_t r, int64_t c) const;
  Tensor element_matrix() const;  // 0/1 matrix, layer_rows x layer_cols
  int64_t surviving_elements() const;
  int64_t total_elements() const { return scheme.layer_rows * scheme.layer_cols; }
};

// Per-network mask, one LayerMask per parameterized layer.
struct SparseMask {
  std::vector<LayerMask> layers;

  int64_t surviving_elements() const;
  int64_t total_elements() const;
};

// Masked entries become exactly 0.0, others pass through unchanged.
Tensor apply_mask(const Tensor& weights, const LayerMask& mask);

}  // namespace blkrew
