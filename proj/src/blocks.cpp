#include "blkrew/blocks.hpp"

#include <cmath>
#include <string>

namespace blkrew {

BlockScheme partition(int64_t layer_rows, int64_t layer_cols, int64_t m, int64_t n) {
  if (layer_rows < 1 || layer_cols < 1)
    throw ConfigError("partition: matrix dims must be >= 1");
  if (m < 1 || n < 1)
    throw ConfigError("partition: block dims must be >= 1 (got " + std::to_string(m) +
                      "x" + std::to_string(n) + ")");
  if (m > layer_rows || n > layer_cols)
    throw ConfigError("partition: block " + std::to_string(m) + "x" + std::to_string(n) +
                      " exceeds matrix " + std::to_string(layer_rows) + "x" +
                      std::to_string(layer_cols));
  return BlockScheme{m, n, layer_rows, layer_cols};
}

std::vector<GroupRef> enumerate_groups(const BlockScheme& scheme, Direction dir) {
  std::vector<GroupRef> out;
  const int64_t blocks = scheme.block_count();
  for (int64_t b = 0; b < blocks; ++b) {
    const int64_t r0 = scheme.row_begin(b), r1 = scheme.row_end(b);
    const int64_t c0 = scheme.col_begin(b), c1 = scheme.col_end(b);
    if (dir == Direction::Row) {
      for (int64_t p = 0; p < r1 - r0; ++p)
        out.push_back({0, b, dir, p, r0 + p, c0, c1});
    } else {
      for (int64_t q = 0; q < c1 - c0; ++q)
        out.push_back({0, b, dir, q, c0 + q, r0, r1});
    }
  }
  return out;
}

double group_sq_norm(const Tensor& weights, const GroupRef& g) {
  if (weights.ndim() != 2) throw ShapeError("group norm expects a matrix");
  double s = 0.0;
  if (g.dir == Direction::Row) {
    if (g.fixed >= weights.rows() || g.span_end > weights.cols())
      throw ShapeError("row group outside matrix");
    const double* row = weights.data() + g.fixed * weights.cols();
    for (int64_t c = g.span_begin; c < g.span_end; ++c) s += row[c] * row[c];
  } else {
    if (g.fixed >= weights.cols() || g.span_end > weights.rows())
      throw ShapeError("column group outside matrix");
    for (int64_t r = g.span_begin; r < g.span_end; ++r) {
      const double v = weights.at(r, g.fixed);
      s += v * v;
    }
  }
  return s;
}

double group_norm(const Tensor& weights, const GroupRef& g) {
  return std::sqrt(group_sq_norm(weights, g));
}

namespace {
std::vector<uint64_t> full_words(int64_t bits) {
  std::vector<uint64_t> w((bits + 63) / 64, ~uint64_t{0});
  if (bits % 64 != 0 && !w.empty()) w.back() = (uint64_t{1} << (bits % 64)) - 1;
  return w;
}
}  // namespace

LayerMask LayerMask::all_alive(const BlockScheme& scheme) {
  LayerMask mask;
  mask.scheme = scheme;
  mask.blocks.resize(scheme.block_count());
  for (int64_t b = 0; b < scheme.block_count(); ++b) {
    mask.blocks[b].row_words = full_words(scheme.row_end(b) - scheme.row_begin(b));
    mask.blocks[b].col_words = full_words(scheme.col_end(b) - scheme.col_begin(b));
  }
  return mask;
}

void LayerMask::set_row(int64_t block, int64_t p, bool alive) {
  uint64_t& w = blocks[block].row_words[p >> 6];
  if (alive)
    w |= uint64_t{1} << (p & 63);
  else
    w &= ~(uint64_t{1} << (p & 63));
}

void LayerMask::set_col(int64_t block, int64_t q, bool alive) {
  uint64_t& w = blocks[block].col_words[q >> 6];
  if (alive)
    w |= uint64_t{1} << (q & 63);
  else
    w &= ~(uint64_t{1} << (q & 63));
}

bool LayerMask::group_alive(const GroupRef& g) const {
  return g.dir == Direction::Row ? row_alive(g.block, g.index) : col_alive(g.block, g.index);
}

void LayerMask::set_group(const GroupRef& g, bool alive) {
  if (g.dir == Direction::Row)
    set_row(g.block, g.index, alive);
  else
    set_col(g.block, g.index, alive);
}

bool LayerMask::element_alive(int64_t r, int64_t c) const {
  const int64_t b = scheme.block_of(r, c);
  return row_alive(b, r - scheme.row_begin(b)) && col_alive(b, c - scheme.col_begin(b));
}

Tensor LayerMask::element_matrix() const {
  Tensor out({scheme.layer_rows, scheme.layer_cols});
  for (int64_t r = 0; r < scheme.layer_rows; ++r)
    for (int64_t c = 0; c < scheme.layer_cols; ++c)
      out.at(r, c) = element_alive(r, c) ? 1.0 : 0.0;
  return out;
}

int64_t LayerMask::surviving_elements() const {
  int64_t count = 0;
  for (int64_t b = 0; b < scheme.block_count(); ++b) {
    int64_t rows = 0, cols = 0;
    const int64_t bh = scheme.row_end(b) - scheme.row_begin(b);
    const int64_t bw = scheme.col_end(b) - scheme.col_begin(b);
    for (int64_t p = 0; p < bh; ++p) rows += row_alive(b, p) ? 1 : 0;
    for (int64_t q = 0; q < bw; ++q) cols += col_alive(b, q) ? 1 : 0;
    count += rows * cols;  // survivors form a dense rectangle per block
  }
  return count;
}

int64_t SparseMask::surviving_elements() const {
  int64_t n = 0;
  for (const auto& l : layers) n += l.surviving_elements();
  return n;
}

int64_t SparseMask::total_elements() const {
  int64_t n = 0;
  for (const auto& l : layers) n += l.total_elements();
  return n;
}

Tensor apply_mask(const Tensor& weights, const LayerMask& mask) {
  if (weights.ndim() != 2 || weights.rows() != mask.scheme.layer_rows ||
      weights.cols() != mask.scheme.layer_cols)
    throw ShapeError("apply_mask: mask shape does not match weights");
  Tensor out = weights;
  for (int64_t r = 0; r < weights.rows(); ++r)
    for (int64_t c = 0; c < weights.cols(); ++c)
      if (!mask.element_alive(r, c)) out.at(r, c) = 0.0;
  return out;
}

}  // namespace blkrew
