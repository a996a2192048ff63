#include "blkrew/reorder.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <random>
#include <stdexcept>
#include <thread>

namespace blkrew {

std::vector<RowSignature> compute_signatures(const LayerMask& mask) {
  const BlockScheme& sch = mask.scheme;
  const int64_t rows = sch.layer_rows, cols = sch.layer_cols;
  const int64_t grid_cols = sch.grid_cols();
  const int64_t col_words = (cols + 63) / 64;
  const int64_t bc_words = (grid_cols + 63) / 64;

  std::vector<RowSignature> sigs(rows);
  for (int64_t r = 0; r < rows; ++r) {
    RowSignature& sig = sigs[r];
    sig.block_cols.assign(bc_words, 0);
    sig.col_bits.assign(col_words, 0);
    const int64_t br = r / sch.m;
    for (int64_t bc = 0; bc < grid_cols; ++bc) {
      const int64_t block = br * grid_cols + bc;
      if (!mask.row_alive(block, r - sch.row_begin(block))) continue;
      const int64_t c0 = sch.col_begin(block), c1 = sch.col_end(block);
      bool any = false;
      for (int64_t c = c0; c < c1; ++c) {
        if (mask.col_alive(block, c - c0)) {
          sig.col_bits[c >> 6] |= uint64_t{1} << (c & 63);
          any = true;
        }
      }
      if (any) {
        sig.block_cols[bc >> 6] |= uint64_t{1} << (bc & 63);
        sig.empty = false;
      }
    }
  }
  return sigs;
}

namespace {

// Number of block-columns where two signatures' local column patterns differ.
int64_t block_col_diff(const RowSignature& a, const RowSignature& b, const BlockScheme& sch) {
  int64_t diff = 0;
  for (int64_t bc = 0; bc < sch.grid_cols(); ++bc) {
    const int64_t c0 = bc * sch.n;
    const int64_t c1 = std::min(c0 + sch.n, sch.layer_cols);
    bool same = true;
    for (int64_t c = c0; c < c1 && same; ++c) {
      const bool ba = (a.col_bits[c >> 6] >> (c & 63)) & 1u;
      const bool bb = (b.col_bits[c >> 6] >> (c & 63)) & 1u;
      if (ba != bb) same = false;
    }
    if (!same) ++diff;
  }
  return diff;
}

}  // namespace

int64_t ReorderedModel::multiply_count() const {
  int64_t n = 0;
  for (const auto& g : groups) n += g.row_count * static_cast<int64_t>(g.gather.size());
  return n;
}

ReorderedModel reorder(const Tensor& weights, const LayerMask& mask, int64_t fuzzy_span) {
  if (weights.ndim() != 2 || weights.rows() != mask.scheme.layer_rows ||
      weights.cols() != mask.scheme.layer_cols)
    throw ShapeError("reorder: weights do not match mask dims");

  const int64_t rows = weights.rows(), cols = weights.cols();
  const auto sigs = compute_signatures(mask);

  std::vector<int64_t> order(rows);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int64_t a, int64_t b) {
    if (sigs[a].empty != sigs[b].empty) return sigs[b].empty;  // zero rows last
    if (sigs[a].col_bits != sigs[b].col_bits) return sigs[a].col_bits < sigs[b].col_bits;
    return a < b;
  });

  ReorderedModel model;
  model.rows = rows;
  model.cols = cols;
  model.inv = order;
  model.perm.assign(rows, 0);
  for (int64_t pos = 0; pos < rows; ++pos) model.perm[order[pos]] = pos;

  // Exact-signature class runs over the sorted order.
  struct Run {
    int64_t start, count;
  };
  std::vector<Run> runs;
  int64_t pos = 0;
  while (pos < rows && !sigs[order[pos]].empty) {
    int64_t end = pos + 1;
    while (end < rows && !sigs[order[end]].empty &&
           sigs[order[end]].col_bits == sigs[order[pos]].col_bits)
      ++end;
    runs.push_back({pos, end - pos});
    pos = end;
  }
  model.zero_rows = rows - pos;

  // Optional fuzzy merge of adjacent classes; each merged group executes the
  // union pattern with explicit zeros where a row lacks a column.
  std::vector<std::vector<Run>> merged;
  for (const auto& run : runs) {
    bool merge = false;
    if (fuzzy_span > 0 && !merged.empty()) {
      const Run& head = merged.back().front();
      merge = block_col_diff(sigs[order[head.start]], sigs[order[run.start]], mask.scheme) <=
              fuzzy_span;
    }
    if (merge)
      merged.back().push_back(run);
    else
      merged.push_back({run});
  }

  for (const auto& cluster : merged) {
    RowGroup group;
    group.row_start = cluster.front().start;
    group.row_count = 0;
    std::vector<uint64_t> union_bits((cols + 63) / 64, 0);
    for (const auto& run : cluster) {
      group.row_count += run.count;
      const auto& bits = sigs[order[run.start]].col_bits;
      for (size_t w = 0; w < union_bits.size(); ++w) union_bits[w] |= bits[w];
    }
    for (int64_t c = 0; c < cols; ++c)
      if ((union_bits[c >> 6] >> (c & 63)) & 1u) group.gather.push_back(c);
    group.compact.assign(group.row_count * group.gather.size(), 0.0);
    for (int64_t r = 0; r < group.row_count; ++r) {
      const int64_t orig = order[group.row_start + r];
      for (size_t k = 0; k < group.gather.size(); ++k) {
        const int64_t c = group.gather[k];
        if (mask.element_alive(orig, c))
          group.compact[r * group.gather.size() + k] = weights.at(orig, c);
      }
    }
    model.groups.push_back(std::move(group));
  }
  return model;
}

Tensor reconstruct(const ReorderedModel& model) {
  Tensor out({model.rows, model.cols});
  for (const auto& g : model.groups) {
    const int64_t gs = static_cast<int64_t>(g.gather.size());
    for (int64_t r = 0; r < g.row_count; ++r) {
      const int64_t orig = model.inv[g.row_start + r];
      for (int64_t k = 0; k < gs; ++k) out.at(orig, g.gather[k]) = g.compact[r * gs + k];
    }
  }
  return out;
}

ExecutionPlan make_plan(const ReorderedModel& model, int workers) {
  if (workers < 1) throw ConfigError("worker count must be >= 1");
  ExecutionPlan plan;
  plan.workers = workers;
  plan.assignments.resize(workers);

  // Per-row multiply counts over the grouped (nonzero) row sequence.
  int64_t grouped_rows = 0;
  for (const auto& g : model.groups) grouped_rows += g.row_count;
  if (grouped_rows == 0) return plan;
  std::vector<int64_t> prefix(grouped_rows + 1, 0);
  {
    int64_t r = 0;
    for (const auto& g : model.groups) {
      const int64_t cost = static_cast<int64_t>(g.gather.size());
      for (int64_t i = 0; i < g.row_count; ++i, ++r) prefix[r + 1] = prefix[r] + cost;
    }
  }
  const int64_t total = prefix.back();

  int64_t cursor = 0;
  for (int w = 0; w < workers; ++w) {
    // Smallest row index whose prefix reaches this worker's cost quantile.
    const int64_t target = (total * (w + 1) + workers - 1) / workers;
    int64_t end = cursor;
    while (end < grouped_rows && prefix[end + 1] <= target) ++end;
    if (w == workers - 1) end = grouped_rows;
    // Intersect [cursor, end) with the group ranges.
    int64_t row = 0;
    for (size_t gi = 0; gi < model.groups.size(); ++gi) {
      const int64_t g_begin = row, g_end = row + model.groups[gi].row_count;
      const int64_t lo = std::max(g_begin, cursor), hi = std::min(g_end, end);
      if (lo < hi)
        plan.assignments[w].push_back({static_cast<int64_t>(gi), lo - g_begin, hi - g_begin});
      row = g_end;
    }
    cursor = end;
  }
  return plan;
}

namespace {

void exec_spans(const ReorderedModel& model, const Tensor& input,
                const std::vector<ExecutionPlan::Span>& spans, Tensor& out) {
  const int64_t n = input.cols();
  for (const auto& span : spans) {
    const RowGroup& g = model.groups[span.group];
    const int64_t gs = static_cast<int64_t>(g.gather.size());
    int64_t r = span.begin;
    while (r < span.end) {
      const int64_t take = std::min<int64_t>(4, span.end - r);
      double* out_rows[4];
      const double* w_rows[4];
      for (int64_t t = 0; t < take; ++t) {
        out_rows[t] = out.data() + model.inv[g.row_start + r + t] * n;
        w_rows[t] = g.compact.data() + (r + t) * gs;
      }
      // k outer: each input row is loaded once and reused by up to four
      // output rows; per-element accumulation stays in ascending-k order.
      for (int64_t k = 0; k < gs; ++k) {
        const double* in_row = input.data() + g.gather[k] * n;
        for (int64_t t = 0; t < take; ++t) {
          const double v = w_rows[t][k];
          double* o = out_rows[t];
          for (int64_t c = 0; c < n; ++c) o[c] += v * in_row[c];
        }
      }
      r += take;
    }
  }
}

}  // namespace

Tensor sparse_exec(const ReorderedModel& model, const Tensor& input, const ExecutionPlan& plan) {
  if (input.ndim() != 2 || input.rows() != model.cols)
    throw ShapeError("sparse_exec: input rows must equal original column count");
  Tensor out({model.rows, input.cols()});
  if (plan.workers <= 1) {
    for (const auto& spans : plan.assignments) exec_spans(model, input, spans, out);
    return out;
  }
  std::vector<std::thread> pool;
  for (int w = 1; w < plan.workers; ++w)
    pool.emplace_back([&, w] { exec_spans(model, input, plan.assignments[w], out); });
  exec_spans(model, input, plan.assignments[0], out);
  for (auto& th : pool) th.join();
  return out;
}

BalanceMetrics balance_from_costs(const std::vector<std::vector<int64_t>>& per_worker_costs) {
  BalanceMetrics metrics;
  double max_total = 0.0, sum_total = 0.0;
  double pair_sum = 0.0, pair_count = 0.0;
  for (const auto& costs : per_worker_costs) {
    double total = 0.0;
    for (int64_t c : costs) total += static_cast<double>(c);
    max_total = std::max(max_total, total);
    sum_total += total;
    // Sum of pairwise |ci - cj| via the sorted-order identity.
    std::vector<int64_t> sorted = costs;
    std::sort(sorted.begin(), sorted.end());
    double prefix = 0.0;
    for (size_t i = 0; i < sorted.size(); ++i) {
      pair_sum += static_cast<double>(sorted[i]) * static_cast<double>(i) - prefix;
      prefix += static_cast<double>(sorted[i]);
    }
    const double k = static_cast<double>(sorted.size());
    pair_count += k * (k - 1.0) / 2.0;
  }
  const double mean_total =
      per_worker_costs.empty() ? 0.0 : sum_total / static_cast<double>(per_worker_costs.size());
  metrics.imbalance = mean_total > 0.0 ? max_total / mean_total : 1.0;
  metrics.divergence = pair_count > 0.0 ? pair_sum / pair_count : 0.0;
  return metrics;
}

BalanceMetrics balance_metrics(const ReorderedModel& model, const ExecutionPlan& plan) {
  std::vector<std::vector<int64_t>> costs(plan.assignments.size());
  for (size_t w = 0; w < plan.assignments.size(); ++w)
    for (const auto& span : plan.assignments[w]) {
      const int64_t c = static_cast<int64_t>(model.groups[span.group].gather.size());
      for (int64_t r = span.begin; r < span.end; ++r) costs[w].push_back(c);
    }
  return balance_from_costs(costs);
}

BalanceMetrics naive_balance_metrics(const LayerMask& mask, int workers) {
  if (workers < 1) throw ConfigError("worker count must be >= 1");
  const int64_t rows = mask.scheme.layer_rows;
  std::vector<int64_t> row_cost(rows, 0);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < mask.scheme.layer_cols; ++c)
      if (mask.element_alive(r, c)) ++row_cost[r];
  std::vector<std::vector<int64_t>> costs(workers);
  for (int w = 0; w < workers; ++w) {
    const int64_t lo = rows * w / workers, hi = rows * (w + 1) / workers;
    costs[w].assign(row_cost.begin() + lo, row_cost.begin() + hi);
  }
  return balance_from_costs(costs);
}

LayerMask random_block_mask(const BlockScheme& scheme, double sparsity, uint64_t seed,
                            int templates) {
  if (sparsity < 0.0 || sparsity >= 1.0)
    throw ConfigError("sparsity must be in [0, 1)");
  if (templates < 1) throw ConfigError("templates must be >= 1");
  LayerMask mask = LayerMask::all_alive(scheme);
  if (sparsity == 0.0) return mask;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const double keep = std::sqrt(1.0 - sparsity);
  const int64_t grid_rows = scheme.grid_rows(), grid_cols = scheme.grid_cols();

  // Row survival follows one of a few per-block-column templates; trained
  // block-pruned models keep clustered row patterns, which is what the
  // reorder pass exploits.
  std::vector<std::vector<bool>> tpl(templates, std::vector<bool>(grid_cols));
  for (auto& t : tpl)
    for (int64_t bc = 0; bc < grid_cols; ++bc) t[bc] = uni(rng) < keep;

  std::uniform_int_distribution<int> pick(0, templates - 1);
  for (int64_t br = 0; br < grid_rows; ++br) {
    const int64_t bh = scheme.row_end(br * grid_cols) - scheme.row_begin(br * grid_cols);
    for (int64_t p = 0; p < bh; ++p) {
      const auto& t = tpl[pick(rng)];
      for (int64_t bc = 0; bc < grid_cols; ++bc)
        if (!t[bc]) mask.set_row(br * grid_cols + bc, p, false);
    }
  }
  for (int64_t b = 0; b < scheme.block_count(); ++b) {
    const int64_t bw = scheme.col_end(b) - scheme.col_begin(b);
    for (int64_t q = 0; q < bw; ++q)
      if (uni(rng) >= keep) mask.set_col(b, q, false);
  }

  // Trim further until the element sparsity target is met.
  const int64_t total = mask.total_elements();
  int64_t surviving = mask.surviving_elements();
  const int64_t want = static_cast<int64_t>(std::floor((1.0 - sparsity) * total));
  std::uniform_int_distribution<int64_t> pick_block(0, scheme.block_count() - 1);
  int64_t attempts = 16 * scheme.block_count() + 64;
  while (surviving > want && attempts-- > 0) {
    const int64_t b = pick_block(rng);
    const int64_t bw = scheme.col_end(b) - scheme.col_begin(b);
    const int64_t q = std::uniform_int_distribution<int64_t>(0, bw - 1)(rng);
    if (!mask.col_alive(b, q)) continue;
    int64_t rows_live = 0;
    const int64_t bh = scheme.row_end(b) - scheme.row_begin(b);
    for (int64_t p = 0; p < bh; ++p) rows_live += mask.row_alive(b, p);
    mask.set_col(b, q, false);
    surviving -= rows_live;
  }
  return mask;
}

namespace {

double elapsed_ms(const std::chrono::steady_clock::time_point& t0) {
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count();
}

void dense_rows(const Tensor& w, const Tensor& input, Tensor& out, int64_t r0, int64_t r1) {
  const int64_t kk = w.cols(), n = input.cols();
  for (int64_t i = r0; i < r1; ++i) {
    double* out_row = out.data() + i * n;
    const double* w_row = w.data() + i * kk;
    for (int64_t k = 0; k < kk; ++k) {
      const double v = w_row[k];
      const double* in_row = input.data() + k * n;
      for (int64_t c = 0; c < n; ++c) out_row[c] += v * in_row[c];
    }
  }
}

Tensor dense_exec(const Tensor& w, const Tensor& input, int workers) {
  Tensor out({w.rows(), input.cols()});
  if (workers <= 1) {
    dense_rows(w, input, out, 0, w.rows());
    return out;
  }
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t)
    pool.emplace_back([&, t] {
      dense_rows(w, input, out, w.rows() * t / workers, w.rows() * (t + 1) / workers);
    });
  dense_rows(w, input, out, 0, w.rows() / workers);
  for (auto& th : pool) th.join();
  return out;
}

struct CsrMatrix {
  int64_t rows = 0;
  std::vector<int64_t> row_ptr;
  std::vector<int64_t> col_idx;
  std::vector<double> values;
};

CsrMatrix csr_from_mask(const Tensor& w, const LayerMask& mask) {
  CsrMatrix csr;
  csr.rows = w.rows();
  csr.row_ptr.push_back(0);
  for (int64_t r = 0; r < w.rows(); ++r) {
    for (int64_t c = 0; c < w.cols(); ++c) {
      if (mask.element_alive(r, c)) {
        csr.col_idx.push_back(c);
        csr.values.push_back(w.at(r, c));
      }
    }
    csr.row_ptr.push_back(static_cast<int64_t>(csr.col_idx.size()));
  }
  return csr;
}

void csr_rows(const CsrMatrix& csr, const Tensor& input, Tensor& out, int64_t r0, int64_t r1) {
  const int64_t n = input.cols();
  for (int64_t r = r0; r < r1; ++r) {
    double* out_row = out.data() + r * n;
    for (int64_t idx = csr.row_ptr[r]; idx < csr.row_ptr[r + 1]; ++idx) {
      const double v = csr.values[idx];
      const double* in_row = input.data() + csr.col_idx[idx] * n;
      for (int64_t c = 0; c < n; ++c) out_row[c] += v * in_row[c];
    }
  }
}

Tensor csr_exec(const CsrMatrix& csr, const Tensor& input, int workers) {
  Tensor out({csr.rows, input.cols()});
  if (workers <= 1) {
    csr_rows(csr, input, out, 0, csr.rows);
    return out;
  }
  std::vector<std::thread> pool;
  for (int t = 1; t < workers; ++t)
    pool.emplace_back([&, t] {
      csr_rows(csr, input, out, csr.rows * t / workers, csr.rows * (t + 1) / workers);
    });
  csr_rows(csr, input, out, 0, csr.rows / workers);
  for (auto& th : pool) th.join();
  return out;
}

BenchVariant time_variant(const std::string& name, int repeats,
                          const std::function<void()>& fn) {
  fn();  // warmup
  std::vector<double> samples;
  samples.reserve(repeats);
  for (int i = 0; i < repeats; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    samples.push_back(elapsed_ms(t0));
  }
  std::sort(samples.begin(), samples.end());
  BenchVariant v;
  v.name = name;
  v.min_ms = samples.front();
  v.max_ms = samples.back();
  const size_t n = samples.size();
  v.median_ms = n % 2 == 1 ? samples[n / 2] : 0.5 * (samples[n / 2 - 1] + samples[n / 2]);
  return v;
}

}  // namespace

BenchCase bench_masked(const Tensor& weights, const LayerMask& mask, int64_t n, int repeats,
                       int workers, uint64_t seed) {
  if (repeats < 3) throw ConfigError("bench repeats must be >= 3");
  BenchCase result;
  result.m = weights.rows();
  result.k = weights.cols();
  result.n = n;
  result.block_m = mask.scheme.m;
  result.block_n = mask.scheme.n;
  result.repeats = repeats;
  result.workers = workers;
  result.actual_sparsity =
      1.0 - static_cast<double>(mask.surviving_elements()) / mask.total_elements();
  result.target_sparsity = result.actual_sparsity;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Tensor input({weights.cols(), n});
  for (int64_t j = 0; j < input.size(); ++j) input[j] = uni(rng);

  const Tensor masked = apply_mask(weights, mask);
  const CsrMatrix csr = csr_from_mask(masked, mask);
  const ReorderedModel model = reorder(masked, mask);
  const ExecutionPlan plan = make_plan(model, workers);

  // Cross-check once before timing.
  {
    Tensor a = csr_exec(csr, input, 1);
    Tensor b = sparse_exec(model, input, plan);
    for (int64_t j = 0; j < a.size(); ++j)
      if (std::fabs(a[j] - b[j]) > 1e-9)
        throw std::logic_error("bench: sparse executors disagree");
  }

  result.variants.push_back(
      time_variant("dense", repeats, [&] { dense_exec(weights, input, workers); }));
  result.variants.push_back(
      time_variant("naive_sparse", repeats, [&] { csr_exec(csr, input, workers); }));
  result.variants.push_back(
      time_variant("reordered", repeats, [&] { sparse_exec(model, input, plan); }));
  return result;
}

BenchCase bench_shape(int64_t m, int64_t k, int64_t n, int64_t block_m, int64_t block_n,
                      double sparsity, int repeats, int workers, uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Tensor weights({m, k});
  for (int64_t j = 0; j < weights.size(); ++j) weights[j] = uni(rng);

  const BlockScheme scheme = partition(m, k, block_m, block_n);
  const LayerMask mask = random_block_mask(scheme, sparsity, seed + 1);
  BenchCase result = bench_masked(weights, mask, n, repeats, workers, seed + 2);
  result.target_sparsity = sparsity;
  return result;
}

}  // namespace blkrew
