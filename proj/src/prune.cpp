#include "blkrew/prune.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>

namespace blkrew {

void PruneConfig::validate() const {
  if (T < 1) throw ConfigError("T must be >= 1");
  if (tau <= 0.0) throw ConfigError("tau must be > 0");
  if (epochs_per_iteration < 0 || retrain_epochs < 0)
    throw ConfigError("epoch counts must be >= 0");
  if (target_rate < 1.0) throw ConfigError("target_rate must be >= 1");
}

std::vector<BlockScheme> schemes_for(const Network& net, int64_t m, int64_t n,
                                     std::vector<bool>* clamped) {
  std::vector<std::pair<int64_t, int64_t>> blocks(net.weights.size(), {m, n});
  return schemes_for(net, blocks, clamped);
}

std::vector<BlockScheme> schemes_for(const Network& net,
                                     const std::vector<std::pair<int64_t, int64_t>>& blocks,
                                     std::vector<bool>* clamped) {
  if (blocks.size() != net.weights.size())
    throw ConfigError("need one block pair per parameterized layer");
  std::vector<BlockScheme> schemes;
  if (clamped) clamped->assign(net.weights.size(), false);
  for (size_t i = 0; i < net.weights.size(); ++i) {
    const int64_t rows = net.weights[i].rows(), cols = net.weights[i].cols();
    int64_t m = blocks[i].first, n = blocks[i].second;
    if (m < 1 || n < 1) throw ConfigError("block dims must be >= 1");
    if (m > rows) {
      m = rows;
      if (clamped) (*clamped)[i] = true;
    }
    if (n > cols) {
      n = cols;
      if (clamped) (*clamped)[i] = true;
    }
    schemes.push_back(partition(rows, cols, m, n));
  }
  return schemes;
}

namespace {

// One SGD epoch over seeded-shuffled minibatches; reg_fn (when given) is
// re-evaluated at the current weights every step.
double sgd_epoch(Network& net, const Dataset& data, const TrainOptions& opts,
                 std::mt19937_64& rng, std::vector<Tensor>* velocity,
                 std::vector<std::vector<double>>* bias_velocity,
                 const std::function<std::vector<Tensor>()>& reg_fn) {
  const int64_t n = data.features.shape()[0];
  const int64_t per = data.features.size() / n;
  std::vector<int64_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);

  double epoch_loss = 0.0;
  int64_t steps = 0;
  for (int64_t start = 0; start < n; start += opts.batch) {
    const int64_t cnt = std::min<int64_t>(opts.batch, n - start);
    std::vector<int64_t> shape = data.features.shape();
    shape[0] = cnt;
    Tensor xb(shape);
    std::vector<int> yb(cnt);
    for (int64_t b = 0; b < cnt; ++b) {
      const int64_t src = order[start + b];
      std::copy(data.features.data() + src * per, data.features.data() + (src + 1) * per,
                xb.data() + b * per);
      yb[b] = data.labels[src];
    }
    LossGrad lg = loss_and_grad(net, xb, yb);
    if (!std::isfinite(lg.loss)) throw TrainingDiverged("loss became non-finite");
    std::vector<Tensor> rg;
    if (reg_fn) rg = reg_fn();
    if (velocity) {
      for (size_t p = 0; p < net.weights.size(); ++p) {
        for (int64_t j = 0; j < (*velocity)[p].size(); ++j) {
          double g = lg.grads.w[p][j];
          if (!rg.empty()) g += rg[p][j];
          (*velocity)[p][j] = opts.momentum * (*velocity)[p][j] + g;
          lg.grads.w[p][j] = (*velocity)[p][j];
        }
        for (size_t o = 0; o < (*bias_velocity)[p].size(); ++o) {
          (*bias_velocity)[p][o] = opts.momentum * (*bias_velocity)[p][o] + lg.grads.b[p][o];
          lg.grads.b[p][o] = (*bias_velocity)[p][o];
        }
      }
      sgd_step(net, lg.grads, {}, opts.lr);
    } else {
      sgd_step(net, lg.grads, rg, opts.lr);
    }
    epoch_loss += lg.loss;
    ++steps;
  }
  return epoch_loss / std::max<int64_t>(1, steps);
}

}  // namespace

ReweightResult reweight_train(Network& net, const Dataset& data,
                              const std::vector<BlockScheme>& schemes, const RegConfig& regcfg,
                              const PruneConfig& prunecfg, const TrainOptions& opts) {
  regcfg.validate();
  prunecfg.validate();
  if (opts.lr <= 0.0) throw ConfigError("learning rate must be > 0");

  ReweightResult result;
  result.state = init_penalties(net, schemes, regcfg);

  std::mt19937_64 rng(opts.seed);
  std::vector<Tensor> velocity;
  std::vector<std::vector<double>> bias_velocity;
  if (opts.momentum != 0.0) {
    for (const auto& w : net.weights) velocity.emplace_back(w.shape());
    for (const auto& b : net.biases) bias_velocity.emplace_back(b.size(), 0.0);
  }
  auto* vel = opts.momentum != 0.0 ? &velocity : nullptr;
  auto* bvel = opts.momentum != 0.0 ? &bias_velocity : nullptr;

  for (int t = 0; t < prunecfg.T; ++t) {
    if (prunecfg.sequential_directions && regcfg.row_dir && regcfg.col_dir) {
      // Ablation mode: solve the row problem, then the column problem.
      RegConfig row_cfg = regcfg;
      row_cfg.col_dir = false;
      RegConfig col_cfg = regcfg;
      col_cfg.row_dir = false;
      const int half = prunecfg.epochs_per_iteration / 2;
      for (int e = 0; e < half; ++e) {
        sgd_epoch(net, data, opts, rng, vel, bvel,
                  [&] { return reg_grad(net, schemes, result.state, row_cfg); });
        ++result.epochs_run;
      }
      for (int e = half; e < prunecfg.epochs_per_iteration; ++e) {
        sgd_epoch(net, data, opts, rng, vel, bvel,
                  [&] { return reg_grad(net, schemes, result.state, col_cfg); });
        ++result.epochs_run;
      }
    } else {
      for (int e = 0; e < prunecfg.epochs_per_iteration; ++e) {
        sgd_epoch(net, data, opts, rng, vel, bvel,
                  [&] { return reg_grad(net, schemes, result.state, regcfg); });
        ++result.epochs_run;
      }
    }
    if (regcfg.mode == RegMode::Reweighted)
      update_penalties(result.state, net, schemes, regcfg);
    result.history.push_back(result.state);
  }
  return result;
}

namespace {

struct GroupKey {
  double norm;
  int32_t layer;
  int dir;  // 0 = row, 1 = column
  int64_t block;
  int64_t index;
  bool operator<(const GroupKey& o) const {
    if (norm != o.norm) return norm < o.norm;
    if (layer != o.layer) return layer < o.layer;
    if (dir != o.dir) return dir < o.dir;
    if (block != o.block) return block < o.block;
    return index < o.index;
  }
};

// Best-norm group of one direction, optionally restricted to alive groups or
// to a single block.
const GroupRef* best_group(const std::vector<GroupRef>& groups, const Tensor& weights,
                           const LayerMask* alive_in, int64_t block = -1) {
  const GroupRef* best = nullptr;
  double best_norm = -1.0;
  for (const auto& g : groups) {
    if (block >= 0 && g.block != block) continue;
    if (alive_in && !alive_in->group_alive(g)) continue;
    const double nrm = group_norm(weights, g);
    if (nrm > best_norm) {
      best_norm = nrm;
      best = &g;
    }
  }
  return best;
}

// The layer lost every element: revive the best row group and the best
// column group of that same block so at least one element survives.
void rescue_layer(LayerMask& mask, const Tensor& weights, const BlockScheme& scheme) {
  const auto rows = enumerate_groups(scheme, Direction::Row);
  const GroupRef* row = best_group(rows, weights, nullptr);
  mask.set_group(*row, true);
  const auto cols = enumerate_groups(scheme, Direction::Column);
  mask.set_group(*best_group(cols, weights, nullptr, row->block), true);
}

}  // namespace

SparseMask prune_threshold(Network& net, const std::vector<BlockScheme>& schemes,
                           const PruneConfig& cfg, std::vector<bool>* floor_applied) {
  cfg.validate();
  if (schemes.size() != net.weights.size())
    throw ShapeError("one block scheme per parameterized layer required");
  if (floor_applied) floor_applied->assign(net.weights.size(), false);

  SparseMask mask;
  for (size_t li = 0; li < net.weights.size(); ++li) {
    LayerMask lm = LayerMask::all_alive(schemes[li]);
    bool row_floored = false, col_floored = false;
    for (Direction dir : {Direction::Row, Direction::Column}) {
      if (dir == Direction::Row && !cfg.row_dir) continue;
      if (dir == Direction::Column && !cfg.col_dir) continue;
      const auto groups = enumerate_groups(schemes[li], dir);
      std::vector<double> norms(groups.size());
      double max_norm = 0.0;
      for (size_t gi = 0; gi < groups.size(); ++gi) {
        norms[gi] = group_norm(net.weights[li], groups[gi]);
        max_norm = std::max(max_norm, norms[gi]);
      }
      const double cut = cfg.threshold_mode == ThresholdMode::Relative ? cfg.tau * max_norm
                                                                       : cfg.tau;
      size_t killed = 0;
      for (size_t gi = 0; gi < groups.size(); ++gi) {
        if (norms[gi] < cut) {
          lm.set_group(groups[gi], false);
          ++killed;
        }
      }
      if (killed == groups.size()) {
        if (!cfg.layer_floor)
          throw ConfigError("threshold kills every group of layer " + std::to_string(li));
        // Keep the top-norm group of this direction.
        size_t best = 0;
        for (size_t gi = 1; gi < groups.size(); ++gi)
          if (norms[gi] > norms[best]) best = gi;
        lm.set_group(groups[best], true);
        (dir == Direction::Row ? row_floored : col_floored) = true;
        if (floor_applied) (*floor_applied)[li] = true;
      }
    }
    if (lm.surviving_elements() == 0) {
      if (!cfg.layer_floor)
        throw ConfigError("threshold kills every element of layer " + std::to_string(li));
      // Row and column survivors landed in different blocks. When one side
      // was a floor pick, move it into the other side's block; this keeps
      // exactly one group per floored direction.
      const Tensor& w = net.weights[li];
      const auto rows = enumerate_groups(schemes[li], Direction::Row);
      const auto cols = enumerate_groups(schemes[li], Direction::Column);
      if (col_floored) {
        const GroupRef* old_pick = best_group(cols, w, &lm);
        const GroupRef* row = best_group(rows, w, &lm);
        lm.set_group(*old_pick, false);
        lm.set_group(*best_group(cols, w, nullptr, row->block), true);
      } else if (row_floored) {
        const GroupRef* old_pick = best_group(rows, w, &lm);
        const GroupRef* col = best_group(cols, w, &lm);
        lm.set_group(*old_pick, false);
        lm.set_group(*best_group(rows, w, nullptr, col->block), true);
      } else {
        rescue_layer(lm, net.weights[li], schemes[li]);
      }
      if (floor_applied) (*floor_applied)[li] = true;
    }
    net.weights[li] = apply_mask(net.weights[li], lm);
    mask.layers.push_back(std::move(lm));
  }
  return mask;
}

int retrain(Network& net, const Dataset& data, const SparseMask& mask, int epochs,
            const TrainOptions& opts) {
  net.set_masks(element_masks(mask));
  std::mt19937_64 rng(opts.seed);
  std::vector<Tensor> velocity;
  std::vector<std::vector<double>> bias_velocity;
  if (opts.momentum != 0.0) {
    for (const auto& w : net.weights) velocity.emplace_back(w.shape());
    for (const auto& b : net.biases) bias_velocity.emplace_back(b.size(), 0.0);
  }
  auto* vel = opts.momentum != 0.0 ? &velocity : nullptr;
  auto* bvel = opts.momentum != 0.0 ? &bias_velocity : nullptr;
  int run = 0;
  for (int e = 0; e < epochs; ++e) {
    sgd_epoch(net, data, opts, rng, vel, bvel, nullptr);
    ++run;
    for (size_t p = 0; p < net.weights.size(); ++p)
      for (int64_t j = 0; j < net.weights[p].size(); ++j)
        if (net.masks[p][j] == 0.0 && net.weights[p][j] != 0.0)
          throw std::logic_error("masked weight drifted from zero during retrain");
  }
  return run;
}

SparseMask magnitude_baseline(const Network& net, const std::vector<BlockScheme>& schemes,
                              double target_rate, bool row_dir, bool col_dir) {
  if (target_rate < 1.0) throw ConfigError("target_rate must be >= 1");
  if (schemes.size() != net.weights.size())
    throw ShapeError("one block scheme per parameterized layer required");

  SparseMask mask;
  for (size_t li = 0; li < net.weights.size(); ++li)
    mask.layers.push_back(LayerMask::all_alive(schemes[li]));

  struct Entry {
    GroupKey key;
    GroupRef ref;
  };
  std::vector<Entry> entries;
  for (size_t li = 0; li < net.weights.size(); ++li) {
    for (Direction dir : {Direction::Row, Direction::Column}) {
      if (dir == Direction::Row && !row_dir) continue;
      if (dir == Direction::Column && !col_dir) continue;
      for (const auto& g : enumerate_groups(schemes[li], dir)) {
        Entry e;
        e.ref = g;
        e.ref.layer = static_cast<int32_t>(li);
        e.key = {group_norm(net.weights[li], g), static_cast<int32_t>(li),
                 dir == Direction::Row ? 0 : 1, g.block, g.index};
        entries.push_back(e);
      }
    }
  }
  std::sort(entries.begin(), entries.end(),
            [](const Entry& a, const Entry& b) { return a.key < b.key; });

  // Per-block live counts so each kill updates the surviving total in O(1).
  const int64_t total = mask.total_elements();
  int64_t surviving = total;
  std::vector<std::vector<int64_t>> live_rows(mask.layers.size()),
      live_cols(mask.layers.size());
  std::vector<std::array<int64_t, 2>> live_dir(mask.layers.size());
  for (size_t li = 0; li < mask.layers.size(); ++li) {
    const auto& sch = schemes[li];
    live_rows[li].resize(sch.block_count());
    live_cols[li].resize(sch.block_count());
    for (int64_t b = 0; b < sch.block_count(); ++b) {
      live_rows[li][b] = sch.row_end(b) - sch.row_begin(b);
      live_cols[li][b] = sch.col_end(b) - sch.col_begin(b);
    }
    live_dir[li][0] = static_cast<int64_t>(enumerate_groups(sch, Direction::Row).size());
    live_dir[li][1] = static_cast<int64_t>(enumerate_groups(sch, Direction::Column).size());
  }

  for (const auto& e : entries) {
    if (surviving > 0 && static_cast<double>(total) / surviving >= target_rate) break;
    const int li = e.ref.layer;
    const int d = e.ref.dir == Direction::Row ? 0 : 1;
    if (live_dir[li][d] <= 1) continue;  // layer floor
    if (e.ref.dir == Direction::Row) {
      surviving -= live_cols[li][e.ref.block];
      --live_rows[li][e.ref.block];
    } else {
      surviving -= live_rows[li][e.ref.block];
      --live_cols[li][e.ref.block];
    }
    --live_dir[li][d];
    mask.layers[li].set_group(e.ref, false);
  }
  if (surviving == 0 || static_cast<double>(total) / surviving < target_rate)
    throw ConfigError("magnitude baseline cannot reach target rate " +
                      std::to_string(target_rate));
  return mask;
}

CriticalWeightReport critical_weight_report(const SparseMask& mask, const Network& reference) {
  if (mask.layers.size() != reference.weights.size())
    throw ShapeError("mask layer count does not match reference network");
  CriticalWeightReport report;
  report.bin_edges.push_back(0.0);
  for (int k = 0; k <= 40; ++k)
    report.bin_edges.push_back(std::pow(10.0, -8.0 + 0.25 * k));  // 1e-8 .. 1e2
  report.full_counts.assign(report.bin_edges.size(), 0);
  report.surviving_counts.assign(report.bin_edges.size(), 0);

  auto bin_of = [&](double mag) {
    size_t b = 0;
    while (b + 1 < report.bin_edges.size() && mag >= report.bin_edges[b + 1]) ++b;
    return b;
  };

  std::vector<double> magnitudes;
  for (size_t li = 0; li < reference.weights.size(); ++li) {
    const Tensor& w = reference.weights[li];
    const LayerMask& lm = mask.layers[li];
    if (w.rows() != lm.scheme.layer_rows || w.cols() != lm.scheme.layer_cols)
      throw ShapeError("mask shape does not match reference layer " + std::to_string(li));
    for (int64_t r = 0; r < w.rows(); ++r) {
      for (int64_t c = 0; c < w.cols(); ++c) {
        const double mag = std::fabs(w.at(r, c));
        magnitudes.push_back(mag);
        const size_t b = bin_of(mag);
        ++report.full_counts[b];
        if (lm.element_alive(r, c)) {
          ++report.surviving_counts[b];
          ++report.surviving_total;
        }
      }
    }
  }
  std::sort(magnitudes.begin(), magnitudes.end());
  const size_t n = magnitudes.size();
  report.reference_median =
      n % 2 == 1 ? magnitudes[n / 2] : 0.5 * (magnitudes[n / 2 - 1] + magnitudes[n / 2]);

  for (size_t li = 0; li < reference.weights.size(); ++li) {
    const Tensor& w = reference.weights[li];
    const LayerMask& lm = mask.layers[li];
    for (int64_t r = 0; r < w.rows(); ++r)
      for (int64_t c = 0; c < w.cols(); ++c)
        if (lm.element_alive(r, c) && std::fabs(w.at(r, c)) < report.reference_median)
          ++report.surviving_below_median;
  }
  return report;
}

std::vector<Tensor> element_masks(const SparseMask& mask) {
  std::vector<Tensor> out;
  out.reserve(mask.layers.size());
  for (const auto& lm : mask.layers) out.push_back(lm.element_matrix());
  return out;
}

double compression_rate(const SparseMask& mask) {
  const int64_t surviving = mask.surviving_elements();
  if (surviving == 0) return std::numeric_limits<double>::infinity();
  return static_cast<double>(mask.total_elements()) / static_cast<double>(surviving);
}

namespace {

std::vector<LayerPruneStats> layer_stats(const SparseMask& mask,
                                         const std::vector<bool>& clamped,
                                         const std::vector<bool>& floor_applied) {
  std::vector<LayerPruneStats> out;
  for (size_t li = 0; li < mask.layers.size(); ++li) {
    const auto& lm = mask.layers[li];
    LayerPruneStats st;
    st.rows = lm.scheme.layer_rows;
    st.cols = lm.scheme.layer_cols;
    st.block_m = lm.scheme.m;
    st.block_n = lm.scheme.n;
    st.clamped = li < clamped.size() && clamped[li];
    st.floor_applied = li < floor_applied.size() && floor_applied[li];
    st.total = lm.total_elements();
    st.surviving = lm.surviving_elements();
    st.block_survival_hist.assign(11, 0);
    for (int64_t b = 0; b < lm.scheme.block_count(); ++b) {
      const int64_t bh = lm.scheme.row_end(b) - lm.scheme.row_begin(b);
      const int64_t bw = lm.scheme.col_end(b) - lm.scheme.col_begin(b);
      int64_t rows_live = 0, cols_live = 0;
      for (int64_t p = 0; p < bh; ++p) rows_live += lm.row_alive(b, p);
      for (int64_t q = 0; q < bw; ++q) cols_live += lm.col_alive(b, q);
      const double frac =
          static_cast<double>(rows_live * cols_live) / static_cast<double>(bh * bw);
      ++st.block_survival_hist[std::min<int64_t>(10, static_cast<int64_t>(frac * 10.0))];
      st.row_groups += bh;
      st.col_groups += bw;
      st.row_groups_killed += bh - rows_live;
      st.col_groups_killed += bw - cols_live;
    }
    out.push_back(std::move(st));
  }
  return out;
}

}  // namespace

PipelineResult run_pipeline(Network net, const Dataset& data,
                            const std::vector<BlockScheme>& schemes,
                            const PipelineOptions& opts, const Network* pretrained_reference) {
  PipelineOptions cfg = opts;
  cfg.reg.validate();
  cfg.prune.validate();
  cfg.prune.row_dir = cfg.reg.row_dir;
  cfg.prune.col_dir = cfg.reg.col_dir;

  PipelineResult result;
  PruneReport& report = result.report;

  net.clear_masks();
  if (cfg.pretrain_epochs > 0) {
    TrainOptions pre = cfg.train;
    pre.epochs = cfg.pretrain_epochs;
    train_dense(net, data, pre);
    report.pretrain_epochs = cfg.pretrain_epochs;
  }
  const Network reference = pretrained_reference ? *pretrained_reference : net;
  report.base_accuracy = evaluate(net, data.features, data.labels);

  std::vector<bool> floor_applied;
  if (cfg.prune.baseline == BaselineKind::Magnitude) {
    result.mask = magnitude_baseline(net, schemes, cfg.prune.target_rate, cfg.prune.row_dir,
                                     cfg.prune.col_dir);
    for (size_t li = 0; li < net.weights.size(); ++li)
      net.weights[li] = apply_mask(net.weights[li], result.mask.layers[li]);
    report.reg_accuracy = report.base_accuracy;
  } else {
    RegConfig regcfg = cfg.reg;
    if (cfg.prune.baseline == BaselineKind::StaticLasso) regcfg.mode = RegMode::StaticLasso;
    TrainOptions rew = cfg.train;
    rew.seed = cfg.train.seed + 1000003;
    ReweightResult rr = reweight_train(net, data, schemes, regcfg, cfg.prune, rew);
    result.penalties = rr.state;
    report.reweight_epochs = rr.epochs_run;
    report.reg_accuracy = evaluate(net, data.features, data.labels);
    result.mask = prune_threshold(net, schemes, cfg.prune, &floor_applied);
  }

  TrainOptions ret = cfg.train;
  ret.seed = cfg.train.seed + 2000003;
  report.retrain_epochs = retrain(net, data, result.mask, cfg.prune.retrain_epochs, ret);

  report.pruned_accuracy = evaluate(net, data.features, data.labels);
  report.total_weights = result.mask.total_elements();
  report.surviving_weights = result.mask.surviving_elements();
  report.compression_rate = compression_rate(result.mask);
  report.layers = layer_stats(result.mask, cfg.clamped_schemes, floor_applied);
  report.critical = critical_weight_report(result.mask, reference);

  result.net = std::move(net);
  return result;
}

}  // namespace blkrew
