#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blkrew/dataset.hpp"
#include "blkrew/regularize.hpp"

namespace blkrew {

enum class ThresholdMode { Relative, Absolute };
enum class BaselineKind { None, StaticLasso, Magnitude };

struct PruneConfig {
  int T = 4;                      // outer reweight iterations
  int epochs_per_iteration = 25;  // SGD epochs per outer iteration
  int retrain_epochs = 100;
  ThresholdMode threshold_mode = ThresholdMode::Relative;
  double tau = 0.05;              // relative: fraction of layer max group norm
  BaselineKind baseline = BaselineKind::None;
  double target_rate = 8.0;       // magnitude baseline only
  bool sequential_directions = false;  // row phase then column phase per iteration
  bool layer_floor = true;        // keep >= 1 group per direction per layer
  bool row_dir = true;            // which directions threshold-prune; the
  bool col_dir = true;            // pipeline syncs these with RegConfig

  void validate() const;
};

struct LayerPruneStats {
  int64_t rows = 0, cols = 0;
  int64_t block_m = 0, block_n = 0;
  bool clamped = false;  // block scheme clamped to fit a small layer
  int64_t total = 0, surviving = 0;
  int64_t row_groups = 0, row_groups_killed = 0;
  int64_t col_groups = 0, col_groups_killed = 0;
  bool floor_applied = false;
  std::vector<int64_t> block_survival_hist;  // 11 bins over per-block survival fraction
};

struct CriticalWeightReport {
  std::vector<double> bin_edges;        // log-scale magnitude bins
  std::vector<int64_t> full_counts;     // all positions of the reference net
  std::vector<int64_t> surviving_counts;
  double reference_median = 0.0;        // median |w| of the reference net
  int64_t surviving_total = 0;
  int64_t surviving_below_median = 0;
};

struct PruneReport {
  double base_accuracy = 0.0;      // pretrained dense net
  double reg_accuracy = 0.0;       // after reweighted/static training
  double pruned_accuracy = 0.0;    // after threshold + retrain
  double compression_rate = 1.0;   // total weights / surviving weights
  int64_t total_weights = 0;
  int64_t surviving_weights = 0;
  int pretrain_epochs = 0;
  int reweight_epochs = 0;
  int retrain_epochs = 0;
  std::vector<LayerPruneStats> layers;
  CriticalWeightReport critical;
};

// Clamp the configured block to each layer's dims (layers smaller than the
// block get the whole-matrix scheme); clamps are flagged in the stats.
std::vector<BlockScheme> schemes_for(const Network& net, int64_t m, int64_t n,
                                     std::vector<bool>* clamped = nullptr);
std::vector<BlockScheme> schemes_for(const Network& net,
                                     const std::vector<std::pair<int64_t, int64_t>>& blocks,
                                     std::vector<bool>* clamped = nullptr);

// T outer iterations of SGD on f(W) + reg, each followed by a penalty update
// (reweighted mode only). Returns the per-iteration penalty history.
struct ReweightResult {
  PenaltyState state;
  std::vector<PenaltyState> history;
  int epochs_run = 0;
};
ReweightResult reweight_train(Network& net, const Dataset& data,
                              const std::vector<BlockScheme>& schemes, const RegConfig& regcfg,
                              const PruneConfig& prunecfg, const TrainOptions& opts);

// Kill groups with norm below the threshold; relative mode compares against
// tau * max group norm of the layer+direction. Weights under the mask are
// zeroed in place. With layer_floor, a layer that would die keeps its best
// row group and the best column group of the same block; without it, a fully
// killed layer is an error.
SparseMask prune_threshold(Network& net, const std::vector<BlockScheme>& schemes,
                           const PruneConfig& cfg, std::vector<bool>* floor_applied = nullptr);

// SGD on f(W) only; gradients are dropped on masked entries and masked
// weights stay exactly zero throughout.
int retrain(Network& net, const Dataset& data, const SparseMask& mask, int epochs,
            const TrainOptions& opts);

// Kill the globally smallest-norm groups until compression >= target_rate,
// skipping a group when it is the last survivor of its layer+direction.
SparseMask magnitude_baseline(const Network& net, const std::vector<BlockScheme>& schemes,
                              double target_rate, bool row_dir = true, bool col_dir = true);

CriticalWeightReport critical_weight_report(const SparseMask& mask, const Network& reference);

std::vector<Tensor> element_masks(const SparseMask& mask);
double compression_rate(const SparseMask& mask);

// Pretrain (optional) + reweight + threshold + retrain, producing the report.
struct PipelineOptions {
  TrainOptions train;        // lr/batch/momentum/seed shared by all phases
  int pretrain_epochs = 0;   // 0 = caller supplies a pretrained net
  RegConfig reg;
  PruneConfig prune;
  std::vector<bool> clamped_schemes;  // from schemes_for, recorded in the report
};

struct PipelineResult {
  Network net;
  SparseMask mask;
  PenaltyState penalties;
  PruneReport report;
};

PipelineResult run_pipeline(Network net, const Dataset& data,
                            const std::vector<BlockScheme>& schemes, const PipelineOptions& opts,
                            const Network* pretrained_reference = nullptr);

}  // namespace blkrew
