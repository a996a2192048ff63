#pragma once

#include <optional>
#include <vector>

#include "blkrew/blocks.hpp"
#include "blkrew/nn.hpp"

namespace blkrew {

enum class RegMode { StaticLasso, Reweighted };

struct RegConfig {
  double lambda = 0.0;           // one penalty coefficient for the whole network
  double epsilon_scale = 1e-3;   // eps = scale * mean initial group sq-norm, per layer+direction
  bool row_dir = true;
  bool col_dir = true;
  RegMode mode = RegMode::Reweighted;
  std::optional<double> epsilon_override;  // absolute eps, for tests/diagnostics

  void validate() const;
};

// Penalty weights for one direction of one layer, aligned with the order of
// enumerate_groups(scheme, dir). eps is frozen at init time.
struct DirPenalties {
  std::vector<double> p;
  double eps = 0.0;
};

struct LayerPenalties {
  DirPenalties row;
  DirPenalties col;
};

struct PenaltyState {
  std::vector<LayerPenalties> layers;
  int iteration = 0;

  const DirPenalties& dir(int layer, Direction d) const {
    return d == Direction::Row ? layers[layer].row : layers[layer].col;
  }
};

double penalty_from_sq_norm(double sq_norm, double eps);

// P(g) = 1 / (||g||^2 + eps) evaluated on the pretrained weights; t = 0.
PenaltyState init_penalties(const Network& net, const std::vector<BlockScheme>& schemes,
                            const RegConfig& cfg);

// lambda * sum over enabled directions, layers, groups of P(g) * ||g||.
// Static mode uses P == 1.
double reg_loss(const Network& net, const std::vector<BlockScheme>& schemes,
                const PenaltyState& state, const RegConfig& cfg);

// d/dw of P * ||g|| is P * w / ||g|| for w in g; groups with norm below 1e-12
// contribute zero (subgradient choice at the kink). Row and column terms add.
std::vector<Tensor> reg_grad(const Network& net, const std::vector<BlockScheme>& schemes,
                             const PenaltyState& state, const RegConfig& cfg);

// Recompute every penalty from the current weights; increments t.
void update_penalties(PenaltyState& state, const Network& net,
                      const std::vector<BlockScheme>& schemes, const RegConfig& cfg);

}  // namespace blkrew
