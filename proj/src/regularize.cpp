#include "blkrew/regularize.hpp"

#include <cmath>
#include <string>

namespace blkrew {

namespace {
constexpr double kKinkNorm = 1e-12;
}

void RegConfig::validate() const {
  if (lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (epsilon_scale <= 0.0) throw ConfigError("epsilon_scale must be > 0");
  if (epsilon_override && *epsilon_override <= 0.0)
    throw ConfigError("epsilon override must be > 0");
  if (!row_dir && !col_dir) throw ConfigError("at least one direction must be enabled");
}

double penalty_from_sq_norm(double sq_norm, double eps) {
  return 1.0 / (sq_norm + eps);
}

namespace {

DirPenalties init_direction(const Tensor& weights, const BlockScheme& scheme, Direction dir,
                            const RegConfig& cfg) {
  DirPenalties out;
  const auto groups = enumerate_groups(scheme, dir);
  double mean_sq = 0.0;
  std::vector<double> sq;
  sq.reserve(groups.size());
  for (const auto& g : groups) {
    sq.push_back(group_sq_norm(weights, g));
    mean_sq += sq.back();
  }
  mean_sq /= groups.empty() ? 1.0 : static_cast<double>(groups.size());
  out.eps = cfg.epsilon_override ? *cfg.epsilon_override : cfg.epsilon_scale * mean_sq;
  if (out.eps <= 0.0) out.eps = cfg.epsilon_scale;  // zero pretrained weights
  out.p.reserve(sq.size());
  for (double s : sq) out.p.push_back(penalty_from_sq_norm(s, out.eps));
  return out;
}

void check_schemes(const Network& net, const std::vector<BlockScheme>& schemes) {
  if (schemes.size() != net.weights.size())
    throw ShapeError("one block scheme per parameterized layer required");
  for (size_t i = 0; i < schemes.size(); ++i)
    if (schemes[i].layer_rows != net.weights[i].rows() ||
        schemes[i].layer_cols != net.weights[i].cols())
      throw ShapeError("block scheme dims mismatch at layer " + std::to_string(i));
}

}  // namespace

PenaltyState init_penalties(const Network& net, const std::vector<BlockScheme>& schemes,
                            const RegConfig& cfg) {
  cfg.validate();
  check_schemes(net, schemes);
  PenaltyState state;
  state.layers.resize(net.weights.size());
  for (size_t i = 0; i < net.weights.size(); ++i) {
    if (cfg.row_dir)
      state.layers[i].row = init_direction(net.weights[i], schemes[i], Direction::Row, cfg);
    if (cfg.col_dir)
      state.layers[i].col = init_direction(net.weights[i], schemes[i], Direction::Column, cfg);
  }
  state.iteration = 0;
  return state;
}

namespace {

double direction_loss(const Tensor& weights, const BlockScheme& scheme, Direction dir,
                      const DirPenalties& pen, bool reweighted) {
  const auto groups = enumerate_groups(scheme, dir);
  if (reweighted && pen.p.size() != groups.size())
    throw ShapeError("penalty entries do not cover all groups");
  double s = 0.0;
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const double p = reweighted ? pen.p[gi] : 1.0;
    s += p * group_norm(weights, groups[gi]);
  }
  return s;
}

void direction_grad(Tensor& grad, const Tensor& weights, const BlockScheme& scheme,
                    Direction dir, const DirPenalties& pen, bool reweighted, double lambda) {
  const auto groups = enumerate_groups(scheme, dir);
  if (reweighted && pen.p.size() != groups.size())
    throw ShapeError("penalty entries do not cover all groups");
  for (size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const double norm = group_norm(weights, g);
    if (norm < kKinkNorm) continue;
    const double coef = lambda * (reweighted ? pen.p[gi] : 1.0) / norm;
    if (g.dir == Direction::Row) {
      const double* wr = weights.data() + g.fixed * weights.cols();
      double* gr = grad.data() + g.fixed * grad.cols();
      for (int64_t c = g.span_begin; c < g.span_end; ++c) gr[c] += coef * wr[c];
    } else {
      for (int64_t r = g.span_begin; r < g.span_end; ++r)
        grad.at(r, g.fixed) += coef * weights.at(r, g.fixed);
    }
  }
}

}  // namespace

double reg_loss(const Network& net, const std::vector<BlockScheme>& schemes,
                const PenaltyState& state, const RegConfig& cfg) {
  cfg.validate();
  check_schemes(net, schemes);
  const bool rew = cfg.mode == RegMode::Reweighted;
  double total = 0.0;
  for (size_t i = 0; i < net.weights.size(); ++i) {
    if (cfg.row_dir)
      total += direction_loss(net.weights[i], schemes[i], Direction::Row,
                              state.layers[i].row, rew);
    if (cfg.col_dir)
      total += direction_loss(net.weights[i], schemes[i], Direction::Column,
                              state.layers[i].col, rew);
  }
  return cfg.lambda * total;
}

std::vector<Tensor> reg_grad(const Network& net, const std::vector<BlockScheme>& schemes,
                             const PenaltyState& state, const RegConfig& cfg) {
  cfg.validate();
  check_schemes(net, schemes);
  const bool rew = cfg.mode == RegMode::Reweighted;
  std::vector<Tensor> grads;
  grads.reserve(net.weights.size());
  for (size_t i = 0; i < net.weights.size(); ++i) {
    Tensor g(net.weights[i].shape());
    if (cfg.row_dir)
      direction_grad(g, net.weights[i], schemes[i], Direction::Row, state.layers[i].row, rew,
                     cfg.lambda);
    if (cfg.col_dir)
      direction_grad(g, net.weights[i], schemes[i], Direction::Column, state.layers[i].col,
                     rew, cfg.lambda);
    grads.push_back(std::move(g));
  }
  return grads;
}

void update_penalties(PenaltyState& state, const Network& net,
                      const std::vector<BlockScheme>& schemes, const RegConfig& cfg) {
  cfg.validate();
  check_schemes(net, schemes);
  if (state.layers.size() != net.weights.size())
    throw ShapeError("penalty state layer count mismatch");
  for (size_t i = 0; i < net.weights.size(); ++i) {
    if (cfg.row_dir) {
      auto& dp = state.layers[i].row;
      const auto groups = enumerate_groups(schemes[i], Direction::Row);
      for (size_t gi = 0; gi < groups.size(); ++gi)
        dp.p[gi] = penalty_from_sq_norm(group_sq_norm(net.weights[i], groups[gi]), dp.eps);
    }
    if (cfg.col_dir) {
      auto& dp = state.layers[i].col;
      const auto groups = enumerate_groups(schemes[i], Direction::Column);
      for (size_t gi = 0; gi < groups.size(); ++gi)
        dp.p[gi] = penalty_from_sq_norm(group_sq_norm(net.weights[i], groups[gi]), dp.eps);
    }
  }
  ++state.iteration;
}

}  // namespace blkrew
