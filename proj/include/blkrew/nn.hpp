#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "blkrew/tensor.hpp"

namespace blkrew {

enum class LayerKind { FullyConnected, Conv2d, Relu, SoftmaxXent };

// dims by kind:
//   fully_connected: {in_features, out_features}
//   conv2d:          {in_channels, in_h, in_w, out_channels, kh, kw, stride, pad}
//   relu:            {}
//   softmax_xent:    {classes} (terminal, identity in forward)
struct LayerSpec {
  LayerKind kind = LayerKind::FullyConnected;
  std::vector<int64_t> dims;
  bool has_bias = true;
};

// Feed-forward network. Weights are stored in GEMM form: one 2-d matrix per
// parameterized layer, rows = output features/filters.
struct Network {
  std::vector<LayerSpec> layers;
  std::vector<Tensor> weights;                // per parameterized layer
  std::vector<std::vector<double>> biases;    // aligned with weights; empty when !has_bias
  std::vector<Tensor> masks;                  // empty, or 0/1 per weight tensor

  std::vector<int> param_of_layer;            // layer idx -> weight idx, -1 otherwise

  bool mask_active() const { return !masks.empty(); }
  int64_t num_params() const { return static_cast<int64_t>(weights.size()); }
  int64_t weight_count() const;               // total weight elements, biases excluded
  void set_masks(std::vector<Tensor> element_masks);  // also zeroes masked weights
  void clear_masks() { masks.clear(); }
};

// Validates dim chaining and initializes weights uniform in
// +-sqrt(6/(fan_in+fan_out)), biases zero. Deterministic per seed.
Network make_network(std::vector<LayerSpec> specs, uint64_t seed);

// fc(d0,d1) relu fc(d1,d2) relu ... fc(,dk) softmax_xent
Network make_mlp(const std::vector<int64_t>& dims, uint64_t seed);

struct Gradients {
  std::vector<Tensor> w;
  std::vector<std::vector<double>> b;
};

struct ForwardCache {
  std::vector<Tensor> layer_inputs;            // input of every layer
  std::vector<std::vector<Tensor>> conv_cols;  // per conv layer, per sample patch matrix
};

// Returns logits (batch x classes). batch is {B, features} or {B, C, H, W}.
Tensor forward(const Network& net, const Tensor& batch, ForwardCache* cache = nullptr);

// Mean softmax cross-entropy over the batch plus its gradients.
struct LossGrad {
  double loss = 0.0;
  Gradients grads;
};
LossGrad loss_and_grad(const Network& net, const Tensor& batch, const std::vector<int>& labels);

// W <- W - lr * (grads + reg_grads); biases take grads only. When a mask is
// active, masked gradients are dropped and masked weights stay exactly 0.
void sgd_step(Network& net, const Gradients& grads, const std::vector<Tensor>& reg_grads,
              double lr);

// Fraction of argmax-correct predictions; ties resolve to the lowest class.
double evaluate(const Network& net, const Tensor& features, const std::vector<int>& labels);

int argmax_class(const double* logits, int64_t classes);

struct TrainOptions {
  double lr = 0.1;
  int epochs = 100;
  int batch = 64;
  double momentum = 0.0;
  uint64_t seed = 1;
};

struct TrainState {
  int epoch = 0;
  double lr = 0.0;
  std::mt19937_64 rng;
};

struct Dataset;  // dataset.hpp

struct TrainResult {
  double final_loss = 0.0;
  int epochs_run = 0;
};

// Minibatch SGD on f(W) alone. Throws TrainingDiverged on non-finite loss.
TrainResult train_dense(Network& net, const Dataset& data, const TrainOptions& opts);

}  // namespace blkrew
