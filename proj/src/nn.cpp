#include "blkrew/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "blkrew/dataset.hpp"

namespace blkrew {

namespace {

ConvSpec conv_spec_of(const LayerSpec& spec) {
  const auto& d = spec.dims;
  return ConvSpec{d[0], d[3], d[4], d[5], d[6], d[7]};
}

// Per-sample element count a layer consumes / produces. Conv shapes carry
// their spatial dims in the spec, so chaining is checkable up front.
int64_t layer_in_size(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::FullyConnected: return spec.dims[0];
    case LayerKind::Conv2d: return spec.dims[0] * spec.dims[1] * spec.dims[2];
    case LayerKind::Relu: return -1;  // any
    case LayerKind::SoftmaxXent: return spec.dims[0];
  }
  return -1;
}

int64_t layer_out_size(const LayerSpec& spec) {
  switch (spec.kind) {
    case LayerKind::FullyConnected: return spec.dims[1];
    case LayerKind::Conv2d: {
      ConvSpec cs = conv_spec_of(spec);
      return cs.out_channels * cs.out_h(spec.dims[1]) * cs.out_w(spec.dims[2]);
    }
    case LayerKind::Relu: return -1;  // same as input
    case LayerKind::SoftmaxXent: return spec.dims[0];
  }
  return -1;
}

bool is_parameterized(LayerKind kind) {
  return kind == LayerKind::FullyConnected || kind == LayerKind::Conv2d;
}

}  // namespace

int64_t Network::weight_count() const {
  int64_t n = 0;
  for (const auto& w : weights) n += w.size();
  return n;
}

void Network::set_masks(std::vector<Tensor> element_masks) {
  if (element_masks.size() != weights.size())
    throw ShapeError("set_masks: one mask per parameterized layer required");
  for (size_t i = 0; i < weights.size(); ++i) {
    if (!element_masks[i].same_shape(weights[i]))
      throw ShapeError("set_masks: mask shape mismatch at layer " + std::to_string(i));
    for (int64_t j = 0; j < weights[i].size(); ++j)
      if (element_masks[i][j] == 0.0) weights[i][j] = 0.0;
  }
  masks = std::move(element_masks);
}

Network make_network(std::vector<LayerSpec> specs, uint64_t seed) {
  if (specs.empty()) throw ConfigError("network needs at least one layer");
  Network net;
  net.layers = std::move(specs);
  net.param_of_layer.assign(net.layers.size(), -1);

  std::mt19937_64 rng(seed);
  int64_t flow = -1;  // per-sample element count flowing between layers
  for (size_t li = 0; li < net.layers.size(); ++li) {
    const LayerSpec& spec = net.layers[li];
    const int64_t in = layer_in_size(spec);
    if (in >= 0 && flow >= 0 && in != flow)
      throw ConfigError("layer " + std::to_string(li) + " expects input size " +
                        std::to_string(in) + " but previous layer produces " +
                        std::to_string(flow));
    if (spec.kind == LayerKind::SoftmaxXent && li + 1 != net.layers.size())
      throw ConfigError("softmax_xent must be the terminal layer");

    if (is_parameterized(spec.kind)) {
      int64_t rows, cols;
      if (spec.kind == LayerKind::FullyConnected) {
        rows = spec.dims[1];
        cols = spec.dims[0];
      } else {
        ConvSpec cs = conv_spec_of(spec);
        rows = cs.out_channels;
        cols = cs.patch_size();
      }
      Tensor w({rows, cols});
      const double bound = std::sqrt(6.0 / static_cast<double>(rows + cols));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (int64_t j = 0; j < w.size(); ++j) w[j] = dist(rng);
      net.param_of_layer[li] = static_cast<int>(net.weights.size());
      net.weights.push_back(std::move(w));
      net.biases.emplace_back(spec.has_bias ? rows : 0, 0.0);
    }
    const int64_t out = layer_out_size(spec);
    if (out >= 0) flow = out;
  }
  if (net.weights.empty()) throw ConfigError("network has no parameterized layer");
  return net;
}

Network make_mlp(const std::vector<int64_t>& dims, uint64_t seed) {
  if (dims.size() < 2) throw ConfigError("mlp needs at least input and output dims");
  std::vector<LayerSpec> specs;
  for (size_t i = 0; i + 1 < dims.size(); ++i) {
    specs.push_back({LayerKind::FullyConnected, {dims[i], dims[i + 1]}, true});
    if (i + 2 < dims.size()) specs.push_back({LayerKind::Relu, {}, false});
  }
  specs.push_back({LayerKind::SoftmaxXent, {dims.back()}, false});
  return make_network(std::move(specs), seed);
}

namespace {

// y[b][o] = sum_i x[b][i] * W[o][i] + bias[o], i ascending.
Tensor fc_forward(const Tensor& x, const Tensor& w, const std::vector<double>& bias) {
  const int64_t bsz = x.rows(), in = x.cols(), out = w.rows();
  if (in != w.cols()) throw ShapeError("fc: input width does not match weights");
  Tensor y({bsz, out});
  for (int64_t b = 0; b < bsz; ++b) {
    const double* xr = x.data() + b * in;
    double* yr = y.data() + b * out;
    for (int64_t o = 0; o < out; ++o) {
      const double* wr = w.data() + o * in;
      double acc = 0.0;
      for (int64_t i = 0; i < in; ++i) acc += xr[i] * wr[i];
      yr[o] = acc + (bias.empty() ? 0.0 : bias[o]);
    }
  }
  return y;
}

Tensor as_batch_matrix(const Tensor& t, int64_t expected) {
  if (t.ndim() < 2) throw ShapeError("batch tensor must have a leading batch dim");
  const int64_t bsz = t.shape()[0];
  const int64_t per = t.size() / (bsz == 0 ? 1 : bsz);
  if (expected >= 0 && per != expected)
    throw ShapeError("batch sample size " + std::to_string(per) + ", expected " +
                     std::to_string(expected));
  return t.reshaped({bsz, per});
}

}  // namespace

Tensor forward(const Network& net, const Tensor& batch, ForwardCache* cache) {
  Tensor act = batch;
  if (cache) {
    cache->layer_inputs.clear();
    cache->conv_cols.clear();
  }
  for (size_t li = 0; li < net.layers.size(); ++li) {
    const LayerSpec& spec = net.layers[li];
    if (cache) cache->layer_inputs.push_back(act);
    switch (spec.kind) {
      case LayerKind::FullyConnected: {
        const int p = net.param_of_layer[li];
        act = fc_forward(as_batch_matrix(act, spec.dims[0]), net.weights[p], net.biases[p]);
        break;
      }
      case LayerKind::Conv2d: {
        const int p = net.param_of_layer[li];
        ConvSpec cs = conv_spec_of(spec);
        const int64_t bsz = act.shape()[0];
        const int64_t in_h = spec.dims[1], in_w = spec.dims[2];
        if (act.size() != bsz * cs.in_channels * in_h * in_w)
          throw ShapeError("conv input size mismatch");
        Tensor in4 = act.reshaped({bsz, cs.in_channels, in_h, in_w});
        const int64_t oh = cs.out_h(in_h), ow = cs.out_w(in_w);
        Tensor out({bsz, cs.out_channels, oh, ow});
        std::vector<Tensor> cols;
        for (int64_t b = 0; b < bsz; ++b) {
          Tensor sample({cs.in_channels, in_h, in_w},
                        std::vector<double>(in4.data() + b * cs.in_channels * in_h * in_w,
                                            in4.data() + (b + 1) * cs.in_channels * in_h * in_w));
          Tensor col = im2col(sample, cs);
          Tensor y = gemm(net.weights[p], col);
          double* dst = out.data() + b * cs.out_channels * oh * ow;
          for (int64_t o = 0; o < cs.out_channels; ++o) {
            const double bias = net.biases[p].empty() ? 0.0 : net.biases[p][o];
            for (int64_t q = 0; q < oh * ow; ++q) dst[o * oh * ow + q] = y.at(o, q) + bias;
          }
          if (cache) cols.push_back(std::move(col));
        }
        if (cache) cache->conv_cols.push_back(std::move(cols));
        act = std::move(out);
        break;
      }
      case LayerKind::Relu: {
        Tensor out = act;
        for (int64_t j = 0; j < out.size(); ++j)
          if (out[j] < 0.0) out[j] = 0.0;
        act = std::move(out);
        break;
      }
      case LayerKind::SoftmaxXent: {
        act = as_batch_matrix(act, spec.dims[0]);  // logits pass through
        break;
      }
    }
  }
  if (act.ndim() != 2) {
    const int64_t bsz = act.shape()[0];
    act = act.reshaped({bsz, act.size() / (bsz == 0 ? 1 : bsz)});
  }
  return act;
}

namespace {

// Mean softmax cross-entropy; fills dlogits with (softmax - onehot) / B.
double softmax_xent(const Tensor& logits, const std::vector<int>& labels, Tensor* dlogits) {
  const int64_t bsz = logits.rows(), classes = logits.cols();
  if (bsz == 0) throw ShapeError("empty batch");
  if (static_cast<int64_t>(labels.size()) != bsz)
    throw ShapeError("label count does not match batch size");
  if (dlogits) *dlogits = Tensor({bsz, classes});
  double loss = 0.0;
  for (int64_t b = 0; b < bsz; ++b) {
    const int y = labels[b];
    if (y < 0 || y >= classes)
      throw ShapeError("label " + std::to_string(y) + " out of range [0, " +
                       std::to_string(classes) + ")");
    const double* row = logits.data() + b * classes;
    double mx = row[0];
    for (int64_t c = 1; c < classes; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int64_t c = 0; c < classes; ++c) denom += std::exp(row[c] - mx);
    loss += std::log(denom) - (row[y] - mx);
    if (dlogits) {
      double* g = dlogits->data() + b * classes;
      for (int64_t c = 0; c < classes; ++c)
        g[c] = (std::exp(row[c] - mx) / denom - (c == y ? 1.0 : 0.0)) / bsz;
    }
  }
  return loss / static_cast<double>(bsz);
}

}  // namespace

LossGrad loss_and_grad(const Network& net, const Tensor& batch, const std::vector<int>& labels) {
  ForwardCache cache;
  Tensor logits = forward(net, batch, &cache);

  LossGrad out;
  out.grads.w.reserve(net.weights.size());
  for (const auto& w : net.weights) out.grads.w.emplace_back(w.shape());
  for (const auto& b : net.biases) out.grads.b.emplace_back(b.size(), 0.0);

  Tensor delta;
  out.loss = softmax_xent(logits, labels, &delta);

  int conv_seen = 0;
  for (const auto& spec : net.layers)
    if (spec.kind == LayerKind::Conv2d) ++conv_seen;

  for (int64_t li = static_cast<int64_t>(net.layers.size()) - 1; li >= 0; --li) {
    const LayerSpec& spec = net.layers[li];
    const Tensor& input = cache.layer_inputs[li];
    switch (spec.kind) {
      case LayerKind::SoftmaxXent:
        break;  // delta already holds dL/dlogits
      case LayerKind::Relu: {
        Tensor dx = delta.reshaped(input.shape());
        for (int64_t j = 0; j < dx.size(); ++j)
          if (input[j] <= 0.0) dx[j] = 0.0;
        delta = std::move(dx);
        break;
      }
      case LayerKind::FullyConnected: {
        const int p = net.param_of_layer[li];
        const Tensor x = as_batch_matrix(input, spec.dims[0]);
        const Tensor dy = delta.reshaped({x.rows(), spec.dims[1]});
        const int64_t bsz = x.rows(), in = x.cols(), outd = dy.cols();
        Tensor& dw = out.grads.w[p];
        for (int64_t b = 0; b < bsz; ++b) {
          const double* xr = x.data() + b * in;
          const double* dyr = dy.data() + b * outd;
          for (int64_t o = 0; o < outd; ++o) {
            double* dwr = dw.data() + o * in;
            const double g = dyr[o];
            for (int64_t i = 0; i < in; ++i) dwr[i] += g * xr[i];
          }
        }
        if (!net.biases[p].empty()) {
          auto& db = out.grads.b[p];
          for (int64_t b = 0; b < bsz; ++b)
            for (int64_t o = 0; o < outd; ++o) db[o] += dy.at(b, o);
        }
        Tensor dx({bsz, in});
        const Tensor& w = net.weights[p];
        for (int64_t b = 0; b < bsz; ++b) {
          double* dxr = dx.data() + b * in;
          const double* dyr = dy.data() + b * outd;
          for (int64_t o = 0; o < outd; ++o) {
            const double g = dyr[o];
            const double* wr = w.data() + o * in;
            for (int64_t i = 0; i < in; ++i) dxr[i] += g * wr[i];
          }
        }
        delta = dx.reshaped(input.shape());
        break;
      }
      case LayerKind::Conv2d: {
        const int p = net.param_of_layer[li];
        --conv_seen;
        const auto& cols = cache.conv_cols[conv_seen];
        ConvSpec cs = conv_spec_of(spec);
        const int64_t in_h = spec.dims[1], in_w = spec.dims[2];
        const int64_t oh = cs.out_h(in_h), ow = cs.out_w(in_w);
        const int64_t bsz = input.shape()[0];
        const Tensor dy4 = delta.reshaped({bsz, cs.out_channels, oh, ow});
        Tensor dx({bsz, cs.in_channels, in_h, in_w});
        Tensor& dw = out.grads.w[p];
        Tensor wt = net.weights[p].transposed();
        for (int64_t b = 0; b < bsz; ++b) {
          Tensor dy_mat({cs.out_channels, oh * ow},
                        std::vector<double>(dy4.data() + b * cs.out_channels * oh * ow,
                                            dy4.data() + (b + 1) * cs.out_channels * oh * ow));
          Tensor dwb = gemm(dy_mat, cols[b].transposed());
          for (int64_t j = 0; j < dw.size(); ++j) dw[j] += dwb[j];
          if (!net.biases[p].empty()) {
            auto& db = out.grads.b[p];
            for (int64_t o = 0; o < cs.out_channels; ++o)
              for (int64_t q = 0; q < oh * ow; ++q) db[o] += dy_mat.at(o, q);
          }
          Tensor dcol = gemm(wt, dy_mat);
          Tensor dxs = col2im(dcol, cs, in_h, in_w);
          std::copy(dxs.data(), dxs.data() + dxs.size(),
                    dx.data() + b * cs.in_channels * in_h * in_w);
        }
        delta = dx.reshaped(input.shape());
        break;
      }
    }
  }
  return out;
}

void sgd_step(Network& net, const Gradients& grads, const std::vector<Tensor>& reg_grads,
              double lr) {
  if (grads.w.size() != net.weights.size())
    throw ShapeError("sgd_step: gradient count mismatch");
  if (!reg_grads.empty() && reg_grads.size() != net.weights.size())
    throw ShapeError("sgd_step: reg gradient count mismatch");
  for (size_t p = 0; p < net.weights.size(); ++p) {
    Tensor& w = net.weights[p];
    if (!grads.w[p].same_shape(w))
      throw ShapeError("sgd_step: gradient shape mismatch at layer " + std::to_string(p));
    const Tensor* mask = net.mask_active() ? &net.masks[p] : nullptr;
    for (int64_t j = 0; j < w.size(); ++j) {
      if (mask && (*mask)[j] == 0.0) {
        w[j] = 0.0;
        continue;
      }
      double g = grads.w[p][j];
      if (!reg_grads.empty()) g += reg_grads[p][j];
      w[j] -= lr * g;
    }
    auto& bias = net.biases[p];
    for (size_t o = 0; o < bias.size(); ++o) bias[o] -= lr * grads.b[p][o];
  }
}

int argmax_class(const double* logits, int64_t classes) {
  int best = 0;
  for (int64_t c = 1; c < classes; ++c)
    if (logits[c] > logits[best]) best = static_cast<int>(c);
  return best;
}

double evaluate(const Network& net, const Tensor& features, const std::vector<int>& labels) {
  const int64_t n = features.shape()[0];
  if (n == 0) throw ShapeError("evaluate: empty dataset");
  if (static_cast<int64_t>(labels.size()) != n)
    throw ShapeError("evaluate: label count mismatch");
  const int64_t per = features.size() / n;
  int64_t correct = 0;
  const int64_t chunk = 256;
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t cnt = std::min(chunk, n - start);
    std::vector<int64_t> shape = features.shape();
    shape[0] = cnt;
    Tensor sub(shape, std::vector<double>(features.data() + start * per,
                                          features.data() + (start + cnt) * per));
    Tensor logits = forward(net, sub);
    for (int64_t b = 0; b < cnt; ++b) {
      const int pred = argmax_class(logits.data() + b * logits.cols(), logits.cols());
      if (pred == labels[start + b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

TrainResult train_dense(Network& net, const Dataset& data, const TrainOptions& opts) {
  if (opts.lr <= 0.0) throw ConfigError("learning rate must be > 0");
  TrainState state;
  state.lr = opts.lr;
  state.rng.seed(opts.seed);

  const int64_t n = data.features.shape()[0];
  const int64_t per = data.features.size() / n;
  std::vector<int64_t> order(n);

  std::vector<Tensor> velocity;
  if (opts.momentum != 0.0)
    for (const auto& w : net.weights) velocity.emplace_back(w.shape());
  std::vector<std::vector<double>> bias_velocity;
  if (opts.momentum != 0.0)
    for (const auto& b : net.biases) bias_velocity.emplace_back(b.size(), 0.0);

  TrainResult result;
  for (state.epoch = 0; state.epoch < opts.epochs; ++state.epoch) {
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), state.rng);
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
      if (!std::isfinite(lg.loss))
        throw TrainingDiverged("loss became non-finite at epoch " +
                               std::to_string(state.epoch));
      if (opts.momentum != 0.0) {
        for (size_t p = 0; p < net.weights.size(); ++p) {
          for (int64_t j = 0; j < velocity[p].size(); ++j) {
            velocity[p][j] = opts.momentum * velocity[p][j] + lg.grads.w[p][j];
            lg.grads.w[p][j] = velocity[p][j];
          }
          for (size_t o = 0; o < bias_velocity[p].size(); ++o) {
            bias_velocity[p][o] = opts.momentum * bias_velocity[p][o] + lg.grads.b[p][o];
            lg.grads.b[p][o] = bias_velocity[p][o];
          }
        }
      }
      sgd_step(net, lg.grads, {}, state.lr);
      epoch_loss += lg.loss;
      ++steps;
    }
    result.final_loss = epoch_loss / std::max<int64_t>(1, steps);
    ++result.epochs_run;
  }
  return result;
}

}  // namespace blkrew
