#include "blkrew/model_io.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>

#include "blkrew/dataset.hpp"

namespace blkrew {

namespace {

class Writer {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  }
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<uint64_t>(v)); }
  void words(const std::vector<uint64_t>& ws) {
    u64(ws.size());
    for (uint64_t w : ws) u64(w);
  }
  const std::string& bytes() const { return buf_; }

 private:
  std::string buf_;
};

class Reader {
 public:
  Reader(const char* data, size_t size) : data_(data), size_(size) {}
  uint8_t u8() {
    need(1);
    return static_cast<uint8_t>(data_[pos_++]);
  }
  uint32_t u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= uint32_t(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  uint64_t u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= uint64_t(static_cast<unsigned char>(data_[pos_++])) << (8 * i);
    return v;
  }
  int64_t i64() { return static_cast<int64_t>(u64()); }
  double f64() { return std::bit_cast<double>(u64()); }
  std::vector<uint64_t> words() {
    const uint64_t count = u64();
    if (count > size_ / 8) throw IoError("model file: oversized bitset");
    std::vector<uint64_t> ws(count);
    for (auto& w : ws) w = u64();
    return ws;
  }
  bool done() const { return pos_ == size_; }

 private:
  void need(size_t n) {
    if (pos_ + n > size_) throw IoError("model file truncated");
  }
  const char* data_;
  size_t size_;
  size_t pos_ = 0;
};

void write_tensor2d(Writer& w, const Tensor& t) {
  w.i64(t.rows());
  w.i64(t.cols());
  for (int64_t j = 0; j < t.size(); ++j) w.f64(t[j]);
}

Tensor read_tensor2d(Reader& r) {
  const int64_t rows = r.i64(), cols = r.i64();
  if (rows < 0 || cols < 0 || rows * cols > (1ll << 32))
    throw IoError("model file: bad tensor dims");
  Tensor t({rows, cols});
  for (int64_t j = 0; j < t.size(); ++j) t[j] = r.f64();
  return t;
}

void write_mask(Writer& w, const LayerMask& mask) {
  w.i64(mask.scheme.m);
  w.i64(mask.scheme.n);
  w.i64(mask.scheme.layer_rows);
  w.i64(mask.scheme.layer_cols);
  for (const auto& block : mask.blocks) {
    w.words(block.row_words);
    w.words(block.col_words);
  }
}

LayerMask read_mask(Reader& r) {
  LayerMask mask;
  const int64_t m = r.i64(), n = r.i64(), rows = r.i64(), cols = r.i64();
  mask.scheme = partition(rows, cols, m, n);
  mask.blocks.resize(mask.scheme.block_count());
  for (auto& block : mask.blocks) {
    block.row_words = r.words();
    block.col_words = r.words();
  }
  return mask;
}

void write_reordered(Writer& w, const ReorderedModel& model) {
  w.i64(model.rows);
  w.i64(model.cols);
  for (int64_t p : model.perm) w.i64(p);
  w.u64(model.groups.size());
  for (const auto& g : model.groups) {
    w.i64(g.row_start);
    w.i64(g.row_count);
    w.u64(g.gather.size());
    for (int64_t c : g.gather) w.i64(c);
    for (double v : g.compact) w.f64(v);
  }
  w.i64(model.zero_rows);
}

ReorderedModel read_reordered(Reader& r) {
  ReorderedModel model;
  model.rows = r.i64();
  model.cols = r.i64();
  if (model.rows < 0 || model.cols < 0) throw IoError("model file: bad reordered dims");
  model.perm.resize(model.rows);
  model.inv.assign(model.rows, 0);
  for (int64_t i = 0; i < model.rows; ++i) {
    model.perm[i] = r.i64();
    if (model.perm[i] < 0 || model.perm[i] >= model.rows)
      throw IoError("model file: permutation out of range");
  }
  for (int64_t i = 0; i < model.rows; ++i) model.inv[model.perm[i]] = i;
  const uint64_t n_groups = r.u64();
  for (uint64_t gi = 0; gi < n_groups; ++gi) {
    RowGroup g;
    g.row_start = r.i64();
    g.row_count = r.i64();
    const uint64_t gs = r.u64();
    g.gather.resize(gs);
    for (auto& c : g.gather) c = r.i64();
    g.compact.resize(g.row_count * gs);
    for (auto& v : g.compact) v = r.f64();
    model.groups.push_back(std::move(g));
  }
  model.zero_rows = r.i64();
  return model;
}

uint8_t kind_code(LayerKind kind) {
  switch (kind) {
    case LayerKind::FullyConnected: return 0;
    case LayerKind::Conv2d: return 1;
    case LayerKind::Relu: return 2;
    case LayerKind::SoftmaxXent: return 3;
  }
  throw IoError("unknown layer kind");
}

LayerKind kind_from_code(uint8_t code) {
  switch (code) {
    case 0: return LayerKind::FullyConnected;
    case 1: return LayerKind::Conv2d;
    case 2: return LayerKind::Relu;
    case 3: return LayerKind::SoftmaxXent;
  }
  throw IoError("model file: unknown layer kind code");
}

bool parameterized(const LayerSpec& spec) {
  return spec.kind == LayerKind::FullyConnected || spec.kind == LayerKind::Conv2d;
}

}  // namespace

bool ModelFile::any_masked() const {
  for (const auto& l : layers)
    if (parameterized(l.spec) && l.repr == WeightRepr::Masked) return true;
  return false;
}

bool ModelFile::all_reordered() const {
  bool any = false;
  for (const auto& l : layers) {
    if (!parameterized(l.spec)) continue;
    any = true;
    if (l.repr != WeightRepr::Reordered) return false;
  }
  return any;
}

void save_model(const ModelFile& model, const std::string& path) {
  Writer w;
  w.u32(static_cast<uint32_t>(model.layers.size()));
  for (const auto& layer : model.layers) {
    w.u8(kind_code(layer.spec.kind));
    w.u8(layer.spec.has_bias ? 1 : 0);
    w.u8(static_cast<uint8_t>(layer.repr));
    w.u8(0);
    w.u32(static_cast<uint32_t>(layer.spec.dims.size()));
    for (int64_t d : layer.spec.dims) w.i64(d);
    w.i64(layer.block_m);
    w.i64(layer.block_n);
  }
  for (const auto& layer : model.layers) {
    if (!parameterized(layer.spec)) continue;
    w.u64(layer.bias.size());
    for (double b : layer.bias) w.f64(b);
    switch (layer.repr) {
      case WeightRepr::Dense:
        write_tensor2d(w, layer.weights);
        break;
      case WeightRepr::Masked:
        write_tensor2d(w, layer.weights);
        if (!layer.mask) throw IoError("masked layer without mask");
        write_mask(w, *layer.mask);
        break;
      case WeightRepr::Reordered:
        if (!layer.reordered) throw IoError("reordered layer without payload");
        write_reordered(w, *layer.reordered);
        break;
    }
  }

  const auto& payload = w.bytes();
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(payload.data()), payload.size()));

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model file: " + path);
  out.write(kModelMagic, sizeof(kModelMagic));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  char crc_bytes[4];
  for (int i = 0; i < 4; ++i) crc_bytes[i] = static_cast<char>((crc >> (8 * i)) & 0xff);
  out.write(crc_bytes, 4);
  if (!out) throw IoError("short write on model file: " + path);
}

ModelFile load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (bytes.size() < sizeof(kModelMagic) + 4) throw IoError("model file too small: " + path);
  if (std::memcmp(bytes.data(), kModelMagic, sizeof(kModelMagic)) != 0)
    throw IoError("bad model magic in " + path);

  const size_t payload_size = bytes.size() - sizeof(kModelMagic) - 4;
  const char* payload = bytes.data() + sizeof(kModelMagic);
  uint32_t stored = 0;
  for (int i = 0; i < 4; ++i)
    stored |= uint32_t(static_cast<unsigned char>(bytes[bytes.size() - 4 + i])) << (8 * i);
  const uint32_t computed = static_cast<uint32_t>(
      crc32(0, reinterpret_cast<const Bytef*>(payload), payload_size));
  if (stored != computed)
    throw IoError("model checksum mismatch in " + path + " (file corrupted?)");

  Reader r(payload, payload_size);
  ModelFile model;
  const uint32_t n_layers = r.u32();
  for (uint32_t i = 0; i < n_layers; ++i) {
    StoredLayer layer;
    layer.spec.kind = kind_from_code(r.u8());
    layer.spec.has_bias = r.u8() != 0;
    layer.repr = static_cast<WeightRepr>(r.u8());
    r.u8();
    const uint32_t ndims = r.u32();
    layer.spec.dims.resize(ndims);
    for (auto& d : layer.spec.dims) d = r.i64();
    layer.block_m = r.i64();
    layer.block_n = r.i64();
    model.layers.push_back(std::move(layer));
  }
  for (auto& layer : model.layers) {
    if (!parameterized(layer.spec)) continue;
    const uint64_t bias_len = r.u64();
    layer.bias.resize(bias_len);
    for (auto& b : layer.bias) b = r.f64();
    switch (layer.repr) {
      case WeightRepr::Dense:
        layer.weights = read_tensor2d(r);
        break;
      case WeightRepr::Masked:
        layer.weights = read_tensor2d(r);
        layer.mask = read_mask(r);
        break;
      case WeightRepr::Reordered:
        layer.reordered = read_reordered(r);
        break;
      default:
        throw IoError("model file: unknown weight representation");
    }
  }
  if (!r.done()) throw IoError("model file has trailing bytes: " + path);
  return model;
}

ModelFile from_network_dense(const Network& net) {
  ModelFile model;
  for (size_t li = 0; li < net.layers.size(); ++li) {
    StoredLayer layer;
    layer.spec = net.layers[li];
    const int p = net.param_of_layer[li];
    if (p >= 0) {
      layer.repr = WeightRepr::Dense;
      layer.weights = net.weights[p];
      layer.bias = net.biases[p];
    }
    model.layers.push_back(std::move(layer));
  }
  return model;
}

ModelFile from_network_masked(const Network& net, const SparseMask& mask,
                              const std::vector<BlockScheme>& schemes) {
  if (mask.layers.size() != net.weights.size() || schemes.size() != net.weights.size())
    throw ShapeError("mask/scheme count does not match network");
  ModelFile model = from_network_dense(net);
  size_t p = 0;
  for (auto& layer : model.layers) {
    if (!parameterized(layer.spec)) continue;
    layer.repr = WeightRepr::Masked;
    layer.weights = apply_mask(layer.weights, mask.layers[p]);
    layer.mask = mask.layers[p];
    layer.block_m = schemes[p].m;
    layer.block_n = schemes[p].n;
    ++p;
  }
  return model;
}

ModelFile to_reordered(const ModelFile& model, int64_t fuzzy_span) {
  ModelFile out = model;
  for (auto& layer : out.layers) {
    if (!parameterized(layer.spec)) continue;
    if (layer.repr == WeightRepr::Reordered) continue;  // idempotent
    LayerMask mask;
    if (layer.repr == WeightRepr::Masked) {
      mask = *layer.mask;
    } else {
      // Dense layer: trivially reorderable under the all-alive mask.
      mask = LayerMask::all_alive(
          partition(layer.weights.rows(), layer.weights.cols(),
                    layer.block_m > 0 ? layer.block_m : layer.weights.rows(),
                    layer.block_n > 0 ? layer.block_n : layer.weights.cols()));
    }
    ReorderedModel rm = reorder(layer.weights, mask, fuzzy_span);
    // Round-trip check at write time: scatter must reproduce the masked matrix.
    Tensor back = reconstruct(rm);
    if (!(back == apply_mask(layer.weights, mask)))
      throw std::logic_error("reorder round-trip mismatch");
    layer.repr = WeightRepr::Reordered;
    layer.reordered = std::move(rm);
    layer.weights = Tensor();
    layer.mask.reset();
  }
  return out;
}

Network to_network(const ModelFile& model, uint64_t seed) {
  std::vector<LayerSpec> specs;
  for (const auto& layer : model.layers) specs.push_back(layer.spec);
  Network net = make_network(std::move(specs), seed);
  std::vector<Tensor> masks;
  bool any_mask = false;
  size_t p = 0;
  for (const auto& layer : model.layers) {
    if (!parameterized(layer.spec)) continue;
    if (layer.repr == WeightRepr::Reordered)
      throw IoError("reordered models cannot be converted back to a trainable network");
    net.weights[p] = layer.weights;
    net.biases[p] = layer.bias;
    if (layer.repr == WeightRepr::Masked) {
      masks.push_back(layer.mask->element_matrix());
      any_mask = true;
    } else {
      masks.push_back(Tensor());
    }
    ++p;
  }
  if (any_mask) {
    for (size_t i = 0; i < masks.size(); ++i)
      if (masks[i].size() == 0) {
        masks[i] = Tensor(net.weights[i].shape());
        for (int64_t j = 0; j < masks[i].size(); ++j) masks[i][j] = 1.0;
      }
    net.set_masks(std::move(masks));
  }
  return net;
}

namespace {

Tensor layer_matmul(const StoredLayer& layer, const Tensor& x_t, int workers) {
  // x_t is input^T laid out (features x batch); returns (out x batch).
  if (layer.repr == WeightRepr::Reordered) {
    ExecutionPlan plan = make_plan(*layer.reordered, workers);
    return sparse_exec(*layer.reordered, x_t, plan);
  }
  return gemm(layer.weights, x_t);
}

}  // namespace

Tensor model_forward(const ModelFile& model, const Tensor& batch, int workers) {
  const int64_t bsz = batch.shape()[0];
  Tensor act = batch.reshaped({bsz, batch.size() / (bsz ? bsz : 1)});
  for (const auto& layer : model.layers) {
    switch (layer.spec.kind) {
      case LayerKind::FullyConnected: {
        Tensor y_t = layer_matmul(layer, act.transposed(), workers);
        Tensor y = y_t.transposed();
        if (!layer.bias.empty())
          for (int64_t b = 0; b < y.rows(); ++b)
            for (int64_t o = 0; o < y.cols(); ++o) y.at(b, o) += layer.bias[o];
        act = std::move(y);
        break;
      }
      case LayerKind::Conv2d: {
        const auto& d = layer.spec.dims;
        ConvSpec cs{d[0], d[3], d[4], d[5], d[6], d[7]};
        const int64_t in_h = d[1], in_w = d[2];
        const int64_t oh = cs.out_h(in_h), ow = cs.out_w(in_w);
        Tensor out({bsz, cs.out_channels * oh * ow});
        for (int64_t b = 0; b < bsz; ++b) {
          Tensor sample({cs.in_channels, in_h, in_w},
                        std::vector<double>(act.data() + b * act.cols(),
                                            act.data() + (b + 1) * act.cols()));
          Tensor col = im2col(sample, cs);
          Tensor y = layer_matmul(layer, col, workers);
          for (int64_t o = 0; o < cs.out_channels; ++o) {
            const double bias = layer.bias.empty() ? 0.0 : layer.bias[o];
            for (int64_t q = 0; q < oh * ow; ++q)
              out.at(b, o * oh * ow + q) = y.at(o, q) + bias;
          }
        }
        act = std::move(out);
        break;
      }
      case LayerKind::Relu:
        for (int64_t j = 0; j < act.size(); ++j)
          if (act[j] < 0.0) act[j] = 0.0;
        break;
      case LayerKind::SoftmaxXent:
        break;
    }
  }
  return act;
}

double model_accuracy(const ModelFile& model, const Dataset& data, int workers) {
  const int64_t n = data.features.shape()[0];
  if (n == 0) throw ShapeError("empty dataset");
  const int64_t per = data.features.size() / n;
  int64_t correct = 0;
  const int64_t chunk = 256;
  for (int64_t start = 0; start < n; start += chunk) {
    const int64_t cnt = std::min(chunk, n - start);
    Tensor sub({cnt, per}, std::vector<double>(data.features.data() + start * per,
                                               data.features.data() + (start + cnt) * per));
    Tensor logits = model_forward(model, sub, workers);
    for (int64_t b = 0; b < cnt; ++b) {
      const int pred = argmax_class(logits.data() + b * logits.cols(), logits.cols());
      if (pred == data.labels[start + b]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace blkrew
