#include "blkrew/tensor.hpp"

#include <cmath>
#include <string>

namespace blkrew {

namespace {

int64_t shape_product(const std::vector<int64_t>& shape) {
  int64_t n = 1;
  for (int64_t d : shape) {
    if (d < 0) throw ShapeError("negative dimension in tensor shape");
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<int64_t> shape)
    : shape_(std::move(shape)), data_(shape_product(shape_), 0.0) {
  cols_ = shape_.size() == 2 ? shape_[1] : 0;
}

Tensor::Tensor(std::vector<int64_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_product(shape_) != static_cast<int64_t>(data_.size()))
    throw ShapeError("tensor data length does not match shape product");
  cols_ = shape_.size() == 2 ? shape_[1] : 0;
}

Tensor Tensor::matrix(int64_t rows, int64_t cols) { return Tensor({rows, cols}); }

Tensor Tensor::from_rows(std::initializer_list<std::initializer_list<double>> rows) {
  int64_t r = static_cast<int64_t>(rows.size());
  int64_t c = r == 0 ? 0 : static_cast<int64_t>(rows.begin()->size());
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (static_cast<int64_t>(row.size()) != c)
      throw ShapeError("ragged initializer rows");
    data.insert(data.end(), row.begin(), row.end());
  }
  return Tensor({r, c}, std::move(data));
}

int64_t Tensor::rows() const {
  if (ndim() != 2) throw ShapeError("rows() on non-matrix tensor");
  return shape_[0];
}

int64_t Tensor::cols() const {
  if (ndim() != 2) throw ShapeError("cols() on non-matrix tensor");
  return shape_[1];
}

Tensor Tensor::reshaped(std::vector<int64_t> shape) const {
  if (shape_product(shape) != size())
    throw ShapeError("reshape changes element count");
  return Tensor(std::move(shape), data_);
}

Tensor Tensor::transposed() const {
  int64_t r = rows(), c = cols();
  Tensor out({c, r});
  for (int64_t i = 0; i < r; ++i)
    for (int64_t j = 0; j < c; ++j) out.at(j, i) = at(i, j);
  return out;
}

bool Tensor::all_finite() const {
  for (double v : data_)
    if (!std::isfinite(v)) return false;
  return true;
}

Tensor gemm(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("gemm expects matrices");
  if (a.cols() != b.rows())
    throw ShapeError("gemm inner dimensions mismatch: " + std::to_string(a.cols()) +
                     " vs " + std::to_string(b.rows()));
  const int64_t m = a.rows(), kk = a.cols(), n = b.cols();
  Tensor out({m, n});
  // i-k-j loop order: per output element the k accumulation is still strictly
  // ascending, bit-identical to the naive i-j-k triple loop.
  for (int64_t i = 0; i < m; ++i) {
    double* out_row = out.data() + i * n;
    const double* a_row = a.data() + i * kk;
    for (int64_t k = 0; k < kk; ++k) {
      const double av = a_row[k];
      const double* b_row = b.data() + k * n;
      for (int64_t j = 0; j < n; ++j) out_row[j] += av * b_row[j];
    }
  }
  return out;
}

void ConvSpec::validate() const {
  if (in_channels < 1 || out_channels < 1)
    throw ShapeError("conv spec: channel counts must be >= 1");
  if (kernel_h < 1 || kernel_w < 1)
    throw ShapeError("conv spec: kernel dims must be >= 1");
  if (stride < 1) throw ShapeError("conv spec: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv spec: padding must be >= 0");
}

int64_t ConvSpec::out_h(int64_t in_h) const {
  return (in_h + 2 * padding - kernel_h) / stride + 1;
}

int64_t ConvSpec::out_w(int64_t in_w) const {
  return (in_w + 2 * padding - kernel_w) / stride + 1;
}

Tensor im2col(const Tensor& input, const ConvSpec& spec) {
  spec.validate();
  if (input.ndim() != 3) throw ShapeError("im2col expects a C x H x W tensor");
  const int64_t c_in = input.shape()[0], h = input.shape()[1], w = input.shape()[2];
  if (c_in != spec.in_channels)
    throw ShapeError("im2col: input channels do not match conv spec");
  if (spec.kernel_h > h + 2 * spec.padding || spec.kernel_w > w + 2 * spec.padding)
    throw ShapeError("im2col: kernel window larger than padded input");
  const int64_t oh = spec.out_h(h), ow = spec.out_w(w);
  if (oh < 1 || ow < 1) throw ShapeError("im2col: empty output");

  Tensor out({spec.patch_size(), oh * ow});
  const int64_t n = oh * ow;
  for (int64_t c = 0; c < c_in; ++c) {
    const double* plane = input.data() + c * h * w;
    for (int64_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (int64_t kx = 0; kx < spec.kernel_w; ++kx) {
        const int64_t row = (c * spec.kernel_h + ky) * spec.kernel_w + kx;
        double* out_row = out.data() + row * n;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * spec.stride - spec.padding + ky;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * spec.stride - spec.padding + kx;
            double v = 0.0;
            if (iy >= 0 && iy < h && ix >= 0 && ix < w) v = plane[iy * w + ix];
            out_row[oy * ow + ox] = v;
          }
        }
      }
    }
  }
  return out;
}

Tensor col2im(const Tensor& cols, const ConvSpec& spec, int64_t in_h, int64_t in_w) {
  spec.validate();
  const int64_t oh = spec.out_h(in_h), ow = spec.out_w(in_w);
  if (cols.ndim() != 2 || cols.rows() != spec.patch_size() || cols.cols() != oh * ow)
    throw ShapeError("col2im: patch matrix shape mismatch");
  Tensor out({spec.in_channels, in_h, in_w});
  const int64_t n = oh * ow;
  for (int64_t c = 0; c < spec.in_channels; ++c) {
    double* plane = out.data() + c * in_h * in_w;
    for (int64_t ky = 0; ky < spec.kernel_h; ++ky) {
      for (int64_t kx = 0; kx < spec.kernel_w; ++kx) {
        const int64_t row = (c * spec.kernel_h + ky) * spec.kernel_w + kx;
        const double* src = cols.data() + row * n;
        for (int64_t oy = 0; oy < oh; ++oy) {
          const int64_t iy = oy * spec.stride - spec.padding + ky;
          if (iy < 0 || iy >= in_h) continue;
          for (int64_t ox = 0; ox < ow; ++ox) {
            const int64_t ix = ox * spec.stride - spec.padding + kx;
            if (ix < 0 || ix >= in_w) continue;
            plane[iy * in_w + ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
  return out;
}

Tensor conv2d_gemm(const Tensor& input, const Tensor& weights, const ConvSpec& spec) {
  spec.validate();
  if (weights.ndim() != 2 || weights.rows() != spec.out_channels ||
      weights.cols() != spec.patch_size())
    throw ShapeError("conv2d_gemm: weight matrix must be out_channels x (C*kh*kw)");
  Tensor cols = im2col(input, spec);
  Tensor out_mat = gemm(weights, cols);
  const int64_t oh = spec.out_h(input.shape()[1]), ow = spec.out_w(input.shape()[2]);
  return out_mat.reshaped({spec.out_channels, oh, ow});
}

}  // namespace blkrew
