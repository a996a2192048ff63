#pragma once

#include <cstdint>
#include <initializer_list>
#include <vector>

#include "blkrew/errors.hpp"

namespace blkrew {

// Dense n-dimensional array of doubles, flat row-major storage.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<int64_t> shape);  // zero-filled
  Tensor(std::vector<int64_t> shape, std::vector<double> data);

  static Tensor matrix(int64_t rows, int64_t cols);
  static Tensor from_rows(std::initializer_list<std::initializer_list<double>> rows);

  const std::vector<int64_t>& shape() const { return shape_; }
  int64_t ndim() const { return static_cast<int64_t>(shape_.size()); }
  int64_t size() const { return static_cast<int64_t>(data_.size()); }
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  // 2-d accessors; throw unless ndim == 2.
  int64_t rows() const;
  int64_t cols() const;
  double at(int64_t r, int64_t c) const { return data_[r * cols_ + c]; }
  double& at(int64_t r, int64_t c) { return data_[r * cols_ + c]; }

  double operator[](int64_t i) const { return data_[i]; }
  double& operator[](int64_t i) { return data_[i]; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& vec() { return data_; }
  const std::vector<double>& vec() const { return data_; }

  Tensor reshaped(std::vector<int64_t> shape) const;
  Tensor transposed() const;  // 2-d only
  bool all_finite() const;

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::vector<int64_t> shape_;
  std::vector<double> data_;
  int64_t cols_ = 0;  // stride of the leading row dimension when ndim == 2
};

// out[i][j] = sum_k a[i][k] * b[k][j], k strictly ascending so results are
// bit-reproducible against any other ascending-k evaluation.
Tensor gemm(const Tensor& a, const Tensor& b);

struct ConvSpec {
  int64_t in_channels = 1;
  int64_t out_channels = 1;
  int64_t kernel_h = 1;
  int64_t kernel_w = 1;
  int64_t stride = 1;
  int64_t padding = 0;

  void validate() const;
  int64_t out_h(int64_t in_h) const;
  int64_t out_w(int64_t in_w) const;
  int64_t patch_size() const { return in_channels * kernel_h * kernel_w; }
};

// Lower a C x H x W input to the (C*kh*kw) x (out_h*out_w) patch matrix.
// Column p holds the flattened receptive field of output position p, with
// zeros where the window exits the (zero-padded) input.
Tensor im2col(const Tensor& input, const ConvSpec& spec);

// Adjoint of im2col: scatter-add patch-matrix gradients back onto a
// C x H x W gradient tensor.
Tensor col2im(const Tensor& cols, const ConvSpec& spec, int64_t in_h, int64_t in_w);

// conv(input, weights) == gemm(weights, im2col(input)) reshaped to
// out_channels x out_h x out_w. Weight rows are output channels.
Tensor conv2d_gemm(const Tensor& input, const Tensor& weights, const ConvSpec& spec);

}  // namespace blkrew
