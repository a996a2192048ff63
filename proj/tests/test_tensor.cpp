#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <random>

#include "blkrew/tensor.hpp"
#include "testutil.hpp"

using namespace blkrew;
using namespace blkrew::testutil;

TEST_CASE("gemm identity leaves the other operand unchanged") {
  Tensor eye = Tensor::from_rows({{1, 0}, {0, 1}});
  Tensor b = Tensor::from_rows({{1, 2, 3}, {4, 5, 6}});
  CHECK(gemm(eye, b) == b);
}

TEST_CASE("gemm hand arithmetic") {
  Tensor a = Tensor::from_rows({{1, 2}, {3, 4}});
  Tensor b = Tensor::from_rows({{5}, {6}});
  Tensor c = gemm(a, b);
  CHECK(c.at(0, 0) == 17.0);
  CHECK(c.at(1, 0) == 39.0);
}

TEST_CASE("gemm matches the triple-loop oracle exactly") {
  std::mt19937_64 rng(42);
  Tensor a = random_tensor({7, 5}, rng);
  Tensor b = random_tensor({5, 3}, rng);
  Tensor got = gemm(a, b);
  Tensor want = gemm_oracle(a, b);
  for (int64_t j = 0; j < got.size(); ++j) CHECK(got[j] == want[j]);
}

TEST_CASE("gemm is exactly linear in its first argument") {
  std::mt19937_64 rng(7);
  for (int it = 0; it < 20; ++it) {
    Tensor a = random_tensor({4, 6}, rng);
    Tensor a2 = random_tensor({4, 6}, rng);
    Tensor b = random_tensor({6, 3}, rng);
    std::uniform_real_distribution<double> coef(-1.0, 1.0);
    const double alpha = coef(rng), beta = coef(rng);
    Tensor mix({4, 6});
    for (int64_t j = 0; j < mix.size(); ++j) mix[j] = alpha * a[j] + beta * a2[j];
    Tensor lhs = gemm(mix, b);
    Tensor ra = gemm(a, b), rb = gemm(a2, b);
    for (int64_t j = 0; j < lhs.size(); ++j)
      CHECK(lhs[j] == doctest::Approx(alpha * ra[j] + beta * rb[j]).epsilon(1e-12));
  }
}

TEST_CASE("gemm rejects mismatched inner dims") {
  Tensor a({2, 3});
  Tensor b({4, 2});
  CHECK_THROWS_AS(gemm(a, b), ShapeError);
}

TEST_CASE("im2col with a 1x1 kernel is a reshape") {
  std::mt19937_64 rng(3);
  Tensor input = random_tensor({2, 3, 4}, rng);
  ConvSpec spec{2, 1, 1, 1, 1, 0};
  Tensor cols = im2col(input, spec);
  CHECK(cols.rows() == 2);
  CHECK(cols.cols() == 12);
  for (int64_t j = 0; j < input.size(); ++j) CHECK(cols[j] == input[j]);
}

TEST_CASE("im2col columns are the four 2x2 patches of a 3x3 input") {
  // input [[a,b,c],[d,e,f],[g,h,i]]
  Tensor input({1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  ConvSpec spec{1, 1, 2, 2, 1, 0};
  Tensor cols = im2col(input, spec);
  CHECK(cols.rows() == 4);
  CHECK(cols.cols() == 4);
  // patch enumeration oracle: column p = flattened patch at output position p
  const double expect[4][4] = {
      {1, 2, 4, 5}, {2, 3, 5, 6}, {4, 5, 7, 8}, {5, 6, 8, 9}};  // patches as columns
  for (int p = 0; p < 4; ++p)
    for (int r = 0; r < 4; ++r) CHECK(cols.at(r, p) == expect[p][r]);
}

TEST_CASE("im2col rejects windows larger than the padded input") {
  Tensor input({1, 2, 2});
  ConvSpec spec{1, 1, 4, 4, 1, 0};
  CHECK_THROWS_AS(im2col(input, spec), ShapeError);
}

TEST_CASE("conv2d_gemm zero weights give zero output") {
  std::mt19937_64 rng(4);
  Tensor input = random_tensor({2, 4, 4}, rng);
  ConvSpec spec{2, 3, 2, 2, 1, 0};
  Tensor w({3, spec.patch_size()});
  Tensor out = conv2d_gemm(input, w, spec);
  for (int64_t j = 0; j < out.size(); ++j) CHECK(out[j] == 0.0);
}

TEST_CASE("conv2d_gemm identity 1x1 filter reproduces the input") {
  std::mt19937_64 rng(5);
  Tensor input = random_tensor({1, 5, 5}, rng);
  ConvSpec spec{1, 1, 1, 1, 1, 0};
  Tensor w({1, 1}, {1.0});
  Tensor out = conv2d_gemm(input, w, spec);
  for (int64_t j = 0; j < input.size(); ++j) CHECK(out[j] == input[j]);
}

TEST_CASE("conv2d_gemm matches the sliding-window oracle on 200 random cases") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int64_t> dim(1, 8);
  for (int it = 0; it < 200; ++it) {
    const int64_t c = dim(rng) % 3 + 1, h = dim(rng), w = dim(rng);
    ConvSpec spec;
    spec.in_channels = c;
    spec.out_channels = dim(rng) % 4 + 1;
    spec.kernel_h = std::min<int64_t>(h, dim(rng) % 3 + 1);
    spec.kernel_w = std::min<int64_t>(w, dim(rng) % 3 + 1);
    spec.stride = dim(rng) % 2 + 1;
    spec.padding = dim(rng) % 2;
    Tensor input = random_tensor({c, h, w}, rng);
    Tensor weights = random_tensor({spec.out_channels, spec.patch_size()}, rng);
    Tensor got = conv2d_gemm(input, weights, spec);
    Tensor want = conv_oracle(input, weights, spec);
    CHECK(max_abs_diff(got, want) <= 1e-12);
  }
}

TEST_CASE("zeroing weight row r zeroes exactly output channel r") {
  std::mt19937_64 rng(8);
  Tensor input = random_tensor({2, 5, 5}, rng);
  ConvSpec spec{2, 4, 3, 3, 1, 1};
  Tensor weights = random_tensor({4, spec.patch_size()}, rng);
  Tensor base = conv2d_gemm(input, weights, spec);
  const int64_t r = 2;
  Tensor cut = weights;
  for (int64_t j = 0; j < cut.cols(); ++j) cut.at(r, j) = 0.0;
  Tensor out = conv2d_gemm(input, cut, spec);
  const int64_t plane = out.shape()[1] * out.shape()[2];
  for (int64_t o = 0; o < 4; ++o)
    for (int64_t q = 0; q < plane; ++q) {
      if (o == r)
        CHECK(out[o * plane + q] == 0.0);
      else
        CHECK(out[o * plane + q] == base[o * plane + q]);
    }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(Tensor({2, 2}, {1.0}), ShapeError);
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.all_finite());
}
