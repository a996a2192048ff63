#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "blkrew/tensor.hpp"

namespace blkrew {

struct Dataset {
  Tensor features;          // {samples, features...}
  std::vector<int> labels;  // in [0, classes)
  int64_t classes = 0;
};

// Gaussian blobs: class means on a sphere of radius 2.5, labels round-robin.
struct BlobsSpec {
  int64_t classes = 3;
  int64_t features = 16;
  int64_t samples = 600;
  double noise = 1.0;
  uint64_t seed = 1;
};
Dataset make_blobs(const BlobsSpec& spec);

// 10-class synthetic digit glyphs, 8x8 = 64 features. Each sample is a fixed
// glyph template with a random +-1 toroidal shift plus Gaussian pixel noise.
struct DigitsSpec {
  int64_t samples = 2000;
  double noise = 0.25;
  uint64_t seed = 1;
};
Dataset make_digits(const DigitsSpec& spec);

// CSV rows: label,f0,f1,... (no header).
Dataset load_csv(const std::string& path);
void save_csv(const Dataset& data, const std::string& path);

// IDX image/label pair (the ubyte format: magic 0x803 images, 0x801 labels).
// Pixel values are scaled to [0, 1].
Dataset load_idx(const std::string& images_path, const std::string& labels_path);

}  // namespace blkrew
