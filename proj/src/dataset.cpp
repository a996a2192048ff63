#include "blkrew/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "blkrew/errors.hpp"

namespace blkrew {

Dataset make_blobs(const BlobsSpec& spec) {
  if (spec.classes < 2 || spec.features < 1 || spec.samples < 1)
    throw ConfigError("blobs: need classes >= 2, features >= 1, samples >= 1");
  if (spec.noise < 0.0) throw ConfigError("blobs: noise must be >= 0");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  const double radius = 2.5;
  std::vector<std::vector<double>> means(spec.classes, std::vector<double>(spec.features));
  for (auto& mean : means) {
    double norm = 0.0;
    for (auto& v : mean) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (auto& v : mean) v = radius * v / (norm > 0 ? norm : 1.0);
  }

  Dataset data;
  data.classes = spec.classes;
  data.features = Tensor({spec.samples, spec.features});
  data.labels.resize(spec.samples);
  for (int64_t i = 0; i < spec.samples; ++i) {
    const int y = static_cast<int>(i % spec.classes);
    data.labels[i] = y;
    double* row = data.features.data() + i * spec.features;
    for (int64_t f = 0; f < spec.features; ++f)
      row[f] = means[y][f] + spec.noise * gauss(rng);
  }
  return data;
}

namespace {

// 8x8 glyphs for the digits 0-9, row strings with '#' = ink.
const std::array<std::array<const char*, 8>, 10> kGlyphs = {{
    {"..####..", ".##..##.", "##....##", "##....##", "##....##", "##....##", ".##..##.", "..####.."},
    {"...##...", "..###...", ".####...", "...##...", "...##...", "...##...", "...##...", ".######."},
    {".#####..", "##...##.", ".....##.", "....##..", "...##...", "..##....", ".##.....", "#######."},
    {".#####..", "##...##.", ".....##.", "..####..", ".....##.", ".....##.", "##...##.", ".#####.."},
    {"....##..", "...###..", "..####..", ".##.##..", "##..##..", "#######.", "....##..", "....##.."},
    {"#######.", "##......", "##......", "######..", ".....##.", ".....##.", "##...##.", ".#####.."},
    {"..####..", ".##.....", "##......", "######..", "##...##.", "##...##.", "##...##.", ".#####.."},
    {"#######.", ".....##.", "....##..", "...##...", "..##....", "..##....", "..##....", "..##...."},
    {".#####..", "##...##.", "##...##.", ".#####..", "##...##.", "##...##.", "##...##.", ".#####.."},
    {".#####..", "##...##.", "##...##.", ".######.", ".....##.", "....##..", "...##...", ".###...."},
}};

}  // namespace

Dataset make_digits(const DigitsSpec& spec) {
  if (spec.samples < 1) throw ConfigError("digits: samples must be >= 1");
  if (spec.noise < 0.0) throw ConfigError("digits: noise must be >= 0");
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_int_distribution<int> shift(-1, 1);

  Dataset data;
  data.classes = 10;
  data.features = Tensor({spec.samples, 64});
  data.labels.resize(spec.samples);
  for (int64_t i = 0; i < spec.samples; ++i) {
    const int y = static_cast<int>(i % 10);
    data.labels[i] = y;
    const int dy = shift(rng), dx = shift(rng);
    double* row = data.features.data() + i * 64;
    for (int r = 0; r < 8; ++r) {
      for (int c = 0; c < 8; ++c) {
        const int sr = ((r + dy) % 8 + 8) % 8;
        const int sc = ((c + dx) % 8 + 8) % 8;
        const double ink = kGlyphs[y][sr][sc] == '#' ? 1.0 : 0.0;
        row[r * 8 + c] = ink + spec.noise * gauss(rng);
      }
    }
  }
  return data;
}

Dataset load_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open csv file: " + path);
  std::vector<double> values;
  std::vector<int> labels;
  int64_t width = -1;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<double> row;
    while (std::getline(ss, cell, ',')) {
      try {
        row.push_back(std::stod(cell));
      } catch (const std::exception&) {
        throw ConfigError(path + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
      }
    }
    if (row.size() < 2)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": need label plus features");
    if (width < 0) width = static_cast<int64_t>(row.size()) - 1;
    if (static_cast<int64_t>(row.size()) - 1 != width)
      throw ConfigError(path + ":" + std::to_string(line_no) + ": inconsistent feature count");
    const double label = row[0];
    if (label < 0 || label != std::floor(label))
      throw ConfigError(path + ":" + std::to_string(line_no) + ": label must be a nonnegative integer");
    labels.push_back(static_cast<int>(label));
    values.insert(values.end(), row.begin() + 1, row.end());
  }
  if (labels.empty()) throw ConfigError(path + ": empty dataset");
  Dataset data;
  data.labels = std::move(labels);
  data.classes = *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  data.features = Tensor({static_cast<int64_t>(data.labels.size()), width}, std::move(values));
  return data;
}

void save_csv(const Dataset& data, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write csv file: " + path);
  const int64_t n = data.features.shape()[0];
  const int64_t width = data.features.size() / n;
  out.precision(17);
  for (int64_t i = 0; i < n; ++i) {
    out << data.labels[i];
    const double* row = data.features.data() + i * width;
    for (int64_t f = 0; f < width; ++f) out << ',' << row[f];
    out << '\n';
  }
}

namespace {

uint32_t read_be32(std::istream& in, const std::string& path) {
  unsigned char buf[4];
  in.read(reinterpret_cast<char*>(buf), 4);
  if (!in) throw IoError("truncated idx file: " + path);
  return (uint32_t{buf[0]} << 24) | (uint32_t{buf[1]} << 16) | (uint32_t{buf[2]} << 8) |
         uint32_t{buf[3]};
}

}  // namespace

Dataset load_idx(const std::string& images_path, const std::string& labels_path) {
  std::ifstream imgs(images_path, std::ios::binary);
  if (!imgs) throw IoError("cannot open idx images: " + images_path);
  if (read_be32(imgs, images_path) != 0x803)
    throw IoError("bad idx image magic in " + images_path);
  const int64_t count = read_be32(imgs, images_path);
  const int64_t rows = read_be32(imgs, images_path);
  const int64_t cols = read_be32(imgs, images_path);

  std::ifstream labs(labels_path, std::ios::binary);
  if (!labs) throw IoError("cannot open idx labels: " + labels_path);
  if (read_be32(labs, labels_path) != 0x801)
    throw IoError("bad idx label magic in " + labels_path);
  if (static_cast<int64_t>(read_be32(labs, labels_path)) != count)
    throw IoError("idx image/label counts differ");

  Dataset data;
  data.features = Tensor({count, rows * cols});
  data.labels.resize(count);
  std::vector<unsigned char> buf(rows * cols);
  for (int64_t i = 0; i < count; ++i) {
    imgs.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (!imgs) throw IoError("truncated idx images: " + images_path);
    for (int64_t j = 0; j < rows * cols; ++j)
      data.features[i * rows * cols + j] = buf[j] / 255.0;
    char label;
    labs.read(&label, 1);
    if (!labs) throw IoError("truncated idx labels: " + labels_path);
    data.labels[i] = static_cast<unsigned char>(label);
  }
  data.classes = data.labels.empty()
                     ? 0
                     : *std::max_element(data.labels.begin(), data.labels.end()) + 1;
  return data;
}

}  // namespace blkrew
