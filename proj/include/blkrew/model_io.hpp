#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "blkrew/nn.hpp"
#include "blkrew/prune.hpp"
#include "blkrew/reorder.hpp"

namespace blkrew {

// On-disk model: magic "BLKREW01", layer table, one weight payload per
// parameterized layer (dense, masked, or reordered), CRC-32 over everything
// after the magic. Little-endian throughout; bitsets 64 bits per word.
inline constexpr char kModelMagic[8] = {'B', 'L', 'K', 'R', 'E', 'W', '0', '1'};

enum class WeightRepr : uint8_t { Dense = 1, Masked = 2, Reordered = 3 };

struct StoredLayer {
  LayerSpec spec;
  WeightRepr repr = WeightRepr::Dense;
  int64_t block_m = 0, block_n = 0;  // recorded scheme; 0 = unset
  Tensor weights;                    // Dense and Masked payloads
  std::optional<LayerMask> mask;     // Masked
  std::optional<ReorderedModel> reordered;
  std::vector<double> bias;
};

struct ModelFile {
  std::vector<StoredLayer> layers;

  bool any_masked() const;
  bool all_reordered() const;
};

void save_model(const ModelFile& model, const std::string& path);
ModelFile load_model(const std::string& path);

ModelFile from_network_dense(const Network& net);
ModelFile from_network_masked(const Network& net, const SparseMask& mask,
                              const std::vector<BlockScheme>& schemes);
// Convert every masked layer to its reordered form.
ModelFile to_reordered(const ModelFile& model, int64_t fuzzy_span = 0);

// Dense or masked models back to a Network (masked layers install masks).
Network to_network(const ModelFile& model, uint64_t seed = 0);

// Forward pass over any representation mix; reordered layers run through
// sparse_exec with the given worker count.
Tensor model_forward(const ModelFile& model, const Tensor& batch, int workers);
double model_accuracy(const ModelFile& model, const Dataset& data, int workers);

}  // namespace blkrew
