#pragma once

#include <stdexcept>
#include <string>

namespace blkrew {

// Dimension or layout violation (matrix shapes, mask extents, ...).
struct ShapeError : std::runtime_error {
  explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad user-facing configuration (config file, CLI values, block schemes).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File I/O and serialization failures (missing file, checksum mismatch).
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Training loss became non-finite.
struct TrainingDiverged : std::runtime_error {
  explicit TrainingDiverged(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace blkrew
