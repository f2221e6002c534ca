#pragma once

#include <filesystem>
#include <string>

#include "spatialops/model.hpp"

// Binary, little-endian container:
//   "SPOPCKPT" | u32 version | u32 element bytes (4 or 8)
//   | str config | u64 n, n x str vocabulary
//   | u64 n, n x (str name | u64 rank | rank x u64 extent | values)
//   | u64 n, n x (mean values | variance values)        batch-norm moments
// where str = u64 length + bytes.
namespace spatialops {

template <typename T>
void save_checkpoint(const Model<T>& model, const std::filesystem::path& path);

// Reads either precision and converts to T. Throws std::runtime_error on a
// malformed or truncated file.
template <typename T>
Model<T> load_checkpoint(const std::filesystem::path& path);

// Stored precision in bits (32 or 64).
int checkpoint_precision(const std::filesystem::path& path);

}  // namespace spatialops
