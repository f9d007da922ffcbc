#pragma once

#include <cstdint>
#include <filesystem>
#include <span>

#include "noisyood/tensor.hpp"

namespace noisyood {

// On-disk layout: <dir>/manifest.json plus one raw little-endian row-major
// payload per tensor. Manifest:
//   { "name": str,
//     "tensors": [ {"key", "dtype", "shape", "file", "crc32"} ... ],
//     ...extension fields from TensorBundle::metadata }
// Tensor entries are listed in key order.

uint32_t crc32(std::span<const unsigned char> bytes);

// Validates the bundle (shared N, label range, finiteness) before writing.
void write_bundle(const TensorBundle& bundle, const std::filesystem::path& dir);
TensorBundle read_bundle(const std::filesystem::path& dir);

// Same container without the dataset invariants; used for model weights and
// fitted detector states whose tensors do not share a leading dimension.
void write_tensor_store(const TensorBundle& store, const std::filesystem::path& dir);
TensorBundle read_tensor_store(const std::filesystem::path& dir);

// <root>/train, <root>/val, <root>/test, <root>/ood/<name>, <root>/ood_val
void write_split_set(const SplitSet& split, const std::filesystem::path& root);
SplitSet read_split_set(const std::filesystem::path& root);

}  // namespace noisyood
