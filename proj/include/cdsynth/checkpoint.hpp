#pragma once

#include <filesystem>

#include "cdsynth/tensor.hpp"

namespace cdsynth {

// Reads a safetensors file: an 8-byte little-endian header length, a JSON
// header mapping tensor names to {dtype, shape, data_offsets}, then the raw
// tensor bytes. Only F32 and F64 payloads are accepted. Trailing spaces in
// the header (used by some writers for alignment) are tolerated.
TensorMap load_checkpoint(const std::filesystem::path& path);

// Writes a canonical safetensors file: names in lexicographic order, compact
// JSON header without padding, data section laid out in the same order.
// Loading and re-saving a canonical file reproduces it byte for byte.
void save_checkpoint(const TensorMap& tensors, const std::filesystem::path& path);

} // namespace cdsynth
