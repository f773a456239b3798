#pragma once

#include <filesystem>

#include "fusionnet/tensor.hpp"

namespace fusionnet {

/// RGB image [3,H,W], values in [0,1].
using Image = Tensor<float>;

/// Decodes any PNG to 8-bit RGB; item error naming the path on failure.
Image read_png(const std::filesystem::path& path);

/// Quantizes to 8 bits (round to nearest) and writes an RGB PNG; io error on failure.
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace fusionnet
