#pragma once

#include <filesystem>

#include "dan/common.hpp"

namespace dan {

/// Reads an 8-bit PNG as a [1, 3, H, W] float frame in [0, 1].
/// Throws IoError when the file cannot be decoded.
Tensor read_png(const std::filesystem::path& path);

/// Writes a [1, 3, H, W] (RGB) or [1, 1, H, W] (grayscale) tensor as an
/// 8-bit PNG; values are clamped to [0, 1] and rounded.
void write_png(const std::filesystem::path& path, const Tensor& image);

/// Rounds to the nearest 8-bit level, the same mapping write_png uses.
Tensor quantize_8bit(const Tensor& image);

}  // namespace dan
