#pragma once

#include <filesystem>

#include "sit/image.hpp"

namespace sit {

/// Decode a PNG or JPEG file (detected by magic bytes) to floats in
/// [-1, 1]. Gray becomes c=1, everything else RGB; alpha is dropped.
Image read_image(const std::filesystem::path& path);

/// 8-bit PNG; values are clamped to [-1, 1] and quantized.
void write_png(const std::filesystem::path& path, const Image& img);

}  // namespace sit
