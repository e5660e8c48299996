#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "posefuse/evaluation.hpp"

namespace posefuse::app {

/// 8-bit RGB PNG from interleaved rows.
void write_png_rgb(const std::filesystem::path& file, int width, int height,
                   const std::vector<std::uint8_t>& rgb);

/// Quantizes [0,1] values to 8 bits and upscales each cell to scale×scale pixels.
void write_png(const std::filesystem::path& file, const RgbImage& image, int scale = 1);

}  // namespace posefuse::app
