#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

namespace stroke {

/// Decoded 8-bit image, rows top-to-bottom, samples interleaved.
struct ImageU8 {
    int64_t width = 0, height = 0, channels = 0;  // channels: 1 gray, 3 rgb
    std::vector<uint8_t> pixels;
};

/// Decodes a PNG; grayscale sources come back 1-channel, color sources
/// 3-channel (palette/alpha folded by the decoder).
ImageU8 read_png(const std::filesystem::path& path);

/// Writes a grayscale PNG from unit-range values (clamped, rounded to 8 bit).
void write_png_gray(const std::filesystem::path& path, const double* vals, int64_t height, int64_t width);

/// Writes an RGB PNG from planar (3,H,W) unit-range values.
void write_png_rgb(const std::filesystem::path& path, const double* chw, int64_t height, int64_t width);

}  // namespace stroke
