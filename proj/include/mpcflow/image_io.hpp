#pragma once

#include <cstddef>
#include <filesystem>
#include <vector>

namespace mpcflow {

/// Row-major grayscale image.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;
};

/// Binary PGM (P5) with maxval 65535, big-endian samples. Values are clamped
/// to [0,1] and quantized to round(v * 65535).
void write_pgm(const std::filesystem::path& path, const Image& image);
/// Reads P5 with any maxval in [1, 65535]; values are scaled to [0,1].
/// FormatError kinds: UnsupportedFormat for other PNM variants, BadMagic for
/// non-PNM files, MalformedHeader, Truncated.
Image read_pgm(const std::filesystem::path& path);

/// Raw grid: "F64GRID0", u32 height, u32 width (little-endian), then
/// height*width little-endian f64 values.
void write_raw_grid(const std::filesystem::path& path, const Image& image);
Image read_raw_grid(const std::filesystem::path& path);

}  // namespace mpcflow
