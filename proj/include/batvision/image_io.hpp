#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace bv {

// Single-channel raster, 8 or 16 bits per pixel, stored widened.
struct GrayImage {
  int width = 0;
  int height = 0;
  int bit_depth = 8;
  std::vector<std::uint16_t> pixels;  // row-major
};

using PngText = std::vector<std::pair<std::string, std::string>>;

void write_png(const std::filesystem::path& path, const GrayImage& image, const PngText& text = {});
GrayImage read_png(const std::filesystem::path& path);

// Quantizes values in [0,1] (clamped) to an 8-bit image.
GrayImage to_gray8(std::span<const double> values, int width, int height);

// Tiles equally sized 8-bit images into a rows x cols grid with a `pad`-pixel
// separator of value `pad_value`. Missing tiles are left blank.
GrayImage mosaic(const std::vector<GrayImage>& tiles, int cols, int pad = 2,
                 std::uint16_t pad_value = 255);

// Line plot of `y` scaled symmetrically about zero, black on white.
GrayImage plot_signal(std::span<const double> y, int width, int height);

}  // namespace bv
