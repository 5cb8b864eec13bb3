#include "batvision/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <stdexcept>

namespace bv {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

[[noreturn]] void png_error_handler(png_structp, png_const_charp msg) {
  throw std::runtime_error(msg);
}
void png_warning_handler(png_structp, png_const_charp) {}

}  // namespace

void write_png(const std::filesystem::path& path, const GrayImage& image, const PngText& text) {
  if (image.bit_depth != 8 && image.bit_depth != 16) throw std::invalid_argument("png: bit depth must be 8 or 16");
  if (image.pixels.size() != static_cast<std::size_t>(image.width) * image.height) {
    throw std::invalid_argument("png: pixel count does not match dimensions");
  }
  FilePtr file(std::fopen(path.c_str(), "wb"));
  if (!file) throw std::runtime_error("cannot open " + path.string() + " for writing");

  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                            png_warning_handler);
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, file.get());
    png_set_IHDR(png, info, image.width, image.height, image.bit_depth, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    std::vector<png_text> entries(text.size());
    for (std::size_t i = 0; i < text.size(); ++i) {
      entries[i].compression = PNG_TEXT_COMPRESSION_NONE;
      entries[i].key = const_cast<char*>(text[i].first.c_str());
      entries[i].text = const_cast<char*>(text[i].second.c_str());
    }
    if (!entries.empty()) png_set_text(png, info, entries.data(), static_cast<int>(entries.size()));
    png_write_info(png, info);

    const int bytes = image.bit_depth / 8;
    std::vector<png_byte> row(static_cast<std::size_t>(image.width) * bytes);
    for (int y = 0; y < image.height; ++y) {
      for (int x = 0; x < image.width; ++x) {
        const std::uint16_t v = image.pixels[static_cast<std::size_t>(y) * image.width + x];
        if (bytes == 1) {
          row[x] = static_cast<png_byte>(v);
        } else {
          row[2 * x] = static_cast<png_byte>(v >> 8);  // big-endian samples
          row[2 * x + 1] = static_cast<png_byte>(v & 0xff);
        }
      }
      png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
  } catch (const std::exception& e) {
    png_destroy_write_struct(&png, &info);
    throw std::runtime_error("png write failed for " + path.string() + ": " + e.what());
  }
  png_destroy_write_struct(&png, &info);
}

GrayImage read_png(const std::filesystem::path& path) {
  FilePtr file(std::fopen(path.c_str(), "rb"));
  if (!file) throw std::runtime_error("cannot open " + path.string());
  png_byte sig[8];
  if (std::fread(sig, 1, 8, file.get()) != 8 || png_sig_cmp(sig, 0, 8)) {
    throw std::runtime_error("not a PNG file: " + path.string());
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_error_handler,
                                           png_warning_handler);
  png_infop info = png_create_info_struct(png);
  GrayImage image;
  try {
    png_init_io(png, file.get());
    png_set_sig_bytes(png, 8);
    png_read_info(png, info);
    const int color = png_get_color_type(png, info);
    image.width = static_cast<int>(png_get_image_width(png, info));
    image.height = static_cast<int>(png_get_image_height(png, info));
    image.bit_depth = png_get_bit_depth(png, info);
    if (color != PNG_COLOR_TYPE_GRAY || (image.bit_depth != 8 && image.bit_depth != 16)) {
      throw std::runtime_error("expected 8- or 16-bit grayscale");
    }
    const int bytes = image.bit_depth / 8;
    std::vector<png_byte> row(png_get_rowbytes(png, info));
    image.pixels.resize(static_cast<std::size_t>(image.width) * image.height);
    for (int y = 0; y < image.height; ++y) {
      png_read_row(png, row.data(), nullptr);
      for (int x = 0; x < image.width; ++x) {
        image.pixels[static_cast<std::size_t>(y) * image.width + x] =
            bytes == 1 ? row[x] : static_cast<std::uint16_t>((row[2 * x] << 8) | row[2 * x + 1]);
      }
    }
    png_read_end(png, nullptr);
  } catch (const std::exception& e) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("png read failed for " + path.string() + ": " + e.what());
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return image;
}

GrayImage to_gray8(std::span<const double> values, int width, int height) {
  if (values.size() != static_cast<std::size_t>(width) * height) {
    throw std::invalid_argument("to_gray8: size mismatch");
  }
  GrayImage img{width, height, 8, std::vector<std::uint16_t>(values.size())};
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double v = std::clamp(values[i], 0.0, 1.0);
    img.pixels[i] = static_cast<std::uint16_t>(std::lround(v * 255.0));
  }
  return img;
}

GrayImage mosaic(const std::vector<GrayImage>& tiles, int cols, int pad, std::uint16_t pad_value) {
  if (tiles.empty() || cols <= 0) throw std::invalid_argument("mosaic: no tiles");
  const int tw = tiles.front().width, th = tiles.front().height;
  const int rows = static_cast<int>((tiles.size() + cols - 1) / cols);
  GrayImage out;
  out.width = cols * tw + (cols + 1) * pad;
  out.height = rows * th + (rows + 1) * pad;
  out.bit_depth = 8;
  out.pixels.assign(static_cast<std::size_t>(out.width) * out.height, pad_value);
  for (std::size_t t = 0; t < tiles.size(); ++t) {
    const auto& tile = tiles[t];
    if (tile.width != tw || tile.height != th) throw std::invalid_argument("mosaic: tile size mismatch");
    const int ox = pad + static_cast<int>(t % cols) * (tw + pad);
    const int oy = pad + static_cast<int>(t / cols) * (th + pad);
    for (int y = 0; y < th; ++y) {
      for (int x = 0; x < tw; ++x) {
        out.pixels[static_cast<std::size_t>(oy + y) * out.width + ox + x] =
            tile.pixels[static_cast<std::size_t>(y) * tw + x];
      }
    }
  }
  return out;
}

GrayImage plot_signal(std::span<const double> y, int width, int height) {
  GrayImage img{width, height, 8, std::vector<std::uint16_t>(static_cast<std::size_t>(width) * height, 255)};
  if (y.empty()) return img;
  double peak = 0.0;
  for (double v : y) peak = std::max(peak, std::abs(v));
  if (peak == 0.0) peak = 1.0;
  auto row_of = [&](double v) {
    const double r = (0.5 - 0.5 * v / peak) * (height - 1);
    return std::clamp(static_cast<int>(std::lround(r)), 0, height - 1);
  };
  const int mid = row_of(0.0);
  for (int x = 0; x < width; ++x) img.pixels[static_cast<std::size_t>(mid) * width + x] = 200;
  // Each column spans the min/max of the samples that fall into it.
  for (int x = 0; x < width; ++x) {
    const std::size_t a = y.size() * x / width;
    const std::size_t b = std::max(a + 1, y.size() * (x + 1) / width);
    double lo = y[a], hi = y[a];
    for (std::size_t i = a; i < b && i < y.size(); ++i) {
      lo = std::min(lo, y[i]);
      hi = std::max(hi, y[i]);
    }
    for (int r = row_of(hi); r <= row_of(lo); ++r) img.pixels[static_cast<std::size_t>(r) * width + x] = 0;
  }
  return img;
}

}  // namespace bv
