#include "heteroseg/image_io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>

#include <png.h>

namespace heteroseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

FilePtr open_file(const std::filesystem::path& path, const char* mode) {
  FilePtr f(std::fopen(path.c_str(), mode));
  if (!f) throw DataError("cannot open " + path.string());
  return f;
}

[[noreturn]] void png_fail(png_structp, png_const_charp msg) { throw DataError(std::string("png: ") + msg); }
void png_warn(png_structp, png_const_charp) {}

void write_png(const std::filesystem::path& path, int width, int height, int bit_depth, int color_type,
               const std::vector<png_bytep>& rows) {
  auto f = open_file(path, "wb");
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw DataError("png: cannot create write struct");
  png_infop info = png_create_info_struct(png);
  try {
    png_init_io(png, f.get());
    png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
                 PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, const_cast<png_bytepp>(rows.data()));
    png_write_end(png, nullptr);
  } catch (...) {
    png_destroy_write_struct(&png, &info);
    throw;
  }
  png_destroy_write_struct(&png, &info);
}

}  // namespace

Image read_png_gray(const std::filesystem::path& path) {
  auto f = open_file(path, "rb");
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, png_fail, png_warn);
  if (!png) throw DataError("png: cannot create read struct");
  png_infop info = png_create_info_struct(png);
  Image out;
  try {
    png_init_io(png, f.get());
    png_read_png(png, info, PNG_TRANSFORM_EXPAND | PNG_TRANSFORM_STRIP_ALPHA | PNG_TRANSFORM_PACKING, nullptr);
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int depth = png_get_bit_depth(png, info);
    const int channels = png_get_channels(png, info);
    png_bytepp rows = png_get_rows(png, info);
    out = Image(h, w, 0.f);
    const double scale = depth == 16 ? 65535.0 : 255.0;
    for (int r = 0; r < h; ++r) {
      for (int c = 0; c < w; ++c) {
        double acc = 0;
        for (int k = 0; k < channels; ++k) {
          const std::size_t i = static_cast<std::size_t>(c) * channels + k;
          acc += depth == 16 ? (rows[r][2 * i] << 8 | rows[r][2 * i + 1]) : rows[r][i];
        }
        out.at(r, c) = static_cast<float>(acc / channels / scale);
      }
    }
  } catch (...) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw;
  }
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

void write_png_gray16(const std::filesystem::path& path, const Image& image) {
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(image.height) * image.width * 2);
  for (std::size_t i = 0; i < image.size(); ++i) {
    const auto v = static_cast<std::uint16_t>(std::lround(std::clamp(image.data[i], 0.f, 1.f) * 65535.0));
    buf[2 * i] = static_cast<std::uint8_t>(v >> 8);
    buf[2 * i + 1] = static_cast<std::uint8_t>(v & 0xff);
  }
  std::vector<png_bytep> rows(image.height);
  for (int r = 0; r < image.height; ++r) rows[r] = buf.data() + static_cast<std::size_t>(r) * image.width * 2;
  write_png(path, image.width, image.height, 16, PNG_COLOR_TYPE_GRAY, rows);
}

void RgbImage::set(int row, int col, std::array<std::uint8_t, 3> rgb) {
  if (row < 0 || col < 0 || row >= height || col >= width) return;
  auto* p = &data[(static_cast<std::size_t>(row) * width + col) * 3];
  p[0] = rgb[0];
  p[1] = rgb[1];
  p[2] = rgb[2];
}

void RgbImage::blend(int row, int col, std::array<std::uint8_t, 3> rgb, float alpha) {
  if (row < 0 || col < 0 || row >= height || col >= width) return;
  auto* p = &data[(static_cast<std::size_t>(row) * width + col) * 3];
  for (int k = 0; k < 3; ++k) p[k] = static_cast<std::uint8_t>(std::lround((1 - alpha) * p[k] + alpha * rgb[k]));
}

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image) {
  std::vector<png_bytep> rows(image.height);
  for (int r = 0; r < image.height; ++r)
    rows[r] = const_cast<png_bytep>(image.data.data() + static_cast<std::size_t>(r) * image.width * 3);
  write_png(path, image.width, image.height, 8, PNG_COLOR_TYPE_RGB, rows);
}

Image resize_bilinear(const Image& src, int height, int width) {
  if (src.height == height && src.width == width) return src;
  Image out(height, width, 0.f);
  const double sy = static_cast<double>(src.height) / height;
  const double sx = static_cast<double>(src.width) / width;
  for (int r = 0; r < height; ++r) {
    const double y = std::clamp((r + 0.5) * sy - 0.5, 0.0, src.height - 1.0);
    const int y0 = static_cast<int>(y);
    const int y1 = std::min(y0 + 1, src.height - 1);
    const double fy = y - y0;
    for (int c = 0; c < width; ++c) {
      const double x = std::clamp((c + 0.5) * sx - 0.5, 0.0, src.width - 1.0);
      const int x0 = static_cast<int>(x);
      const int x1 = std::min(x0 + 1, src.width - 1);
      const double fx = x - x0;
      const double top = src.at(y0, x0) * (1 - fx) + src.at(y0, x1) * fx;
      const double bot = src.at(y1, x0) * (1 - fx) + src.at(y1, x1) * fx;
      out.at(r, c) = static_cast<float>(top * (1 - fy) + bot * fy);
    }
  }
  return out;
}

}  // namespace heteroseg
