#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "heteroseg/common.hpp"

namespace heteroseg {

// Grayscale read; colour inputs are averaged, values scaled to [0, 1].
Image read_png_gray(const std::filesystem::path& path);
// 16-bit grayscale write of values clamped to [0, 1].
void write_png_gray16(const std::filesystem::path& path, const Image& image);

struct RgbImage {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;  // interleaved RGB

  RgbImage() = default;
  RgbImage(int h, int w) : height(h), width(w), data(static_cast<std::size_t>(h) * w * 3, 0) {}
  void set(int row, int col, std::array<std::uint8_t, 3> rgb);
  void blend(int row, int col, std::array<std::uint8_t, 3> rgb, float alpha);
};

void write_png_rgb(const std::filesystem::path& path, const RgbImage& image);

// Bilinear resampling with clamp-to-edge.
Image resize_bilinear(const Image& src, int height, int width);

}  // namespace heteroseg
