#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace heteroseg {

// Error categories surfaced by the CLI as distinct exit codes.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Row-major 2-D raster. Pixel (row, col) has its center at (col + 0.5, row + 0.5)
// in pixel units.
template <typename T>
struct Grid {
  int height = 0;
  int width = 0;
  std::vector<T> data;

  Grid() = default;
  Grid(int h, int w, T fill = T{}) : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

  T& at(int row, int col) { return data[static_cast<std::size_t>(row) * width + col]; }
  const T& at(int row, int col) const { return data[static_cast<std::size_t>(row) * width + col]; }
  bool same_shape(const Grid& other) const { return height == other.height && width == other.width; }
  std::size_t size() const { return data.size(); }

  friend bool operator==(const Grid&, const Grid&) = default;
};

using Image = Grid<float>;
using BinaryMap = Grid<std::uint8_t>;

}  // namespace heteroseg
