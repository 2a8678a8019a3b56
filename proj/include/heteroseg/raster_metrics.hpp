#pragma once

#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "heteroseg/anatomy_graph.hpp"
#include "heteroseg/common.hpp"

namespace heteroseg {

// One independent binary map per layout structure, in layout block order.
// Maps may overlap.
struct StructureMasks {
  std::vector<Structure> structures;
  std::vector<BinaryMap> maps;

  const BinaryMap& get(Structure s) const;
  BinaryMap& get(Structure s);
};

// Even-odd fill of one closed polygon given in pixel units. A pixel is inside
// iff its center is; centers on a left or top edge count as inside.
void fill_polygon(const std::vector<std::array<double, 2>>& vertices, BinaryMap& out);

StructureMasks fill_contours(const LandmarkSet& landmarks, const ContourTopology& topology, int height, int width);

double dice(const BinaryMap& a, const BinaryMap& b);

// Symmetric Hausdorff distance between 4-connected boundary sets, in pixels.
// Empty input yields nullopt.
std::optional<double> hausdorff(const BinaryMap& a, const BinaryMap& b);

// Boundary = foreground pixels with at least one background (or out-of-frame)
// 4-neighbor.
BinaryMap boundary_of(const BinaryMap& m);

// Mean squared coordinate error over the structure's nodes, in pixel units of
// an evaluation frame of the given size.
double landmark_mse(const LandmarkSet& pred, const LandmarkSet& gt, Structure structure, int height, int width);

enum class PixelMode { kMulticlass, kMultilabelHT };

// MULTILABEL_HT: channel s holds the structure's sigmoid probability.
// MULTICLASS: channel 0 is background, channel s+1 the structure logit.
StructureMasks decode_pixel_prediction(const std::vector<Image>& scores, PixelMode mode,
                                       const std::vector<Structure>& structures);

struct MetricRow {
  std::string model;
  std::string setting;
  std::string center;
  std::string structure;
  std::optional<double> mse;
  std::optional<double> dice;
  std::optional<double> hd;
  std::string experiment;  // removal experiment tag, empty for plain runs
  bool removed = false;
};

struct MetricReport {
  std::vector<MetricRow> rows;

  // Columns: model,setting,center,structure,mse,dice,hd
  void write_csv(std::ostream& os) const;
  // Adds experiment,removed columns.
  void write_combined_csv(std::ostream& os) const;
  void write_markdown(std::ostream& os) const;
  static MetricReport read_csv(std::istream& is);

  const MetricRow* find(const std::string& center, const std::string& structure) const;
};

}  // namespace heteroseg
