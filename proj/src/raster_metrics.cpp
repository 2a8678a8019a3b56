#include "heteroseg/raster_metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace heteroseg {

const BinaryMap& StructureMasks::get(Structure s) const {
  for (std::size_t i = 0; i < structures.size(); ++i)
    if (structures[i] == s) return maps[i];
  throw std::invalid_argument("no mask for " + std::string(to_string(s)));
}

BinaryMap& StructureMasks::get(Structure s) {
  return const_cast<BinaryMap&>(std::as_const(*this).get(s));
}

void fill_polygon(const std::vector<std::array<double, 2>>& v, BinaryMap& out) {
  const std::size_t n = v.size();
  if (n < 3) throw std::invalid_argument("polygon needs at least 3 vertices");
  std::vector<double> crossings;
  for (int row = 0; row < out.height; ++row) {
    const double y = row + 0.5;
    crossings.clear();
    for (std::size_t i = 0, j = n - 1; i < n; j = i++) {
      const auto& a = v[i];
      const auto& b = v[j];
      // Half-open in y: an edge spans rows with min(y) <= y < max(y).
      if ((a[1] > y) != (b[1] > y)) crossings.push_back((b[0] - a[0]) * (y - a[1]) / (b[1] - a[1]) + a[0]);
    }
    std::sort(crossings.begin(), crossings.end());
    // Spans [x_in, x_out): center x is inside when an odd number of crossings
    // lie at or left of it.
    for (std::size_t k = 0; k + 1 < crossings.size(); k += 2) {
      const int first = std::max(0, static_cast<int>(std::ceil(crossings[k] - 0.5)));
      const int last = std::min(out.width - 1, static_cast<int>(std::ceil(crossings[k + 1] - 0.5)) - 1);
      for (int col = first; col <= last; ++col) out.at(row, col) = 1;
    }
  }
}

StructureMasks fill_contours(const LandmarkSet& landmarks, const ContourTopology& topology, int height, int width) {
  if (!landmarks.layout) throw std::invalid_argument("landmark set without layout");
  StructureMasks masks;
  for (const auto& b : landmarks.layout->blocks()) {
    masks.structures.push_back(b.structure);
    BinaryMap map(height, width, 0);
    for (const auto& line : topology.polylines(b.structure)) {
      if (line.size() < 3) throw std::invalid_argument("polyline with fewer than 3 nodes");
      std::vector<std::array<double, 2>> verts;
      verts.reserve(line.size());
      for (int idx : line) {
        double x = std::clamp(landmarks.coords(idx, 0) * width, 0.0, static_cast<double>(width));
        double y = std::clamp(landmarks.coords(idx, 1) * height, 0.0, static_cast<double>(height));
        verts.push_back({x, y});
      }
      // Polylines of one structure are filled independently and unioned.
      BinaryMap part(height, width, 0);
      fill_polygon(verts, part);
      for (std::size_t i = 0; i < part.size(); ++i) map.data[i] |= part.data[i];
    }
    masks.maps.push_back(std::move(map));
  }
  return masks;
}

double dice(const BinaryMap& a, const BinaryMap& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("dice: shape mismatch");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a.data[i] != 0;
    const bool y = b.data[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

BinaryMap boundary_of(const BinaryMap& m) {
  BinaryMap out(m.height, m.width, 0);
  auto bg = [&](int r, int c) { return r < 0 || c < 0 || r >= m.height || c >= m.width || !m.at(r, c); };
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c) && (bg(r - 1, c) || bg(r + 1, c) || bg(r, c - 1) || bg(r, c + 1))) out.at(r, c) = 1;
  return out;
}

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Exact 1-D squared distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d, std::vector<int>& v, std::vector<double>& z) {
  const int n = static_cast<int>(f.size());
  int k = 0;
  v[0] = 0;
  z[0] = -kInf;
  z[1] = kInf;
  int first = 0;
  while (first < n && f[first] == kInf) ++first;
  if (first == n) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  v[0] = first;
  for (int q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    double s;
    while (true) {
      const int p = v[k];
      s = ((f[q] + double(q) * q) - (f[p] + double(p) * p)) / (2.0 * q - 2.0 * p);
      if (s <= z[k] && k > 0) {
        --k;
      } else {
        break;
      }
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere.
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (int q = 0; q < n; ++q) {
    while (z[k + 1] < q) ++k;
    const double dq = q - v[k];
    d[q] = dq * dq + f[v[k]];
  }
}

// Squared Euclidean distance from each pixel to the nearest set pixel.
std::vector<double> squared_edt(const BinaryMap& m) {
  const int h = m.height, w = m.width;
  std::vector<double> grid(static_cast<std::size_t>(h) * w);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = m.data[i] ? 0.0 : kInf;
  const int n = std::max(h, w);
  std::vector<double> f(n), d(n), z(n + 1);
  std::vector<int> v(n);
  for (int c = 0; c < w; ++c) {
    f.resize(h);
    d.resize(h);
    for (int r = 0; r < h; ++r) f[r] = grid[static_cast<std::size_t>(r) * w + c];
    edt_1d(f, d, v, z);
    for (int r = 0; r < h; ++r) grid[static_cast<std::size_t>(r) * w + c] = d[r];
  }
  for (int r = 0; r < h; ++r) {
    f.resize(w);
    d.resize(w);
    for (int c = 0; c < w; ++c) f[c] = grid[static_cast<std::size_t>(r) * w + c];
    edt_1d(f, d, v, z);
    for (int c = 0; c < w; ++c) grid[static_cast<std::size_t>(r) * w + c] = d[c];
  }
  return grid;
}

double directed_hausdorff_sq(const BinaryMap& from, const std::vector<double>& to_edt) {
  double worst = 0.0;
  for (std::size_t i = 0; i < from.size(); ++i)
    if (from.data[i]) worst = std::max(worst, to_edt[i]);
  return worst;
}

}  // namespace

std::optional<double> hausdorff(const BinaryMap& a, const BinaryMap& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("hausdorff: shape mismatch");
  const BinaryMap ba = boundary_of(a);
  const BinaryMap bb = boundary_of(b);
  auto any = [](const BinaryMap& m) { return std::any_of(m.data.begin(), m.data.end(), [](auto v) { return v; }); };
  if (!any(ba) || !any(bb)) return std::nullopt;
  const double d2 = std::max(directed_hausdorff_sq(ba, squared_edt(bb)), directed_hausdorff_sq(bb, squared_edt(ba)));
  return std::sqrt(d2);
}

double landmark_mse(const LandmarkSet& pred, const LandmarkSet& gt, Structure structure, int height, int width) {
  if (!pred.layout || !gt.layout || !(*pred.layout == *gt.layout))
    throw std::invalid_argument("landmark_mse: layouts differ");
  if (!gt.layout->contains(structure))
    throw std::invalid_argument("landmark_mse: structure missing from ground truth");
  Eigen::MatrixX2d diff = pred.rows(structure) - gt.rows(structure);
  diff.col(0) *= width;
  diff.col(1) *= height;
  if (!diff.allFinite()) throw std::invalid_argument("landmark_mse: ground truth rows unavailable");
  return diff.squaredNorm() / static_cast<double>(diff.size());
}

StructureMasks decode_pixel_prediction(const std::vector<Image>& scores, PixelMode mode,
                                       const std::vector<Structure>& structures) {
  const std::size_t expected = structures.size() + (mode == PixelMode::kMulticlass ? 1 : 0);
  if (scores.size() != expected)
    throw std::invalid_argument("decode_pixel_prediction: expected " + std::to_string(expected) + " channels, got " +
                                std::to_string(scores.size()));
  const int h = scores.front().height, w = scores.front().width;
  StructureMasks out;
  out.structures = structures;
  out.maps.assign(structures.size(), BinaryMap(h, w, 0));
  if (mode == PixelMode::kMultilabelHT) {
    for (std::size_t s = 0; s < structures.size(); ++s)
      for (std::size_t i = 0; i < scores[s].size(); ++i) out.maps[s].data[i] = scores[s].data[i] >= 0.5f;
    return out;
  }
  for (std::size_t i = 0; i < scores.front().size(); ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < scores.size(); ++c)
      if (scores[c].data[i] > scores[best].data[i]) best = c;
    if (best > 0) out.maps[best - 1].data[i] = 1;
  }
  return out;
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "";
  std::ostringstream os;
  os << std::setprecision(6) << *v;
  return os.str();
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

std::optional<double> parse_opt(const std::string& s) {
  if (s.empty()) return std::nullopt;
  return std::stod(s);
}

}  // namespace

void MetricReport::write_csv(std::ostream& os) const {
  os << "model,setting,center,structure,mse,dice,hd\n";
  for (const auto& r : rows)
    os << r.model << ',' << r.setting << ',' << r.center << ',' << r.structure << ',' << fmt_opt(r.mse) << ','
       << fmt_opt(r.dice) << ',' << fmt_opt(r.hd) << '\n';
}

void MetricReport::write_combined_csv(std::ostream& os) const {
  os << "model,setting,center,structure,mse,dice,hd,experiment,removed\n";
  for (const auto& r : rows)
    os << r.model << ',' << r.setting << ',' << r.center << ',' << r.structure << ',' << fmt_opt(r.mse) << ','
       << fmt_opt(r.dice) << ',' << fmt_opt(r.hd) << ',' << r.experiment << ',' << (r.removed ? 1 : 0) << '\n';
}

void MetricReport::write_markdown(std::ostream& os) const {
  const bool combined = std::any_of(rows.begin(), rows.end(), [](const auto& r) { return !r.experiment.empty(); });
  os << "| model | setting | center | structure | MSE | Dice | HD |" << (combined ? " experiment | removed |" : "")
     << '\n';
  os << "|---|---|---|---|---|---|---|" << (combined ? "---|---|" : "") << '\n';
  auto cell = [](const std::optional<double>& v) { return v ? fmt_opt(v) : std::string("-"); };
  for (const auto& r : rows) {
    os << "| " << r.model << " | " << r.setting << " | " << r.center << " | " << r.structure << " | " << cell(r.mse)
       << " | " << cell(r.dice) << " | " << cell(r.hd) << " |";
    if (combined) os << ' ' << (r.experiment.empty() ? "-" : r.experiment) << " | " << (r.removed ? "yes" : "") << " |";
    os << '\n';
  }
}

MetricReport MetricReport::read_csv(std::istream& is) {
  MetricReport report;
  std::string line;
  if (!std::getline(is, line)) throw std::invalid_argument("empty metric report");
  const auto header = split_csv_line(line);
  if (header.size() < 7 || header[0] != "model" || header[6] != "hd")
    throw std::invalid_argument("unexpected metric report header: " + line);
  const bool combined = header.size() >= 9;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    auto cells = split_csv_line(line);
    cells.resize(header.size());
    MetricRow r{cells[0], cells[1], cells[2], cells[3], parse_opt(cells[4]), parse_opt(cells[5]), parse_opt(cells[6])};
    if (combined) {
      r.experiment = cells[7];
      r.removed = cells[8] == "1";
    }
    report.rows.push_back(std::move(r));
  }
  return report;
}

const MetricRow* MetricReport::find(const std::string& center, const std::string& structure) const {
  for (const auto& r : rows)
    if (r.center == center && r.structure == structure) return &r;
  return nullptr;
}

}  // namespace heteroseg
