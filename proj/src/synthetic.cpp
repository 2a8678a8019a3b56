#include "heteroseg/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace heteroseg {

namespace {

using Polygon = std::vector<std::array<double, 2>>;

constexpr double kBodyLevel = 0.45;
constexpr double kLungLevel = 0.15;
constexpr double kHeartLevel = 0.55;
constexpr double kClavicleLevel = 0.65;
constexpr int kSupersample = 4;

Polygon ellipse(double cx, double cy, double rx, double ry, int n) {
  Polygon p;
  p.reserve(n);
  for (int k = 0; k < n; ++k) {
    // Node 0 sits at the top; nodes advance clockwise on screen.
    const double t = -M_PI / 2 + 2 * M_PI * k / n;
    p.push_back({cx + rx * std::cos(t), cy + ry * std::sin(t)});
  }
  return p;
}

// Rotated rectangle: the four corners plus the remaining nodes spread evenly
// along the two long sides.
Polygon bar(double cx, double cy, double length, double thickness, double angle, int n) {
  if (n < 4) throw std::invalid_argument("clavicle polyline needs at least 4 nodes");
  const int extra = n - 4;
  const int top_extra = (extra + 1) / 2, bottom_extra = extra / 2;
  const double ux = std::cos(angle), uy = std::sin(angle);
  const double vx = -uy, vy = ux;
  auto at = [&](double along, double across) {
    return std::array<double, 2>{cx + along * ux + across * vx, cy + along * uy + across * vy};
  };
  const double hl = length / 2, ht = thickness / 2;
  Polygon p;
  p.push_back(at(-hl, -ht));
  for (int i = 1; i <= top_extra; ++i) p.push_back(at(-hl + length * i / (top_extra + 1), -ht));
  p.push_back(at(hl, -ht));
  p.push_back(at(hl, ht));
  for (int i = 1; i <= bottom_extra; ++i) p.push_back(at(hl - length * i / (bottom_extra + 1), ht));
  p.push_back(at(-hl, ht));
  return p;
}

double cross(const std::array<double, 2>& o, const std::array<double, 2>& a, const std::array<double, 2>& b) {
  return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

bool segments_intersect(const std::array<double, 2>& a, const std::array<double, 2>& b,
                        const std::array<double, 2>& c, const std::array<double, 2>& d) {
  const double d1 = cross(c, d, a), d2 = cross(c, d, b), d3 = cross(a, b, c), d4 = cross(a, b, d);
  return ((d1 > 0) != (d2 > 0)) && ((d3 > 0) != (d4 > 0)) && d1 != 0 && d2 != 0 && d3 != 0 && d4 != 0;
}

void check_polygon(const Polygon& p, const std::string& what) {
  const std::size_t n = p.size();
  double area2 = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& a = p[i];
    const auto& b = p[(i + 1) % n];
    area2 += a[0] * b[1] - b[0] * a[1];
    if (!(a[0] >= 0 && a[0] <= 1 && a[1] >= 0 && a[1] <= 1))
      throw std::invalid_argument(what + " leaves the image frame");
  }
  if (std::abs(area2) < 1e-9) throw std::invalid_argument(what + " has zero area");
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 2; j < n; ++j) {
      if (i == 0 && j == n - 1) continue;
      if (segments_intersect(p[i], p[(i + 1) % n], p[j], p[(j + 1) % n]))
        throw std::invalid_argument(what + " is self-intersecting");
    }
}

bool inside(const Polygon& v, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++)
    if (((v[i][1] > y) != (v[j][1] > y)) && (x < (v[j][0] - v[i][0]) * (y - v[i][1]) / (v[j][1] - v[i][1]) + v[i][0]))
      in = !in;
  return in;
}

// Fractional pixel coverage from a supersampled scanline fill.
Image coverage(const Polygon& normalized, int size) {
  const int hi = size * kSupersample;
  Polygon px;
  for (const auto& v : normalized) px.push_back({v[0] * hi, v[1] * hi});
  BinaryMap fine(hi, hi, 0);
  fill_polygon(px, fine);
  Image cov(size, size, 0.f);
  const float w = 1.f / (kSupersample * kSupersample);
  for (int r = 0; r < hi; ++r)
    for (int c = 0; c < hi; ++c)
      if (fine.at(r, c)) cov.at(r / kSupersample, c / kSupersample) += w;
  return cov;
}

void paint(Image& canvas, const Polygon& shape, float level) {
  const Image cov = coverage(shape, canvas.height);
  for (std::size_t i = 0; i < canvas.size(); ++i) canvas.data[i] += cov.data[i] * (level - canvas.data[i]);
}

BinaryMap membership(const std::vector<Polygon>& shapes, int size) {
  BinaryMap m(size, size, 0);
  for (const auto& s : shapes) {
    double x0 = 1, x1 = 0, y0 = 1, y1 = 0;
    for (const auto& v : s) {
      x0 = std::min(x0, v[0]);
      x1 = std::max(x1, v[0]);
      y0 = std::min(y0, v[1]);
      y1 = std::max(y1, v[1]);
    }
    const int r0 = std::max(0, static_cast<int>(std::floor(y0 * size)) - 1);
    const int r1 = std::min(size - 1, static_cast<int>(std::ceil(y1 * size)) + 1);
    const int c0 = std::max(0, static_cast<int>(std::floor(x0 * size)) - 1);
    const int c1 = std::min(size - 1, static_cast<int>(std::ceil(x1 * size)) + 1);
    Polygon px;
    for (const auto& v : s) px.push_back({v[0] * size, v[1] * size});
    for (int r = r0; r <= r1; ++r)
      for (int c = c0; c <= c1; ++c)
        if (inside(px, c + 0.5, r + 0.5)) m.at(r, c) = 1;
  }
  return m;
}

struct Scene {
  std::vector<Polygon> lungs, heart, clavicles;
};

std::vector<int> polyline_sizes(const ContourTopology& topo, Structure s) {
  std::vector<int> out;
  for (const auto& l : topo.polylines(s)) out.push_back(static_cast<int>(l.size()));
  return out;
}

Scene draw_scene(const SyntheticCenterSpec& spec, const ContourTopology& topo, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const auto& layout = *topo.layout();

  const double s = uniform(spec.scale_range[0], spec.scale_range[1]);
  const double dx = uniform(-spec.shift, spec.shift), dy = uniform(-spec.shift, spec.shift);
  Scene scene;

  const auto lung_sizes = polyline_sizes(topo, Structure::kLungs);
  if (lung_sizes.size() != 2) throw std::invalid_argument("synthetic layout needs two lung polylines");
  const double cy = 0.52 + dy;
  std::array<double, 2> lung_top{};
  std::array<double, 2> lung_cx{0.31 + dx, 0.69 + dx};
  for (int side = 0; side < 2; ++side) {
    const double rx = 0.12 * s * uniform(0.9, 1.1);
    const double ry = 0.25 * s * uniform(0.9, 1.1);
    const double ccy = cy + uniform(-0.01, 0.01);
    lung_top[side] = ccy - ry;
    scene.lungs.push_back(ellipse(lung_cx[side], ccy, rx, ry, lung_sizes[side]));
  }

  if (layout.contains(Structure::kHeart)) {
    const auto heart_sizes = polyline_sizes(topo, Structure::kHeart);
    if (heart_sizes.size() != 1) throw std::invalid_argument("synthetic layout needs one heart polyline");
    const double hs = s * uniform(spec.heart_scale_range[0], spec.heart_scale_range[1]);
    scene.heart.push_back(ellipse(0.58 + dx, cy + 0.16 * s, 0.13 * hs, 0.10 * hs, heart_sizes[0]));
  }

  if (layout.contains(Structure::kClavicles)) {
    const auto clav_sizes = polyline_sizes(topo, Structure::kClavicles);
    if (clav_sizes.size() != 2) throw std::invalid_argument("synthetic layout needs two clavicle polylines");
    for (int side = 0; side < 2; ++side) {
      // Medial end tilts down towards the image midline.
      const double tilt = uniform(0.10, 0.25) * (side == 0 ? 1.0 : -1.0);
      const double length = 0.30 * s * uniform(0.9, 1.1);
      const double mx = lung_cx[side] + (side == 0 ? 0.02 : -0.02);
      scene.clavicles.push_back(bar(mx, lung_top[side] + 0.03, length, 0.08, tilt, clav_sizes[side]));
    }
  }
  return scene;
}

}  // namespace

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc) {
  SyntheticSpec spec;
  spec.image_size = doc.value("image_size", 64);
  spec.seed = doc.value("seed", std::uint64_t{1});
  if (!doc.contains("centers") || doc["centers"].empty())
    throw std::invalid_argument("synthetic spec lists no centers");
  for (const auto& c : doc["centers"]) {
    SyntheticCenterSpec cs;
    cs.id = c.at("id").get<std::string>();
    cs.n_samples = c.at("n_samples").get<int>();
    cs.availability = LabelAvailability::from_names(c.at("availability").get<std::vector<std::string>>());
    cs.brightness = c.value("brightness", cs.brightness);
    cs.contrast = c.value("contrast", cs.contrast);
    cs.noise = c.value("noise", cs.noise);
    cs.scale_range = c.value("scale_range", cs.scale_range);
    cs.heart_scale_range = c.value("heart_scale_range", cs.heart_scale_range);
    cs.shift = c.value("shift", cs.shift);
    spec.centers.push_back(std::move(cs));
  }
  return spec;
}

nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec) {
  nlohmann::json centers = nlohmann::json::array();
  for (const auto& c : spec.centers) {
    centers.push_back({{"id", c.id},
                       {"n_samples", c.n_samples},
                       {"availability", c.availability.names()},
                       {"brightness", c.brightness},
                       {"contrast", c.contrast},
                       {"noise", c.noise},
                       {"scale_range", c.scale_range},
                       {"heart_scale_range", c.heart_scale_range},
                       {"shift", c.shift}});
  }
  return {{"image_size", spec.image_size}, {"seed", spec.seed}, {"centers", centers}};
}

SyntheticSpec default_synthetic_spec(int samples_per_center, std::uint64_t seed) {
  SyntheticSpec spec;
  spec.seed = seed;
  auto center = [&](std::string id, LabelAvailability a, double b, double c, double n, std::array<double, 2> scale) {
    SyntheticCenterSpec cs;
    cs.id = std::move(id);
    cs.n_samples = samples_per_center;
    cs.availability = a;
    cs.brightness = b;
    cs.contrast = c;
    cs.noise = n;
    cs.scale_range = scale;
    return cs;
  };
  using S = Structure;
  spec.centers.push_back(center("SYNTH_L", {S::kLungs}, 0.10, 0.9, 0.05, {0.80, 0.92}));
  spec.centers.push_back(center("SYNTH_LH", {S::kLungs, S::kHeart}, 0.20, 0.8, 0.02, {0.80, 0.92}));
  spec.centers.push_back(center("SYNTH_LHC", LabelAvailability::all(), 0.0, 1.0, 0.03, {0.95, 1.05}));
  return spec;
}

std::vector<CenterDataset> generate_synthetic_centers(const SyntheticSpec& spec, const ContourTopology& topology) {
  if (spec.centers.empty()) throw std::invalid_argument("synthetic spec lists no centers");
  if (spec.image_size < 8) throw std::invalid_argument("synthetic image size too small");
  const auto layout = topology.layout();
  const int size = spec.image_size;
  std::vector<CenterDataset> out;
  for (std::size_t ci = 0; ci < spec.centers.size(); ++ci) {
    const auto& cs = spec.centers[ci];
    if (cs.n_samples < 1) throw std::invalid_argument("center " + cs.id + " needs at least one sample");
    if (cs.availability.empty()) throw std::invalid_argument("center " + cs.id + " has empty availability");
    if (!(cs.scale_range[0] > 0 && cs.scale_range[0] <= cs.scale_range[1]) ||
        !(cs.heart_scale_range[0] > 0 && cs.heart_scale_range[0] <= cs.heart_scale_range[1]) || cs.noise < 0 ||
        cs.shift < 0)
      throw std::invalid_argument("center " + cs.id + " has invalid shape or intensity parameters");
    for (Structure s : cs.availability.list())
      if (!layout->contains(s))
        throw std::invalid_argument("center " + cs.id + " annotates a structure absent from the layout");

    std::mt19937_64 rng(spec.seed * 1000003ULL + ci);
    std::normal_distribution<double> gauss(0.0, 1.0);
    CenterDataset center{cs.id, cs.availability, {}};
    for (int n = 0; n < cs.n_samples; ++n) {
      const Scene scene = draw_scene(cs, topology, rng);

      SampleRecord rec;
      rec.sample_id = cs.id + "_" + std::to_string(n);
      rec.center_id = cs.id;
      rec.availability = cs.availability;
      rec.ground_truth = layout->as_availability();
      Eigen::MatrixX2d coords(layout->total_nodes(), 2);
      StructureMasks masks;
      auto place = [&](Structure s, const std::vector<Polygon>& shapes) {
        const auto& lines = topology.polylines(s);
        for (std::size_t k = 0; k < lines.size(); ++k) {
          check_polygon(shapes[k], cs.id + " " + std::string(to_string(s)) + " contour");
          for (std::size_t j = 0; j < lines[k].size(); ++j)
            coords.row(lines[k][j]) << shapes[k][j][0], shapes[k][j][1];
        }
        masks.structures.push_back(s);
        masks.maps.push_back(membership(shapes, size));
      };
      place(Structure::kLungs, scene.lungs);
      if (layout->contains(Structure::kHeart)) place(Structure::kHeart, scene.heart);
      if (layout->contains(Structure::kClavicles)) place(Structure::kClavicles, scene.clavicles);
      rec.landmarks = LandmarkSet(layout, coords);
      rec.masks = std::move(masks);

      Image base(size, size, static_cast<float>(kBodyLevel));
      for (const auto& p : scene.lungs) paint(base, p, kLungLevel);
      for (const auto& p : scene.heart) paint(base, p, kHeartLevel);
      for (const auto& p : scene.clavicles) paint(base, p, kClavicleLevel);
      rec.image = Image(size, size, 0.f);
      for (std::size_t i = 0; i < base.size(); ++i) {
        const double v = cs.brightness + cs.contrast * base.data[i] + cs.noise * gauss(rng);
        rec.image.data[i] = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
      center.records.push_back(std::move(rec));
    }
    out.push_back(std::move(center));
  }
  return out;
}

}  // namespace heteroseg
