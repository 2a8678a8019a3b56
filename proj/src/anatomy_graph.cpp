#include "heteroseg/anatomy_graph.hpp"

#include <algorithm>
#include <cctype>
#include <numeric>
#include <set>
#include <stdexcept>

#include <Eigen/Eigenvalues>

namespace heteroseg {

std::string_view to_string(Structure s) {
  switch (s) {
    case Structure::kLungs: return "LUNGS";
    case Structure::kHeart: return "HEART";
    case Structure::kClavicles: return "CLAVICLES";
  }
  return "?";
}

std::string_view short_name(Structure s) {
  switch (s) {
    case Structure::kLungs: return "L";
    case Structure::kHeart: return "H";
    case Structure::kClavicles: return "C";
  }
  return "?";
}

Structure parse_structure(std::string_view name) {
  std::string upper(name);
  std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char c) { return std::toupper(c); });
  if (upper == "LUNGS" || upper == "L") return Structure::kLungs;
  if (upper == "HEART" || upper == "H") return Structure::kHeart;
  if (upper == "CLAVICLES" || upper == "C") return Structure::kClavicles;
  throw std::invalid_argument("unknown structure id '" + std::string(name) + "'");
}

LabelAvailability::LabelAvailability(std::initializer_list<Structure> structures) {
  for (Structure s : structures) insert(s);
}

LabelAvailability LabelAvailability::all() {
  return {Structure::kLungs, Structure::kHeart, Structure::kClavicles};
}

LabelAvailability LabelAvailability::from_names(const std::vector<std::string>& names) {
  LabelAvailability a;
  for (const auto& n : names) a.insert(parse_structure(n));
  return a;
}

LabelAvailability LabelAvailability::operator|(const LabelAvailability& o) const {
  LabelAvailability r;
  r.bits_ = bits_ | o.bits_;
  return r;
}

LabelAvailability LabelAvailability::operator&(const LabelAvailability& o) const {
  LabelAvailability r;
  r.bits_ = bits_ & o.bits_;
  return r;
}

std::vector<Structure> LabelAvailability::list() const {
  std::vector<Structure> out;
  for (Structure s : kAllStructures)
    if (contains(s)) out.push_back(s);
  return out;
}

std::vector<std::string> LabelAvailability::names() const {
  std::vector<std::string> out;
  for (Structure s : list()) out.emplace_back(to_string(s));
  return out;
}

std::string LabelAvailability::short_string() const {
  std::string out;
  for (Structure s : list()) out += short_name(s);
  return out;
}

bool StructureLayout::contains(Structure s) const {
  return std::any_of(blocks_.begin(), blocks_.end(), [s](const auto& b) { return b.structure == s; });
}

const StructureBlock& StructureLayout::block(Structure s) const {
  for (const auto& b : blocks_)
    if (b.structure == s) return b;
  throw std::invalid_argument("structure " + std::string(to_string(s)) + " not in layout");
}

std::pair<int, int> StructureLayout::range(Structure s) const {
  const auto& b = block(s);
  return {b.offset, b.offset + b.node_count};
}

Structure StructureLayout::structure_of(int node) const {
  for (const auto& b : blocks_)
    if (node >= b.offset && node < b.offset + b.node_count) return b.structure;
  throw std::out_of_range("node index " + std::to_string(node) + " outside layout");
}

int StructureLayout::structure_index(Structure s) const {
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].structure == s) return static_cast<int>(i);
  throw std::invalid_argument("structure " + std::string(to_string(s)) + " not in layout");
}

std::vector<Structure> StructureLayout::structures() const {
  std::vector<Structure> out;
  for (const auto& b : blocks_) out.push_back(b.structure);
  return out;
}

LabelAvailability StructureLayout::as_availability() const {
  LabelAvailability a;
  for (const auto& b : blocks_) a.insert(b.structure);
  return a;
}

bool StructureLayout::operator==(const StructureLayout& o) const {
  if (blocks_.size() != o.blocks_.size()) return false;
  for (std::size_t i = 0; i < blocks_.size(); ++i)
    if (blocks_[i].structure != o.blocks_[i].structure || blocks_[i].node_count != o.blocks_[i].node_count)
      return false;
  return true;
}

StructureLayout build_layout(const std::vector<std::pair<std::string, int>>& counts) {
  if (counts.empty()) throw std::invalid_argument("layout needs at least one structure");
  std::map<Structure, int> by_structure;
  for (const auto& [name, count] : counts) {
    Structure s = parse_structure(name);
    if (count <= 0)
      throw std::invalid_argument("node count for " + std::string(to_string(s)) + " must be positive");
    if (!by_structure.emplace(s, count).second)
      throw std::invalid_argument("duplicate structure " + std::string(to_string(s)));
  }
  // Blocks must be a prefix of LUNGS, HEART, CLAVICLES.
  StructureLayout layout;
  int offset = 0;
  for (Structure s : kAllStructures) {
    auto it = by_structure.find(s);
    if (it == by_structure.end()) break;
    layout.blocks_.push_back({s, it->second, offset});
    offset += it->second;
  }
  if (layout.blocks_.size() != by_structure.size())
    throw std::invalid_argument("structures may only be omitted as a suffix of LUNGS, HEART, CLAVICLES");
  layout.total_nodes_ = offset;
  return layout;
}

StructureLayout build_layout(const std::map<Structure, int>& counts) {
  std::vector<std::pair<std::string, int>> named;
  for (const auto& [s, c] : counts) named.emplace_back(std::string(to_string(s)), c);
  return build_layout(named);
}

LandmarkSet::LandmarkSet(std::shared_ptr<const StructureLayout> l, Eigen::MatrixX2d c)
    : layout(std::move(l)), coords(std::move(c)) {
  if (!layout) throw std::invalid_argument("landmark set without layout");
  if (coords.rows() != layout->total_nodes())
    throw std::invalid_argument("landmark rows " + std::to_string(coords.rows()) + " != layout nodes " +
                                std::to_string(layout->total_nodes()));
}

Eigen::MatrixX2d LandmarkSet::rows(Structure s) const {
  auto [begin, end] = layout->range(s);
  return coords.middleRows(begin, end - begin);
}

bool LandmarkSet::finite() const { return coords.allFinite(); }

std::vector<bool> availability_mask(const StructureLayout& layout, const LabelAvailability& avail) {
  for (Structure s : avail.list())
    if (!layout.contains(s))
      throw std::invalid_argument("available structure " + std::string(to_string(s)) + " absent from layout");
  std::vector<bool> mask(layout.total_nodes(), false);
  for (const auto& b : layout.blocks())
    if (avail.contains(b.structure)) std::fill_n(mask.begin() + b.offset, b.node_count, true);
  return mask;
}

const std::vector<std::vector<int>>& ContourTopology::polylines(Structure s) const {
  auto it = polylines_.find(s);
  if (it == polylines_.end())
    throw std::invalid_argument("no polylines for " + std::string(to_string(s)));
  return it->second;
}

ContourTopology build_contour_adjacency(std::shared_ptr<const StructureLayout> layout,
                                        const PolylineSpec& polylines) {
  if (!layout) throw std::invalid_argument("topology without layout");
  const int n = layout->total_nodes();
  ContourTopology topo;
  topo.layout_ = layout;
  topo.adjacency_ = Eigen::MatrixXd::Zero(n, n);

  std::vector<int> seen(n, 0);
  for (const auto& [s, lines] : polylines) {
    if (!layout->contains(s))
      throw std::invalid_argument("polylines given for structure absent from layout: " + std::string(to_string(s)));
    auto [begin, end] = layout->range(s);
    for (const auto& line : lines) {
      if (line.size() < 3) throw std::invalid_argument("closed polyline needs at least 3 nodes");
      for (int idx : line) {
        if (idx < begin || idx >= end)
          throw std::invalid_argument("polyline node " + std::to_string(idx) + " crosses out of the " +
                                      std::string(to_string(s)) + " block");
        if (seen[idx]++) throw std::invalid_argument("node " + std::to_string(idx) + " used by two polylines");
      }
      for (std::size_t i = 0; i < line.size(); ++i) {
        int a = line[i];
        int b = line[(i + 1) % line.size()];
        topo.adjacency_(a, b) = 1.0;
        topo.adjacency_(b, a) = 1.0;
      }
    }
  }
  for (const auto& b : layout->blocks()) {
    if (!polylines.contains(b.structure))
      throw std::invalid_argument("missing polylines for " + std::string(to_string(b.structure)));
  }
  for (int i = 0; i < n; ++i)
    if (!seen[i]) throw std::invalid_argument("node " + std::to_string(i) + " not on any polyline");
  topo.polylines_ = polylines;

  Eigen::VectorXd inv_sqrt_deg = topo.adjacency_.rowwise().sum().cwiseSqrt().cwiseInverse();
  Eigen::MatrixXd laplacian = Eigen::MatrixXd::Identity(n, n) -
                              inv_sqrt_deg.asDiagonal() * topo.adjacency_ * inv_sqrt_deg.asDiagonal();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(laplacian, Eigen::EigenvaluesOnly);
  const double lambda_max = solver.eigenvalues().maxCoeff();
  topo.scaled_laplacian_ = (2.0 / lambda_max) * laplacian - Eigen::MatrixXd::Identity(n, n);
  return topo;
}

namespace {

std::vector<int> iota_range(int begin, int count) {
  std::vector<int> v(count);
  std::iota(v.begin(), v.end(), begin);
  return v;
}

}  // namespace

ContourTopology default_synthetic_topology() {
  auto layout = std::make_shared<const StructureLayout>(
      build_layout({{"LUNGS", 40}, {"HEART", 20}, {"CLAVICLES", 16}}));
  PolylineSpec lines;
  lines[Structure::kLungs] = {iota_range(0, 20), iota_range(20, 20)};
  lines[Structure::kHeart] = {iota_range(40, 20)};
  lines[Structure::kClavicles] = {iota_range(60, 8), iota_range(68, 8)};
  return build_contour_adjacency(layout, lines);
}

ContourTopology truncate_topology(const ContourTopology& topology, const LabelAvailability& keep) {
  std::vector<std::pair<std::string, int>> counts;
  PolylineSpec lines;
  for (const auto& b : topology.layout()->blocks()) {
    if (!keep.contains(b.structure)) continue;
    counts.emplace_back(std::string(to_string(b.structure)), b.node_count);
    lines[b.structure] = topology.polylines(b.structure);
  }
  auto layout = std::make_shared<const StructureLayout>(build_layout(counts));
  // Offsets are unchanged for prefix truncations, which build_layout enforces.
  return build_contour_adjacency(layout, lines);
}

nlohmann::json topology_to_json(const ContourTopology& topology) {
  nlohmann::json blocks = nlohmann::json::array();
  for (const auto& b : topology.layout()->blocks()) {
    blocks.push_back({{"structure", to_string(b.structure)},
                      {"nodes", b.node_count},
                      {"polylines", topology.polylines(b.structure)}});
  }
  return {{"blocks", blocks}};
}

ContourTopology topology_from_json(const nlohmann::json& doc) {
  if (!doc.contains("blocks") || !doc["blocks"].is_array())
    throw std::invalid_argument("layout document lacks a 'blocks' array");
  std::vector<std::pair<std::string, int>> counts;
  std::vector<std::pair<std::string, std::vector<std::vector<int>>>> raw_lines;
  for (const auto& b : doc["blocks"]) {
    auto name = b.at("structure").get<std::string>();
    counts.emplace_back(name, b.at("nodes").get<int>());
    raw_lines.emplace_back(name, b.at("polylines").get<std::vector<std::vector<int>>>());
  }
  auto layout = std::make_shared<const StructureLayout>(build_layout(counts));
  PolylineSpec lines;
  for (auto& [name, l] : raw_lines) lines[parse_structure(name)] = std::move(l);
  return build_contour_adjacency(layout, lines);
}

}  // namespace heteroseg
