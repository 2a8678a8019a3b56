#pragma once

#include <array>
#include <bitset>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace heteroseg {

enum class Structure : int { kLungs = 0, kHeart = 1, kClavicles = 2 };

inline constexpr std::array<Structure, 3> kAllStructures = {Structure::kLungs, Structure::kHeart,
                                                            Structure::kClavicles};

std::string_view to_string(Structure s);
std::string_view short_name(Structure s);  // "L", "H", "C"
// Accepts "LUNGS"/"L", "HEART"/"H", "CLAVICLES"/"C" (case-insensitive).
Structure parse_structure(std::string_view name);

// Subset of structures annotated for a sample or a center.
class LabelAvailability {
 public:
  LabelAvailability() = default;
  LabelAvailability(std::initializer_list<Structure> structures);
  static LabelAvailability all();
  static LabelAvailability from_names(const std::vector<std::string>& names);

  bool contains(Structure s) const { return bits_.test(static_cast<int>(s)); }
  void insert(Structure s) { bits_.set(static_cast<int>(s)); }
  void erase(Structure s) { bits_.reset(static_cast<int>(s)); }
  bool empty() const { return bits_.none(); }
  std::size_t size() const { return bits_.count(); }
  bool includes(const LabelAvailability& other) const { return (bits_ & other.bits_) == other.bits_; }

  LabelAvailability operator|(const LabelAvailability& o) const;
  LabelAvailability operator&(const LabelAvailability& o) const;
  bool operator==(const LabelAvailability& o) const { return bits_ == o.bits_; }

  // Canonical order: LUNGS, HEART, CLAVICLES.
  std::vector<Structure> list() const;
  std::vector<std::string> names() const;
  std::string short_string() const;  // e.g. "LH"

 private:
  std::bitset<3> bits_;
};

struct StructureBlock {
  Structure structure;
  int node_count;
  int offset;
};

// Ordered structure blocks over a fixed node numbering [0, total_nodes).
class StructureLayout {
 public:
  const std::vector<StructureBlock>& blocks() const { return blocks_; }
  int total_nodes() const { return total_nodes_; }
  bool contains(Structure s) const;
  const StructureBlock& block(Structure s) const;  // throws if absent
  std::pair<int, int> range(Structure s) const;    // [begin, end)
  Structure structure_of(int node) const;
  int structure_index(Structure s) const;  // position of the block
  std::vector<Structure> structures() const;
  LabelAvailability as_availability() const;
  bool operator==(const StructureLayout& o) const;

 private:
  friend StructureLayout build_layout(const std::vector<std::pair<std::string, int>>& counts);
  std::vector<StructureBlock> blocks_;
  int total_nodes_ = 0;
};

StructureLayout build_layout(const std::vector<std::pair<std::string, int>>& counts);
StructureLayout build_layout(const std::map<Structure, int>& counts);

// D x 2 node coordinates, normalized to the image frame.
struct LandmarkSet {
  std::shared_ptr<const StructureLayout> layout;
  Eigen::MatrixX2d coords;

  LandmarkSet() = default;
  LandmarkSet(std::shared_ptr<const StructureLayout> l, Eigen::MatrixX2d c);

  Eigen::MatrixX2d rows(Structure s) const;
  bool finite() const;
};

std::vector<bool> availability_mask(const StructureLayout& layout, const LabelAvailability& avail);

using PolylineSpec = std::map<Structure, std::vector<std::vector<int>>>;

class ContourTopology {
 public:
  std::shared_ptr<const StructureLayout> layout() const { return layout_; }
  const PolylineSpec& polylines() const { return polylines_; }
  const std::vector<std::vector<int>>& polylines(Structure s) const;
  // Symmetric 0/1 adjacency over all nodes.
  const Eigen::MatrixXd& adjacency() const { return adjacency_; }
  // 2 L / lambda_max - I with L = I - D^-1/2 A D^-1/2; spectrum lies in [-1, 1].
  const Eigen::MatrixXd& scaled_laplacian() const { return scaled_laplacian_; }

 private:
  friend ContourTopology build_contour_adjacency(std::shared_ptr<const StructureLayout>, const PolylineSpec&);
  std::shared_ptr<const StructureLayout> layout_;
  PolylineSpec polylines_;
  Eigen::MatrixXd adjacency_;
  Eigen::MatrixXd scaled_laplacian_;
};

ContourTopology build_contour_adjacency(std::shared_ptr<const StructureLayout> layout,
                                        const PolylineSpec& polylines);

// Layout used by the synthetic generator: lungs 2x20, heart 20, clavicles 2x8.
ContourTopology default_synthetic_topology();
// Same node counts, truncated to the first `n_structures` blocks.
ContourTopology truncate_topology(const ContourTopology& topology, const LabelAvailability& keep);

// {"blocks":[{"structure":"LUNGS","nodes":40,"polylines":[[0,...],[...]]}, ...]}
nlohmann::json topology_to_json(const ContourTopology& topology);
ContourTopology topology_from_json(const nlohmann::json& doc);

}  // namespace heteroseg
