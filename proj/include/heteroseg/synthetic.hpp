#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "heteroseg/anatomy_graph.hpp"
#include "heteroseg/data_pipeline.hpp"

namespace heteroseg {

// Desk-scale stand-in for one acquisition center: chest-like scenes with two
// lung ellipses, a heart ellipse over the lower medial part of the image-right
// lung, and two clavicle bars across the lung apices. Centers differ by
// intensity transform and by organ size range.
struct SyntheticCenterSpec {
  std::string id;
  int n_samples = 0;
  LabelAvailability availability;
  double brightness = 0.0;  // additive offset
  double contrast = 1.0;    // multiplicative scale of the base rendering
  double noise = 0.03;      // Gaussian sigma
  std::array<double, 2> scale_range{0.85, 1.0};        // global organ scale
  std::array<double, 2> heart_scale_range{0.9, 1.1};   // heart size relative to lungs
  double shift = 0.03;                                 // max global translation
};

struct SyntheticSpec {
  int image_size = 64;
  std::uint64_t seed = 1;
  std::vector<SyntheticCenterSpec> centers;
};

SyntheticSpec synthetic_spec_from_json(const nlohmann::json& doc);
nlohmann::json synthetic_spec_to_json(const SyntheticSpec& spec);

// Three centers mirroring the lung-only / lung+heart / fully annotated regime.
SyntheticSpec default_synthetic_spec(int samples_per_center, std::uint64_t seed);

// All records carry full ground truth; `availability` follows the center spec.
// Masks are the pixel-center membership of the landmark polygons.
std::vector<CenterDataset> generate_synthetic_centers(const SyntheticSpec& spec, const ContourTopology& topology);

}  // namespace heteroseg
