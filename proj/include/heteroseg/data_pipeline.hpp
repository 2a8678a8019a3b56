#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "heteroseg/anatomy_graph.hpp"
#include "heteroseg/common.hpp"
#include "heteroseg/raster_metrics.hpp"

namespace heteroseg {

enum class Split { kTrainVal, kTest };

// One image with its landmark and mask ground truth.
//
// `availability` is what training may read. `ground_truth` is a superset that
// also covers shadow labels (artificially removed structures, or synthetic
// truth for structures a center does not annotate); those exist for test-time
// evaluation only. Landmark rows of structures outside `ground_truth` hold NaN.
struct SampleRecord {
  std::string sample_id;
  std::string center_id;
  Image image;
  LandmarkSet landmarks;
  StructureMasks masks;
  LabelAvailability availability;
  LabelAvailability ground_truth;
  Split split = Split::kTrainVal;

  // Training-side accessors: throw std::logic_error for structures outside
  // `availability`.
  Eigen::MatrixX2d training_rows(Structure s) const;
  const BinaryMap& training_mask(Structure s) const;
  // Evaluation-side accessors: throw for structures outside `ground_truth`.
  Eigen::MatrixX2d eval_rows(Structure s) const;
  const BinaryMap& eval_mask(Structure s) const;
};

struct CenterDataset {
  std::string center_id;
  LabelAvailability declared;
  std::vector<SampleRecord> records;
};

// Sentinel value stored in landmark rows that carry no annotation.
double landmark_sentinel();

// Derives per-structure masks from the landmark ground truth. Structures outside
// `record.ground_truth` get empty maps.
void derive_masks(SampleRecord& record, const ContourTopology& topology);

// Deterministic partition; |first| = round(fraction * n) clamped to [1, n-1].
std::pair<CenterDataset, CenterDataset> split(const CenterDataset& dataset, double fraction, std::uint64_t seed);

CenterDataset remove_labels(const CenterDataset& dataset, Structure structure);

// Rescales about the image center so the lung landmark bounding box has
// `target_area` (in normalized units); image resampled bilinearly, masks
// re-derived from the transformed landmarks.
SampleRecord normalize_organ_scale(const SampleRecord& record, double target_area, const ContourTopology& topology);
double lung_bbox_area(const SampleRecord& record);

struct SourceBatch {
  std::size_t center = 0;
  std::vector<std::size_t> records;  // indices into that center's pool
  int epoch = 0;
};

// Stateful single-owner iterator over single-center batches. Each epoch
// shuffles every center's records, chunks them (final short chunk kept) and
// emits all chunks in a seeded random interleaving, so batch frequencies are
// proportional to center sizes.
class SingleSourceSampler {
 public:
  SingleSourceSampler(std::vector<std::size_t> center_sizes, int batch_size, std::uint64_t seed);

  SourceBatch next();
  std::size_t batches_per_epoch() const;
  int epoch() const { return epoch_; }

 private:
  void refill();

  std::vector<std::size_t> sizes_;
  int batch_size_;
  std::mt19937_64 rng_;
  std::deque<SourceBatch> pending_;
  int epoch_ = 0;
};

struct DatasetBatch {
  std::string center_id;
  LabelAvailability availability;
  std::vector<const SampleRecord*> records;
};

std::vector<DatasetBatch> single_source_batches(const std::vector<CenterDataset>& datasets, int batch_size,
                                                std::uint64_t seed, std::size_t n_batches);

struct ManifestData {
  ContourTopology topology;
  std::vector<CenterDataset> centers;
};

// Landmark file: one "x y" line per node, normalized coordinates, either all
// layout rows (unannotated rows may read "nan nan") or only the rows of the
// annotated structures in layout order.
LandmarkSet read_landmark_file(const std::filesystem::path& path, std::shared_ptr<const StructureLayout> layout,
                               const LabelAvailability& annotated);
void write_landmark_file(const std::filesystem::path& path, const LandmarkSet& landmarks);

// Images are resampled to input_size x input_size on load.
ManifestData load_manifest(const std::filesystem::path& path, int input_size);
// Writes images, landmark files and manifest.json under `dir`.
void write_manifest(const std::filesystem::path& dir, const ContourTopology& topology,
                    const std::vector<CenterDataset>& centers);

}  // namespace heteroseg
