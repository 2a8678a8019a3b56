#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <istream>
#include <optional>
#include <string>
#include <vector>

#include "heteroseg/data_pipeline.hpp"
#include "heteroseg/synthetic.hpp"
#include "heteroseg/training.hpp"

namespace heteroseg {

struct ExperimentConfig {
  // [experiment]
  ModelKind model = ModelKind::kHybridGNet;
  TrainSetting setting = TrainSetting::kLHCFull;
  std::optional<int> removal;  // 1..4
  std::uint64_t seed = 0;
  std::filesystem::path output_dir = "runs/experiment";

  // [data]  Synthetic data is generated when no manifest is given.
  std::filesystem::path manifest;
  std::filesystem::path synthetic_spec;  // JSON; empty means the built-in three-center spec
  int synthetic_samples = 240;
  std::uint64_t synthetic_seed = 1;
  double split_fraction = 0.8;
  std::uint64_t split_seed = 0;
  int input_size = 64;

  OptimizerConfig optimizer;
  LandmarkModelConfig landmark;
  PixelModelConfig pixel;

  // [eval]
  bool overlays = true;

  // Throws ConfigError for invalid combinations.
  void validate() const;
};

// TOML-style sections and keys; unknown keys are errors. Relative paths are
// resolved against `base_dir`.
ExperimentConfig parse_experiment_config(std::istream& is, const std::filesystem::path& base_dir);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
// Every field written out, paths made absolute.
std::string config_snapshot(const ExperimentConfig& config);

std::string removal_name(int experiment);

struct RemovalTarget {
  std::string center_id;
  Structure structure;
};
// Exp1/Exp2 remove lungs/heart from the center with the most structures,
// Exp3/Exp4 from the next center annotating at least two. Throws DataError
// if such centers do not exist.
RemovalTarget removal_target(const std::vector<CenterDataset>& centers, int experiment);

struct ExperimentData {
  ContourTopology topology;
  std::vector<CenterDataset> train;  // per-center train/val pools, removal applied
  std::vector<CenterDataset> test;   // per-center test splits, full ground truth
  std::optional<RemovalTarget> removed;
};

std::vector<CenterDataset> load_source_centers(const ExperimentConfig& config, ContourTopology& topology);
ExperimentData prepare_data(const ExperimentConfig& config);

SegmentationModel build_model(const ExperimentConfig& config, const ContourTopology& topology);

// Mean per-sample metrics for each (center, structure) with ground truth.
// Samples whose prediction or ground truth is empty do not enter the HD mean.
MetricReport evaluate(SegmentationModel& model, const std::vector<CenterDataset>& test, const std::string& model_name,
                      const std::string& setting, const std::optional<RemovalTarget>& removed = std::nullopt,
                      const std::string& experiment = "");

// One PNG per test record: the input with each predicted structure drawn in
// a fixed color (contours for landmark models, mask outlines otherwise).
std::vector<std::filesystem::path> emit_overlays(SegmentationModel& model, const std::vector<CenterDataset>& test,
                                                 const std::filesystem::path& out_dir);

struct RunArtifact {
  std::filesystem::path output_dir;
  std::filesystem::path checkpoint;
  std::filesystem::path snapshot;
  std::filesystem::path log;
  std::filesystem::path metrics;
  std::vector<std::filesystem::path> overlays;
  MetricReport report;
  TrainResult training;
};

using ProgressCallback = std::function<void(const std::string&)>;

RunArtifact run_experiment(const ExperimentConfig& config, const ProgressCallback& progress = {});

struct RemovalSuiteResult {
  std::vector<RunArtifact> runs;
  MetricReport combined;
  std::filesystem::path combined_csv;
};
// Exp1..Exp4 with the base config's model and (Full) setting, each in its own
// subdirectory, plus a combined CSV with experiment/removed columns.
RemovalSuiteResult run_removal_suite(const ExperimentConfig& base, const ProgressCallback& progress = {});

}  // namespace heteroseg
