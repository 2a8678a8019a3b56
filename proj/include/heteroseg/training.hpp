#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "heteroseg/data_pipeline.hpp"
#include "heteroseg/models.hpp"
#include "heteroseg/objectives.hpp"

namespace heteroseg {

enum class ModelKind { kHybridGNet, kUNet, kUNetHT };
enum class TrainSetting { kL, kLHStrict, kLHFull, kLHCStrict, kLHCFull };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);
std::string to_string(TrainSetting setting);
TrainSetting parse_setting(const std::string& name);

// Structures a setting trains for (L, LH or LHC).
LabelAvailability task_structures(TrainSetting setting);
bool is_strict(TrainSetting setting);

// Strict keeps centers annotating every task structure; Full keeps every center
// annotating at least one. Record availabilities are narrowed to the task.
// Throws DataError if nothing remains.
std::vector<CenterDataset> filter_for_setting(const std::vector<CenterDataset>& centers, TrainSetting setting);

struct OptimizerConfig {
  double lr = 1e-4;
  int epochs = 300;
  int batch_size = 8;
  double w_kl = 1e-5;
  double val_fraction = 0.1;
  bool select_best_val = true;

  nlohmann::json to_json() const;
};

struct TrainLogRow {
  int step = 0;
  int epoch = 0;
  std::string center;
  LossValue loss;
};

struct TrainResult {
  std::vector<TrainLogRow> log;
  std::vector<double> val_losses;  // one per epoch
  int best_epoch = -1;
  int steps = 0;

  // CSV: step,epoch,center,loss_total,loss_<component>...
  void write_log_csv(std::ostream& os) const;
};

// A trainable model of any kind together with the task it predicts.
class SegmentationModel {
 public:
  static SegmentationModel create_landmark(LandmarkModelConfig config, ContourTopology task_topology);
  static SegmentationModel create_pixel(ModelKind kind, PixelModelConfig config, ContourTopology task_topology);

  ModelKind kind() const { return kind_; }
  int input_size() const;
  const ContourTopology& topology() const { return topology_; }
  std::vector<Structure> structures() const { return topology_.layout()->structures(); }
  torch::nn::Module& module();
  LandmarkNet& landmark_net() { return landmark_; }
  UNet& unet() { return unet_; }
  nlohmann::json architecture_json() const;

  // Differentiable loss for one single-center batch.
  Loss batch_loss(const std::vector<const SampleRecord*>& records, const LabelAvailability& avail, double w_kl,
                  bool stochastic);

  StructureMasks predict_masks(const Image& image);
  std::optional<LandmarkSet> predict_landmarks(const Image& image);
  // Landmark model: latent mean. Pixel models: bottleneck features averaged over
  // spatial positions.
  std::vector<float> latent(const Image& image);

 private:
  ModelKind kind_ = ModelKind::kHybridGNet;
  ContourTopology topology_;
  LandmarkNet landmark_{nullptr};
  UNet unet_{nullptr};
};

// Batch tensors. Unavailable landmark rows carry the NaN sentinel.
torch::Tensor batch_images(const std::vector<const SampleRecord*>& records, int size);
torch::Tensor batch_landmark_targets(const std::vector<const SampleRecord*>& records, const StructureLayout& layout,
                                     const LabelAvailability& avail);
torch::Tensor batch_structure_targets(const std::vector<const SampleRecord*>& records,
                                      const std::vector<Structure>& structures, const LabelAvailability& avail);
// Label map: 0 background, s+1 for structure s; later structures overwrite
// earlier ones where they overlap.
torch::Tensor batch_label_map(const std::vector<const SampleRecord*>& records, const std::vector<Structure>& structures,
                              const LabelAvailability& avail);

using EpochCallback = std::function<void(int epoch, double train_loss, double val_loss)>;

// Single-source batches, Adam, per-step log rows, best-validation selection.
// `trainval` are the per-center train/val pools (already filtered for the
// setting); a seeded fraction of each becomes validation data.
// Throws DivergenceError on non-finite loss.
TrainResult train(SegmentationModel& model, const std::vector<CenterDataset>& trainval, const OptimizerConfig& opt,
                  std::uint64_t seed, const EpochCallback& on_epoch = {});

// Checkpoint: self-describing archive with a JSON document (architecture,
// topology, free-form metadata) and named float32 arrays.
void save_checkpoint(const std::filesystem::path& path, SegmentationModel& model, const nlohmann::json& metadata);
struct LoadedCheckpoint {
  SegmentationModel model;
  nlohmann::json metadata;
};
LoadedCheckpoint load_checkpoint(const std::filesystem::path& path);

// Applies HETEROSEG_THREADS (if set) to the intra-op thread pool.
void configure_threads_from_env();

}  // namespace heteroseg
