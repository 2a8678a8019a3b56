#include "heteroseg/latent_inspect.hpp"
#include "heteroseg/training.hpp"

namespace heteroseg {

namespace {

LatentRecord encode(SegmentationModel& model, const SampleRecord& r) {
  if (r.image.height != model.input_size() || r.image.width != model.input_size())
    throw std::invalid_argument("record " + r.sample_id + " does not match the model input size");
  const auto v = model.latent(r.image);
  return {r.sample_id, r.center_id, {v.begin(), v.end()}};
}

}  // namespace

std::vector<LatentRecord> collect_latents(SegmentationModel& model, const std::vector<CenterDataset>& datasets) {
  std::vector<LatentRecord> out;
  for (const auto& d : datasets)
    for (const auto& r : d.records)
      if (r.split == Split::kTest) out.push_back(encode(model, r));
  return out;
}

std::vector<LatentRecord> rescaled_latents(SegmentationModel& model, const std::vector<CenterDataset>& datasets,
                                           double target_area) {
  std::vector<LatentRecord> out;
  for (const auto& d : datasets)
    for (const auto& r : d.records)
      if (r.split == Split::kTest) out.push_back(encode(model, normalize_organ_scale(r, target_area, model.topology())));
  return out;
}

}  // namespace heteroseg
