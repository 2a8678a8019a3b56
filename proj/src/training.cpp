#include "heteroseg/training.hpp"

#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>

namespace heteroseg {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::kHybridGNet: return "hybridgnet";
    case ModelKind::kUNet: return "unet";
    case ModelKind::kUNetHT: return "unet_ht";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "hybridgnet") return ModelKind::kHybridGNet;
  if (name == "unet") return ModelKind::kUNet;
  if (name == "unet_ht") return ModelKind::kUNetHT;
  throw ConfigError("unknown model '" + name + "' (expected hybridgnet, unet or unet_ht)");
}

std::string to_string(TrainSetting setting) {
  switch (setting) {
    case TrainSetting::kL: return "L";
    case TrainSetting::kLHStrict: return "LH_strict";
    case TrainSetting::kLHFull: return "LH_full";
    case TrainSetting::kLHCStrict: return "LHC_strict";
    case TrainSetting::kLHCFull: return "LHC_full";
  }
  return "?";
}

TrainSetting parse_setting(const std::string& name) {
  if (name == "L") return TrainSetting::kL;
  if (name == "LH_strict") return TrainSetting::kLHStrict;
  if (name == "LH_full") return TrainSetting::kLHFull;
  if (name == "LHC_strict") return TrainSetting::kLHCStrict;
  if (name == "LHC_full") return TrainSetting::kLHCFull;
  throw ConfigError("unknown setting '" + name + "' (expected L, LH_strict, LH_full, LHC_strict or LHC_full)");
}

LabelAvailability task_structures(TrainSetting setting) {
  switch (setting) {
    case TrainSetting::kL: return {Structure::kLungs};
    case TrainSetting::kLHStrict:
    case TrainSetting::kLHFull: return {Structure::kLungs, Structure::kHeart};
    case TrainSetting::kLHCStrict:
    case TrainSetting::kLHCFull: return LabelAvailability::all();
  }
  return {};
}

bool is_strict(TrainSetting setting) {
  return setting == TrainSetting::kLHStrict || setting == TrainSetting::kLHCStrict;
}

std::vector<CenterDataset> filter_for_setting(const std::vector<CenterDataset>& centers, TrainSetting setting) {
  const auto task = task_structures(setting);
  std::vector<CenterDataset> out;
  for (const auto& c : centers) {
    const auto usable = c.declared & task;
    if (usable.empty()) continue;
    if (is_strict(setting) && !(usable == task)) continue;
    CenterDataset f{c.center_id, usable, c.records};
    for (auto& r : f.records) r.availability = r.availability & task;
    out.push_back(std::move(f));
  }
  if (out.empty()) throw DataError("no training data left for setting " + to_string(setting));
  return out;
}

nlohmann::json OptimizerConfig::to_json() const {
  return {{"lr", lr},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"w_kl", w_kl},
          {"val_fraction", val_fraction},
          {"model_selection", select_best_val ? "best_val" : "last"}};
}

void TrainResult::write_log_csv(std::ostream& os) const {
  std::vector<std::string> names;
  if (!log.empty())
    for (const auto& [name, v] : log.front().loss.components) names.push_back(name);
  os << "step,epoch,center,loss_total";
  for (const auto& n : names) os << ",loss_" << n;
  os << '\n';
  os.precision(9);
  for (const auto& r : log) {
    os << r.step << ',' << r.epoch << ',' << r.center << ',' << r.loss.total;
    for (const auto& n : names) os << ',' << r.loss.components.at(n);
    os << '\n';
  }
}

SegmentationModel SegmentationModel::create_landmark(LandmarkModelConfig config, ContourTopology task_topology) {
  SegmentationModel m;
  m.kind_ = ModelKind::kHybridGNet;
  m.topology_ = task_topology;
  m.landmark_ = LandmarkNet(std::move(config), std::move(task_topology));
  return m;
}

SegmentationModel SegmentationModel::create_pixel(ModelKind kind, PixelModelConfig config,
                                                  ContourTopology task_topology) {
  if (kind == ModelKind::kHybridGNet) throw std::invalid_argument("create_pixel needs a pixel model kind");
  config.mode = kind == ModelKind::kUNet ? PixelMode::kMulticlass : PixelMode::kMultilabelHT;
  config.num_structures = static_cast<int>(task_topology.layout()->blocks().size());
  SegmentationModel m;
  m.kind_ = kind;
  m.topology_ = std::move(task_topology);
  m.unet_ = UNet(std::move(config));
  return m;
}

int SegmentationModel::input_size() const {
  return kind_ == ModelKind::kHybridGNet ? landmark_->config().input_size : unet_->config().input_size;
}

torch::nn::Module& SegmentationModel::module() {
  if (kind_ == ModelKind::kHybridGNet) return *landmark_;
  return *unet_;
}

nlohmann::json SegmentationModel::architecture_json() const {
  nlohmann::json j;
  j["kind"] = to_string(kind_);
  j["topology"] = topology_to_json(topology_);
  j["config"] = kind_ == ModelKind::kHybridGNet ? landmark_->config().to_json() : unet_->config().to_json();
  return j;
}

torch::Tensor batch_images(const std::vector<const SampleRecord*>& records, int size) {
  auto out = torch::empty({static_cast<int64_t>(records.size()), 1, size, size}, torch::kFloat);
  for (std::size_t i = 0; i < records.size(); ++i) out[static_cast<int64_t>(i)] = image_tensor(records[i]->image, size)[0];
  return out;
}

torch::Tensor batch_landmark_targets(const std::vector<const SampleRecord*>& records, const StructureLayout& layout,
                                     const LabelAvailability& avail) {
  const int64_t d = layout.total_nodes();
  auto out = torch::full({static_cast<int64_t>(records.size()), d, 2}, std::numeric_limits<float>::quiet_NaN());
  auto acc = out.accessor<float, 3>();
  for (std::size_t b = 0; b < records.size(); ++b) {
    for (Structure s : avail.list()) {
      const auto rows = records[b]->training_rows(s);
      const int offset = layout.block(s).offset;
      for (int i = 0; i < rows.rows(); ++i) {
        acc[b][offset + i][0] = static_cast<float>(rows(i, 0));
        acc[b][offset + i][1] = static_cast<float>(rows(i, 1));
      }
    }
  }
  return out;
}

torch::Tensor batch_structure_targets(const std::vector<const SampleRecord*>& records,
                                      const std::vector<Structure>& structures, const LabelAvailability& avail) {
  const auto& first = records.front()->image;
  auto out = torch::zeros({static_cast<int64_t>(records.size()), static_cast<int64_t>(structures.size()), first.height,
                           first.width});
  auto acc = out.accessor<float, 4>();
  for (std::size_t b = 0; b < records.size(); ++b)
    for (std::size_t k = 0; k < structures.size(); ++k) {
      if (!avail.contains(structures[k])) continue;
      const auto& m = records[b]->training_mask(structures[k]);
      for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c) acc[b][k][r][c] = m.at(r, c);
    }
  return out;
}

torch::Tensor batch_label_map(const std::vector<const SampleRecord*>& records, const std::vector<Structure>& structures,
                              const LabelAvailability& avail) {
  const auto& first = records.front()->image;
  auto out = torch::zeros({static_cast<int64_t>(records.size()), first.height, first.width}, torch::kLong);
  auto acc = out.accessor<int64_t, 3>();
  for (std::size_t b = 0; b < records.size(); ++b)
    for (std::size_t k = 0; k < structures.size(); ++k) {
      if (!avail.contains(structures[k])) continue;
      const auto& m = records[b]->training_mask(structures[k]);
      for (int r = 0; r < m.height; ++r)
        for (int c = 0; c < m.width; ++c)
          if (m.at(r, c)) acc[b][r][c] = static_cast<int64_t>(k) + 1;
    }
  return out;
}

Loss SegmentationModel::batch_loss(const std::vector<const SampleRecord*>& records, const LabelAvailability& avail,
                                   double w_kl, bool stochastic) {
  const auto active = avail & topology_.layout()->as_availability();
  if (active.empty()) throw std::invalid_argument("batch has no labels for this model's structures");
  auto images = batch_images(records, input_size());
  const auto structs = structures();
  switch (kind_) {
    case ModelKind::kHybridGNet: {
      const auto& layout = *topology_.layout();
      auto out = landmark_->forward(images, stochastic);
      auto target = batch_landmark_targets(records, layout, active);
      const auto mask_vec = availability_mask(layout, active);
      auto mask = torch::zeros({layout.total_nodes()}, torch::kBool);
      for (int i = 0; i < layout.total_nodes(); ++i) mask[i] = static_cast<bool>(mask_vec[i]);
      auto loss = masked_landmark_mse(out.coords, target, mask);
      auto kl = kl_latent(out.mu, out.logvar);
      loss.components["kl"] = kl;
      loss.total = loss.total + w_kl * kl;
      return loss;
    }
    case ModelKind::kUNetHT: {
      std::vector<bool> heads;
      for (Structure s : structs) heads.push_back(active.contains(s));
      return het_pixel_loss(unet_->predict(images, heads), batch_structure_targets(records, structs, active), active,
                            structs);
    }
    case ModelKind::kUNet:
      return multiclass_loss(unet_->forward(images), batch_label_map(records, structs, active));
  }
  throw std::logic_error("unreachable");
}

StructureMasks SegmentationModel::predict_masks(const Image& image) {
  const int size = input_size();
  if (kind_ == ModelKind::kHybridGNet) return fill_contours(*predict_landmarks(image), topology_, size, size);
  auto scores = pixel_forward(unet_, image).contiguous();
  std::vector<Image> channels;
  for (int64_t c = 0; c < scores.size(0); ++c) {
    Image ch(size, size, 0.f);
    std::memcpy(ch.data.data(), scores[c].contiguous().data_ptr<float>(), sizeof(float) * ch.size());
    channels.push_back(std::move(ch));
  }
  return decode_pixel_prediction(channels, unet_->config().mode, structures());
}

std::optional<LandmarkSet> SegmentationModel::predict_landmarks(const Image& image) {
  if (kind_ != ModelKind::kHybridGNet) return std::nullopt;
  landmark_->eval();
  return landmark_forward(landmark_, image, false).landmarks;
}

std::vector<float> SegmentationModel::latent(const Image& image) {
  if (kind_ == ModelKind::kHybridGNet) {
    landmark_->eval();
    return landmark_forward(landmark_, image, false).mu;
  }
  torch::NoGradGuard guard;
  unet_->eval();
  auto feats = unet_->bottleneck(image_tensor(image, input_size())).mean({2, 3})[0].contiguous();
  return {feats.data_ptr<float>(), feats.data_ptr<float>() + feats.numel()};
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, const std::string& tag) {
  std::uint64_t h = seed ^ 0x9E3779B97F4A7C15ULL;
  for (unsigned char c : tag) h = (h ^ c) * 0x100000001B3ULL;
  return h;
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

void restore(torch::nn::Module& m, const std::vector<torch::Tensor>& saved) {
  torch::NoGradGuard guard;
  auto params = m.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) params[i].copy_(saved[i]);
}

}  // namespace

TrainResult train(SegmentationModel& model, const std::vector<CenterDataset>& trainval, const OptimizerConfig& opt,
                  std::uint64_t seed, const EpochCallback& on_epoch) {
  if (trainval.empty()) throw DataError("no training centers");
  if (opt.batch_size < 1 || opt.epochs < 1 || !(opt.lr > 0)) throw ConfigError("invalid optimizer configuration");

  std::vector<CenterDataset> train_pools, val_pools;
  for (const auto& c : trainval) {
    if (c.records.empty()) throw DataError("center " + c.center_id + " has no training records");
    if (opt.val_fraction > 0 && c.records.size() >= 2) {
      auto [tr, va] = split(c, 1.0 - opt.val_fraction, mix_seed(seed, "val:" + c.center_id));
      train_pools.push_back(std::move(tr));
      val_pools.push_back(std::move(va));
    } else {
      train_pools.push_back(c);
    }
  }
  std::vector<std::size_t> sizes;
  for (const auto& p : train_pools) sizes.push_back(p.records.size());
  SingleSourceSampler sampler(sizes, opt.batch_size, mix_seed(seed, "sampler"));

  torch::manual_seed(mix_seed(seed, "latent-noise"));
  auto& net = model.module();
  torch::optim::Adam optimizer(net.parameters(), torch::optim::AdamOptions(opt.lr));

  TrainResult result;
  double best_val = std::numeric_limits<double>::infinity();
  std::vector<torch::Tensor> best_state;
  const std::size_t per_epoch = sampler.batches_per_epoch();

  for (int epoch = 0; epoch < opt.epochs; ++epoch) {
    net.train();
    double epoch_loss = 0;
    for (std::size_t i = 0; i < per_epoch; ++i) {
      const auto batch = sampler.next();
      const auto& pool = train_pools[batch.center];
      std::vector<const SampleRecord*> recs;
      for (auto idx : batch.records) recs.push_back(&pool.records[idx]);
      auto loss = model.batch_loss(recs, pool.declared, opt.w_kl, true);
      const double total = loss.total.item<double>();
      if (!std::isfinite(total))
        throw DivergenceError("non-finite loss at step " + std::to_string(result.steps) + " (epoch " +
                              std::to_string(epoch) + ", center " + pool.center_id + ")");
      optimizer.zero_grad();
      loss.total.backward();
      optimizer.step();
      result.log.push_back({result.steps, epoch, pool.center_id, loss.value()});
      ++result.steps;
      epoch_loss += total;
    }
    epoch_loss /= static_cast<double>(per_epoch);

    double val = std::numeric_limits<double>::quiet_NaN();
    if (!val_pools.empty()) {
      net.eval();
      torch::NoGradGuard guard;
      double sum = 0;
      std::size_t count = 0;
      for (const auto& pool : val_pools) {
        for (std::size_t start = 0; start < pool.records.size(); start += opt.batch_size) {
          std::vector<const SampleRecord*> recs;
          for (std::size_t k = start; k < std::min(pool.records.size(), start + opt.batch_size); ++k)
            recs.push_back(&pool.records[k]);
          sum += model.batch_loss(recs, pool.declared, opt.w_kl, false).total.item<double>() * recs.size();
          count += recs.size();
        }
      }
      val = sum / static_cast<double>(count);
      if (!std::isfinite(val)) throw DivergenceError("non-finite validation loss at epoch " + std::to_string(epoch));
      if (opt.select_best_val && val < best_val) {
        best_val = val;
        best_state = snapshot(net);
        result.best_epoch = epoch;
      }
    }
    result.val_losses.push_back(val);
    if (on_epoch) on_epoch(epoch, epoch_loss, val);
  }
  if (opt.select_best_val && !best_state.empty()) {
    restore(net, best_state);
  } else {
    result.best_epoch = opt.epochs - 1;
  }
  net.eval();
  return result;
}

namespace {

constexpr char kCheckpointMagic[] = "HETEROSEG-CKPT1\n";

}  // namespace

void save_checkpoint(const std::filesystem::path& path, SegmentationModel& model, const nlohmann::json& metadata) {
  nlohmann::json header;
  header["architecture"] = model.architecture_json();
  header["metadata"] = metadata;
  header["tensors"] = nlohmann::json::array();
  std::vector<torch::Tensor> blobs;
  std::int64_t offset = 0;
  for (const auto& item : model.module().named_parameters()) {
    auto t = item.value().detach().to(torch::kFloat).contiguous();
    header["tensors"].push_back({{"name", item.key()}, {"shape", t.sizes().vec()}, {"offset", offset}});
    offset += t.numel();
    blobs.push_back(t);
  }
  const std::string text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic) - 1);
  const std::uint64_t len = text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& t : blobs)
    out.write(reinterpret_cast<const char*>(t.data_ptr<float>()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("missing checkpoint " + path.string());
  char magic[sizeof(kCheckpointMagic) - 1];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw DataError(path.string() + " is not a heteroseg checkpoint");
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string text(len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(len));
  const auto header = nlohmann::json::parse(text);
  const auto& arch = header.at("architecture");
  const auto kind = parse_model_kind(arch.at("kind").get<std::string>());
  auto topology = topology_from_json(arch.at("topology"));
  SegmentationModel model = kind == ModelKind::kHybridGNet
                                ? SegmentationModel::create_landmark(LandmarkModelConfig::from_json(arch.at("config")),
                                                                     topology)
                                : SegmentationModel::create_pixel(kind, PixelModelConfig::from_json(arch.at("config")),
                                                                  topology);
  const auto data_start = in.tellg();
  auto params = model.module().named_parameters();
  torch::NoGradGuard guard;
  for (const auto& t : header.at("tensors")) {
    const auto name = t.at("name").get<std::string>();
    auto* p = params.find(name);
    if (!p) throw DataError("checkpoint tensor " + name + " does not match the architecture");
    const auto shape = t.at("shape").get<std::vector<int64_t>>();
    if (p->sizes().vec() != shape) throw DataError("checkpoint tensor " + name + " has a mismatched shape");
    auto buf = torch::empty(shape, torch::kFloat);
    in.seekg(data_start + static_cast<std::streamoff>(t.at("offset").get<std::int64_t>() * sizeof(float)));
    in.read(reinterpret_cast<char*>(buf.data_ptr<float>()), static_cast<std::streamsize>(buf.numel() * sizeof(float)));
    if (!in) throw DataError("checkpoint " + path.string() + " is truncated");
    p->copy_(buf);
  }
  model.module().eval();
  return {std::move(model), header.value("metadata", nlohmann::json::object())};
}

void configure_threads_from_env() {
  if (const char* v = std::getenv("HETEROSEG_THREADS")) {
    const int n = std::atoi(v);
    if (n > 0) {
      torch::set_num_threads(n);
      torch::set_num_interop_threads(n);
    }
  }
}

}  // namespace heteroseg
