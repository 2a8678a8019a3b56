#pragma once

#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "heteroseg/anatomy_graph.hpp"
#include "heteroseg/common.hpp"
#include "heteroseg/raster_metrics.hpp"

namespace heteroseg {

struct LandmarkModelConfig {
  int input_size = 64;
  // One stride-2 residual stage per entry.
  std::vector<int64_t> encoder_channels{8, 16, 32, 64, 64};
  // Encoder output is average-pooled to pool_grid x pool_grid before the
  // latent heads (a no-op at 64x64 with five stages).
  int pool_grid = 2;
  int latent_dim = 64;
  int chebyshev_order = 6;
  // Widths of the four graph-convolution layers.
  std::vector<int64_t> decoder_channels{32, 32, 32, 32};

  void validate() const;
  nlohmann::json to_json() const;
  static LandmarkModelConfig from_json(const nlohmann::json& j);
};

struct PixelModelConfig {
  int input_size = 64;
  // Per-level widths; the last entry is the bottleneck width.
  std::vector<int64_t> channels{8, 16, 32, 64};
  PixelMode mode = PixelMode::kMulticlass;
  int num_structures = 3;

  int output_channels() const { return mode == PixelMode::kMulticlass ? num_structures + 1 : num_structures; }
  void validate() const;
  nlohmann::json to_json() const;
  static PixelModelConfig from_json(const nlohmann::json& j);
};

// conv3x3 -> ReLU -> conv3x3 plus a (projected) identity path.
class ResidualBlockImpl : public torch::nn::Module {
 public:
  ResidualBlockImpl(int64_t in, int64_t out, int64_t stride);
  torch::Tensor forward(const torch::Tensor& x);

 private:
  torch::nn::Conv2d conv1_{nullptr}, conv2_{nullptr}, skip_{nullptr};
};
TORCH_MODULE(ResidualBlock);

// Chebyshev spectral graph convolution over a fixed rescaled Laplacian:
// y = sum_k T_k(L~) x W_k + b, with T_0 = I, T_1 = L~, T_k = 2 L~ T_{k-1} - T_{k-2}.
class ChebConvImpl : public torch::nn::Module {
 public:
  ChebConvImpl(int64_t in, int64_t out, int order, const torch::Tensor& scaled_laplacian);
  // x: [B, N, in] -> [B, N, out]
  torch::Tensor forward(const torch::Tensor& x);

 private:
  int order_;
  torch::Tensor laplacian_, weight_, bias_;
};
TORCH_MODULE(ChebConv);

struct LandmarkOutput {
  torch::Tensor coords;  // [B, D, 2]
  torch::Tensor mu;      // [B, latent]
  torch::Tensor logvar;  // [B, latent]
};

// Convolutional encoder -> variational latent -> spectral graph decoder over
// the contour topology -> per-node (x, y).
class LandmarkNetImpl : public torch::nn::Module {
 public:
  LandmarkNetImpl(LandmarkModelConfig config, ContourTopology topology);

  std::pair<torch::Tensor, torch::Tensor> encode(const torch::Tensor& images);
  torch::Tensor decode(const torch::Tensor& z);
  // Node features fed to the coordinate head, [B, D, F].
  torch::Tensor decode_features(const torch::Tensor& z);
  torch::Tensor head(const torch::Tensor& features);
  LandmarkOutput forward(const torch::Tensor& images, bool stochastic);

  const LandmarkModelConfig& config() const { return config_; }
  const ContourTopology& topology() const { return topology_; }

 private:
  LandmarkModelConfig config_;
  ContourTopology topology_;
  torch::nn::Sequential encoder_{nullptr};
  torch::nn::Linear mu_{nullptr}, logvar_{nullptr}, expand_{nullptr}, head_{nullptr};
  torch::nn::ModuleList graph_layers_{nullptr};
  int64_t first_width_ = 0;
};
TORCH_MODULE(LandmarkNet);

// Residual UNet. MULTICLASS emits K+1 logits; MULTILABEL_HT has one
// independent 1x1 head per structure.
class UNetImpl : public torch::nn::Module {
 public:
  explicit UNetImpl(PixelModelConfig config);

  // Raw scores: logits for both modes. For MULTILABEL_HT, heads whose entry in
  // `active` is false are detached so their parameters receive no gradient.
  torch::Tensor forward(const torch::Tensor& images, const std::vector<bool>& active = {});
  // Scores as consumed by losses and decoding: softmax-ready logits for
  // MULTICLASS, sigmoid probabilities for MULTILABEL_HT.
  torch::Tensor predict(const torch::Tensor& images, const std::vector<bool>& active = {});
  torch::Tensor bottleneck(const torch::Tensor& images);

  const PixelModelConfig& config() const { return config_; }

 private:
  torch::Tensor run(const torch::Tensor& images, const std::vector<bool>& active, torch::Tensor* bottleneck_out);

  PixelModelConfig config_;
  torch::nn::ModuleList down_{nullptr}, up_{nullptr}, heads_{nullptr};
};
TORCH_MODULE(UNet);

// [1, 1, H, W] float tensor from an image; throws on size mismatch.
torch::Tensor image_tensor(const Image& image, int expected_size);

struct LandmarkPrediction {
  LandmarkSet landmarks;
  std::vector<float> mu;
  std::vector<float> logvar;
};

LandmarkPrediction landmark_forward(LandmarkNet& model, const Image& image, bool stochastic);
// [C, H, W] scores (see UNetImpl::predict).
torch::Tensor pixel_forward(UNet& model, const Image& image);

}  // namespace heteroseg
