#include "heteroseg/models.hpp"

#include <stdexcept>

namespace heteroseg {

namespace F = torch::nn::functional;

namespace {

bool power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

PixelMode pixel_mode_from_string(const std::string& s) {
  if (s == "MULTICLASS") return PixelMode::kMulticlass;
  if (s == "MULTILABEL_HT") return PixelMode::kMultilabelHT;
  throw std::invalid_argument("unknown pixel mode " + s);
}

}  // namespace

void LandmarkModelConfig::validate() const {
  if (!power_of_two(input_size)) throw std::invalid_argument("input size must be a power of two");
  if (latent_dim < 2) throw std::invalid_argument("latent_dim must be at least 2");
  if (chebyshev_order < 1) throw std::invalid_argument("chebyshev order must be at least 1");
  if (encoder_channels.empty() || decoder_channels.empty())
    throw std::invalid_argument("encoder and decoder widths must be non-empty");
  if ((input_size >> encoder_channels.size()) < 1) throw std::invalid_argument("too many encoder stages for input");
  if (pool_grid < 1) throw std::invalid_argument("pool_grid must be positive");
}

nlohmann::json LandmarkModelConfig::to_json() const {
  return {{"input_size", input_size},        {"encoder_channels", encoder_channels},
          {"pool_grid", pool_grid},          {"latent_dim", latent_dim},
          {"chebyshev_order", chebyshev_order}, {"decoder_channels", decoder_channels}};
}

LandmarkModelConfig LandmarkModelConfig::from_json(const nlohmann::json& j) {
  LandmarkModelConfig c;
  c.input_size = j.at("input_size");
  c.encoder_channels = j.at("encoder_channels").get<std::vector<int64_t>>();
  c.pool_grid = j.at("pool_grid");
  c.latent_dim = j.at("latent_dim");
  c.chebyshev_order = j.at("chebyshev_order");
  c.decoder_channels = j.at("decoder_channels").get<std::vector<int64_t>>();
  return c;
}

void PixelModelConfig::validate() const {
  if (!power_of_two(input_size)) throw std::invalid_argument("input size must be a power of two");
  if (channels.size() < 2) throw std::invalid_argument("UNet needs at least two levels");
  if ((input_size >> (channels.size() - 1)) < 1) throw std::invalid_argument("too many UNet levels for input");
  if (num_structures < 1) throw std::invalid_argument("UNet needs at least one structure");
}

nlohmann::json PixelModelConfig::to_json() const {
  return {{"input_size", input_size},
          {"channels", channels},
          {"mode", mode == PixelMode::kMulticlass ? "MULTICLASS" : "MULTILABEL_HT"},
          {"num_structures", num_structures}};
}

PixelModelConfig PixelModelConfig::from_json(const nlohmann::json& j) {
  PixelModelConfig c;
  c.input_size = j.at("input_size");
  c.channels = j.at("channels").get<std::vector<int64_t>>();
  c.mode = pixel_mode_from_string(j.at("mode").get<std::string>());
  c.num_structures = j.at("num_structures");
  return c;
}

ResidualBlockImpl::ResidualBlockImpl(int64_t in, int64_t out, int64_t stride) {
  conv1_ = register_module("conv1", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 3).stride(stride).padding(1)));
  conv2_ = register_module("conv2", torch::nn::Conv2d(torch::nn::Conv2dOptions(out, out, 3).padding(1)));
  if (in != out || stride != 1)
    skip_ = register_module("skip", torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, 1).stride(stride)));
}

torch::Tensor ResidualBlockImpl::forward(const torch::Tensor& x) {
  auto y = conv2_(torch::relu(conv1_(x)));
  return torch::relu(y + (skip_ ? skip_(x) : x));
}

ChebConvImpl::ChebConvImpl(int64_t in, int64_t out, int order, const torch::Tensor& scaled_laplacian)
    : order_(order) {
  laplacian_ = register_buffer("laplacian", scaled_laplacian.clone());
  weight_ = register_parameter("weight", torch::empty({order, in, out}));
  bias_ = register_parameter("bias", torch::zeros({out}));
  // Glorot-uniform over the stacked order dimension.
  const double bound = std::sqrt(6.0 / static_cast<double>(order * in + out));
  torch::NoGradGuard guard;
  weight_.uniform_(-bound, bound);
}

torch::Tensor ChebConvImpl::forward(const torch::Tensor& x) {
  auto t_prev = x;
  auto out = torch::matmul(t_prev, weight_[0]);
  if (order_ > 1) {
    auto t_cur = torch::matmul(laplacian_, x);
    out = out + torch::matmul(t_cur, weight_[1]);
    for (int k = 2; k < order_; ++k) {
      auto t_next = 2.0 * torch::matmul(laplacian_, t_cur) - t_prev;
      out = out + torch::matmul(t_next, weight_[k]);
      t_prev = t_cur;
      t_cur = t_next;
    }
  }
  return out + bias_;
}

LandmarkNetImpl::LandmarkNetImpl(LandmarkModelConfig config, ContourTopology topology)
    : config_(std::move(config)), topology_(std::move(topology)) {
  config_.validate();
  if (config_.decoder_channels.size() != 4) throw std::invalid_argument("decoder needs four graph-conv widths");
  encoder_ = torch::nn::Sequential();
  int64_t in = 1;
  for (auto c : config_.encoder_channels) {
    encoder_->push_back(ResidualBlock(in, c, 2));
    in = c;
  }
  encoder_->push_back(torch::nn::AdaptiveAvgPool2d(torch::nn::AdaptiveAvgPool2dOptions(config_.pool_grid)));
  register_module("encoder", encoder_);
  const int64_t flat = in * config_.pool_grid * config_.pool_grid;
  mu_ = register_module("mu", torch::nn::Linear(flat, config_.latent_dim));
  logvar_ = register_module("logvar", torch::nn::Linear(flat, config_.latent_dim));

  const int64_t nodes = topology_.layout()->total_nodes();
  first_width_ = config_.decoder_channels.front();
  expand_ = register_module("expand", torch::nn::Linear(config_.latent_dim, nodes * first_width_));
  const auto& lap = topology_.scaled_laplacian();
  auto lap_t = torch::empty({nodes, nodes}, torch::kFloat);
  for (int64_t i = 0; i < nodes; ++i)
    for (int64_t j = 0; j < nodes; ++j) lap_t[i][j] = static_cast<float>(lap(i, j));
  graph_layers_ = torch::nn::ModuleList();
  int64_t width = first_width_;
  for (auto c : config_.decoder_channels) {
    graph_layers_->push_back(ChebConv(width, c, config_.chebyshev_order, lap_t));
    width = c;
  }
  register_module("graph_layers", graph_layers_);
  head_ = register_module("head", torch::nn::Linear(width, 2));
  // Coordinates live in [0, 1]; start predictions at the frame center.
  torch::NoGradGuard guard;
  head_->bias.fill_(0.5);
}

std::pair<torch::Tensor, torch::Tensor> LandmarkNetImpl::encode(const torch::Tensor& images) {
  auto h = encoder_->forward(images).flatten(1);
  return {mu_(h), logvar_(h)};
}

torch::Tensor LandmarkNetImpl::decode_features(const torch::Tensor& z) {
  const int64_t nodes = topology_.layout()->total_nodes();
  auto x = torch::relu(expand_(z)).view({z.size(0), nodes, first_width_});
  for (std::size_t i = 0; i < graph_layers_->size(); ++i) x = torch::relu(graph_layers_[i]->as<ChebConv>()->forward(x));
  return x;
}

torch::Tensor LandmarkNetImpl::head(const torch::Tensor& features) { return head_(features); }

torch::Tensor LandmarkNetImpl::decode(const torch::Tensor& z) { return head(decode_features(z)); }

LandmarkOutput LandmarkNetImpl::forward(const torch::Tensor& images, bool stochastic) {
  auto [mu, logvar] = encode(images);
  auto z = stochastic ? mu + torch::exp(0.5 * logvar) * torch::randn_like(mu) : mu;
  return {decode(z), mu, logvar};
}

UNetImpl::UNetImpl(PixelModelConfig config) : config_(std::move(config)) {
  config_.validate();
  const auto& ch = config_.channels;
  down_ = torch::nn::ModuleList();
  int64_t in = 1;
  for (auto c : ch) {
    down_->push_back(ResidualBlock(in, c, 1));
    in = c;
  }
  up_ = torch::nn::ModuleList();
  for (std::size_t level = ch.size() - 1; level > 0; --level) up_->push_back(ResidualBlock(ch[level] + ch[level - 1], ch[level - 1], 1));
  register_module("down", down_);
  register_module("up", up_);
  heads_ = torch::nn::ModuleList();
  if (config_.mode == PixelMode::kMulticlass) {
    heads_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(ch.front(), config_.output_channels(), 1)));
  } else {
    for (int s = 0; s < config_.num_structures; ++s)
      heads_->push_back(torch::nn::Conv2d(torch::nn::Conv2dOptions(ch.front(), 1, 1)));
  }
  register_module("heads", heads_);
}

torch::Tensor UNetImpl::run(const torch::Tensor& images, const std::vector<bool>& active, torch::Tensor* bottleneck_out) {
  std::vector<torch::Tensor> skips;
  auto x = images;
  for (std::size_t level = 0; level < down_->size(); ++level) {
    if (level > 0) x = F::max_pool2d(x, F::MaxPool2dFuncOptions(2));
    x = down_[level]->as<ResidualBlock>()->forward(x);
    skips.push_back(x);
  }
  if (bottleneck_out) {
    *bottleneck_out = x;
    return {};
  }
  for (std::size_t i = 0; i < up_->size(); ++i) {
    const auto& skip = skips[skips.size() - 2 - i];
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{skip.size(2), skip.size(3)})
                              .mode(torch::kBilinear)
                              .align_corners(false));
    x = up_[i]->as<ResidualBlock>()->forward(torch::cat({x, skip}, 1));
  }
  std::vector<torch::Tensor> outs;
  for (std::size_t h = 0; h < heads_->size(); ++h) {
    auto out = heads_[h]->as<torch::nn::Conv2d>()->forward(x);
    outs.push_back(h < active.size() && !active[h] ? out.detach() : out);
  }
  return outs.size() == 1 ? outs.front() : torch::cat(outs, 1);
}

torch::Tensor UNetImpl::forward(const torch::Tensor& images, const std::vector<bool>& active) {
  return run(images, active, nullptr);
}

torch::Tensor UNetImpl::predict(const torch::Tensor& images, const std::vector<bool>& active) {
  auto scores = forward(images, active);
  return config_.mode == PixelMode::kMultilabelHT ? torch::sigmoid(scores) : scores;
}

torch::Tensor UNetImpl::bottleneck(const torch::Tensor& images) {
  torch::Tensor b;
  run(images, {}, &b);
  return b;
}

torch::Tensor image_tensor(const Image& image, int expected_size) {
  if (image.height != expected_size || image.width != expected_size)
    throw std::invalid_argument("image is " + std::to_string(image.height) + "x" + std::to_string(image.width) +
                                ", model expects " + std::to_string(expected_size));
  return torch::from_blob(const_cast<float*>(image.data.data()), {1, 1, image.height, image.width}, torch::kFloat)
      .clone();
}

LandmarkPrediction landmark_forward(LandmarkNet& model, const Image& image, bool stochastic) {
  torch::NoGradGuard guard;
  auto out = model->forward(image_tensor(image, model->config().input_size), stochastic);
  if (!torch::isfinite(out.coords).all().item<bool>()) throw std::runtime_error("non-finite landmark output");
  auto coords = out.coords[0].to(torch::kDouble).contiguous();
  const int64_t d = coords.size(0);
  Eigen::MatrixX2d m(d, 2);
  auto acc = coords.accessor<double, 2>();
  for (int64_t i = 0; i < d; ++i) m.row(i) << acc[i][0], acc[i][1];
  auto to_vec = [](const torch::Tensor& t) {
    auto c = t.contiguous();
    return std::vector<float>(c.data_ptr<float>(), c.data_ptr<float>() + c.numel());
  };
  return {LandmarkSet(model->topology().layout(), std::move(m)), to_vec(out.mu[0]), to_vec(out.logvar[0])};
}

torch::Tensor pixel_forward(UNet& model, const Image& image) {
  torch::NoGradGuard guard;
  return model->predict(image_tensor(image, model->config().input_size))[0];
}

}  // namespace heteroseg
