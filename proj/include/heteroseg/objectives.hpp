#pragma once

#include <map>
#include <string>
#include <vector>

#include <torch/torch.h>

#include "heteroseg/anatomy_graph.hpp"

namespace heteroseg {

inline constexpr double kSoftDiceEps = 1e-6;
inline constexpr double kBceClamp = 1e-7;

// Plain numbers for logging.
struct LossValue {
  double total = 0.0;
  std::map<std::string, double> components;
};

// Differentiable loss with named components; `total` is their weighted sum.
struct Loss {
  torch::Tensor total;
  std::map<std::string, torch::Tensor> components;

  LossValue value() const;
};

// Mean of squared coordinate errors over the rows selected by `mask`
// ([D] or [B, D] bool, pred/target [D, 2] or [B, D, 2]). Excluded rows are
// never read, so sentinel (NaN) targets there are harmless.
Loss masked_landmark_mse(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask);

// 1 - 2 sum(p g) / (sum(p) + sum(g) + eps) over the whole tensor; 0 when both
// prediction mass and target are empty.
torch::Tensor soft_dice_binary(const torch::Tensor& prob, const torch::Tensor& target);

// probs/targets: [B, S, H, W] (or [S, H, W]) with channel order `structures`.
// Sums BCE + soft Dice over available structures only; the other channels are
// not touched.
Loss het_pixel_loss(const torch::Tensor& probs, const torch::Tensor& targets, const LabelAvailability& avail,
                    const std::vector<Structure>& structures);

// logits [B, K, H, W], target [B, H, W] integer labels in [0, K).
// CE + mean over foreground classes present in the sample of (1 - soft Dice);
// classes absent from a sample's target are skipped.
Loss multiclass_loss(const torch::Tensor& logits, const torch::Tensor& target);

// Sum over latent dims of -1/2 (1 + logvar - mu^2 - exp(logvar)), averaged over
// a leading batch dim when present.
torch::Tensor kl_latent(const torch::Tensor& mu, const torch::Tensor& logvar);

}  // namespace heteroseg
