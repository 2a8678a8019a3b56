#include "heteroseg/objectives.hpp"

#include <stdexcept>

namespace heteroseg {

LossValue Loss::value() const {
  LossValue v;
  v.total = total.item<double>();
  for (const auto& [name, t] : components) v.components[name] = t.item<double>();
  return v;
}

Loss masked_landmark_mse(const torch::Tensor& pred, const torch::Tensor& target, const torch::Tensor& mask) {
  if (pred.sizes() != target.sizes() || pred.size(-1) != 2)
    throw std::invalid_argument("masked_landmark_mse: pred/target shape mismatch");
  auto m = mask.to(torch::kBool);
  if (m.dim() == 1 && pred.dim() == 3) m = m.unsqueeze(0).expand({pred.size(0), m.size(0)});
  if (m.sizes() != pred.sizes().slice(0, pred.dim() - 1))
    throw std::invalid_argument("masked_landmark_mse: mask shape mismatch");
  if (!m.any().item<bool>()) throw std::invalid_argument("masked_landmark_mse: mask selects no nodes");
  // Row selection (not multiplication) keeps excluded rows out of the graph.
  auto diff = pred.index({m}) - target.index({m});
  auto mse = diff.pow(2).mean();
  return {mse, {{"mse", mse}}};
}

torch::Tensor soft_dice_binary(const torch::Tensor& prob, const torch::Tensor& target) {
  if (prob.sizes() != target.sizes()) throw std::invalid_argument("soft_dice_binary: shape mismatch");
  {
    torch::NoGradGuard guard;
    if (prob.numel() > 0 && (prob.min().item<double>() < 0.0 || prob.max().item<double>() > 1.0))
      throw std::invalid_argument("soft_dice_binary: probabilities outside [0, 1]");
  }
  auto g = target.to(prob.dtype());
  auto inter = (prob * g).sum();
  auto denom = prob.sum() + g.sum();
  if (denom.item<double>() < kSoftDiceEps) return torch::zeros({}, prob.options());
  return 1.0 - 2.0 * inter / (denom + kSoftDiceEps);
}

namespace {

torch::Tensor bce(const torch::Tensor& prob, const torch::Tensor& target) {
  auto p = prob.clamp(kBceClamp, 1.0 - kBceClamp);
  auto g = target.to(prob.dtype());
  return -(g * p.log() + (1.0 - g) * (1.0 - p).log()).mean();
}

// Mean soft-Dice loss over the leading (sample) dimension.
torch::Tensor per_sample_dice(const torch::Tensor& prob, const torch::Tensor& target) {
  std::vector<torch::Tensor> terms;
  for (int64_t b = 0; b < prob.size(0); ++b) terms.push_back(soft_dice_binary(prob[b], target[b]));
  return torch::stack(terms).mean();
}

}  // namespace

Loss het_pixel_loss(const torch::Tensor& probs, const torch::Tensor& targets, const LabelAvailability& avail,
                    const std::vector<Structure>& structures) {
  auto p = probs.dim() == 3 ? probs.unsqueeze(0) : probs;
  auto t = targets.dim() == 3 ? targets.unsqueeze(0) : targets;
  if (p.dim() != 4 || p.sizes() != t.sizes()) throw std::invalid_argument("het_pixel_loss: shape mismatch");
  if (p.size(1) != static_cast<int64_t>(structures.size()))
    throw std::invalid_argument("het_pixel_loss: one map per layout structure expected");
  for (Structure s : avail.list())
    if (std::find(structures.begin(), structures.end(), s) == structures.end())
      throw std::invalid_argument("het_pixel_loss: missing map for available " + std::string(to_string(s)));
  auto bce_total = torch::zeros({}, p.options());
  auto dice_total = torch::zeros({}, p.options());
  for (std::size_t k = 0; k < structures.size(); ++k) {
    if (!avail.contains(structures[k])) continue;
    auto pk = p.select(1, static_cast<int64_t>(k));
    auto tk = t.select(1, static_cast<int64_t>(k));
    bce_total = bce_total + bce(pk, tk);
    dice_total = dice_total + per_sample_dice(pk, tk);
  }
  return {bce_total + dice_total, {{"bce", bce_total}, {"dice", dice_total}}};
}

Loss multiclass_loss(const torch::Tensor& logits, const torch::Tensor& target) {
  if (logits.dim() != 4 || target.dim() != 3 || logits.size(0) != target.size(0) ||
      logits.size(2) != target.size(1) || logits.size(3) != target.size(2))
    throw std::invalid_argument("multiclass_loss: expected logits [B,K,H,W] and target [B,H,W]");
  const int64_t k = logits.size(1);
  auto labels = target.to(torch::kLong);
  if (labels.min().item<int64_t>() < 0 || labels.max().item<int64_t>() >= k)
    throw std::invalid_argument("multiclass_loss: label out of range");
  auto ce = torch::nn::functional::cross_entropy(logits, labels);
  auto probs = torch::softmax(logits, 1);
  auto onehot = torch::one_hot(labels, k).permute({0, 3, 1, 2}).to(logits.dtype());
  auto dice_total = torch::zeros({}, logits.options());
  for (int64_t b = 0; b < logits.size(0); ++b) {
    std::vector<torch::Tensor> terms;
    for (int64_t c = 1; c < k; ++c) {
      auto g = onehot[b][c];
      if (g.sum().item<double>() == 0.0) continue;
      terms.push_back(soft_dice_binary(probs[b][c], g));
    }
    if (!terms.empty()) dice_total = dice_total + torch::stack(terms).mean();
  }
  dice_total = dice_total / static_cast<double>(logits.size(0));
  return {ce + dice_total, {{"ce", ce}, {"dice", dice_total}}};
}

torch::Tensor kl_latent(const torch::Tensor& mu, const torch::Tensor& logvar) {
  if (mu.sizes() != logvar.sizes()) throw std::invalid_argument("kl_latent: length mismatch");
  if (!torch::isfinite(mu).all().item<bool>() || !torch::isfinite(logvar).all().item<bool>())
    throw std::invalid_argument("kl_latent: non-finite input");
  auto per_dim = -0.5 * (1.0 + logvar - mu.pow(2) - logvar.exp());
  if (mu.dim() <= 1) return per_dim.sum();
  return per_dim.sum(-1).mean();
}

}  // namespace heteroseg
