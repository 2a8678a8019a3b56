#pragma once

// Finite-difference checks of the availability-masked losses, shared by the
// unit tests and the acceptance runner.

#include <cmath>
#include <limits>
#include <random>

#include <torch/torch.h>

#include "heteroseg/anatomy_graph.hpp"
#include "heteroseg/objectives.hpp"

namespace heteroseg::gradcheck {

struct Result {
  double max_excluded = 0;     // largest |gradient| (analytic or numeric) on excluded entries
  double max_included_rel = 0; // largest relative analytic/numeric mismatch on included entries
  int included = 0;
  int excluded = 0;
};

inline constexpr double kStep = 1e-6;
// Denominator floor for the relative comparison of near-zero gradients.
inline constexpr double kRelFloor = 1e-6;

template <typename F>
void compare(const torch::Tensor& x, const torch::Tensor& excluded, F&& loss_of, Result& r) {
  auto input = x.clone().set_requires_grad(true);
  auto loss = loss_of(input);
  loss.backward();
  auto analytic = input.grad().reshape(-1);
  auto flat = x.reshape(-1);
  auto excl = excluded.reshape(-1);
  torch::NoGradGuard guard;
  for (int64_t i = 0; i < flat.numel(); ++i) {
    auto plus = flat.clone(), minus = flat.clone();
    plus[i] += kStep;
    minus[i] -= kStep;
    const double numeric = (loss_of(plus.view(x.sizes())).template item<double>() -
                            loss_of(minus.view(x.sizes())).template item<double>()) /
                           (2 * kStep);
    const double a = analytic[i].template item<double>();
    if (excl[i].template item<bool>()) {
      r.max_excluded = std::max({r.max_excluded, std::abs(a), std::abs(numeric)});
      ++r.excluded;
    } else {
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), kRelFloor});
      r.max_included_rel = std::max(r.max_included_rel, rel);
      ++r.included;
    }
  }
}

inline StructureLayout random_layout(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> nblocks(1, 3), count(3, 7);
  std::vector<std::pair<std::string, int>> counts;
  const int k = nblocks(rng);
  for (int i = 0; i < k; ++i) counts.push_back({std::string(short_name(kAllStructures[i])), count(rng)});
  return build_layout(counts);
}

inline LabelAvailability random_nonempty_subset(const StructureLayout& layout, std::mt19937_64& rng) {
  const auto structs = layout.structures();
  std::uniform_int_distribution<int> bits(1, (1 << structs.size()) - 1);
  const int b = bits(rng);
  LabelAvailability a;
  for (std::size_t i = 0; i < structs.size(); ++i)
    if (b & (1 << i)) a.insert(structs[i]);
  return a;
}

// masked_landmark_mse on a random [B, D, 2] prediction; excluded target rows
// hold NaN.
inline Result landmark_trial(std::mt19937_64& rng) {
  const auto layout = random_layout(rng);
  const auto avail = random_nonempty_subset(layout, rng);
  const int64_t d = layout.total_nodes();
  const int64_t b = std::uniform_int_distribution<int>(1, 3)(rng);
  const auto mask_vec = availability_mask(layout, avail);
  auto mask = torch::zeros({d}, torch::kBool);
  for (int64_t i = 0; i < d; ++i) mask[i] = static_cast<bool>(mask_vec[i]);
  auto gen = [&](int64_t n) {
    std::uniform_real_distribution<double> u(0, 1);
    auto t = torch::empty({n}, torch::kDouble);
    for (int64_t i = 0; i < n; ++i) t[i] = u(rng);
    return t;
  };
  auto pred = gen(b * d * 2).view({b, d, 2});
  auto target = gen(b * d * 2).view({b, d, 2});
  auto excluded = (~mask).view({1, d, 1}).expand({b, d, 2});
  target.masked_fill_(excluded, std::numeric_limits<double>::quiet_NaN());
  Result r;
  compare(pred, excluded, [&](const torch::Tensor& p) { return masked_landmark_mse(p, target, mask).total; }, r);
  return r;
}

// het_pixel_loss on random [B, S, H, W] probabilities in [0.05, 0.95].
inline Result pixel_trial(std::mt19937_64& rng) {
  const auto layout = random_layout(rng);
  const auto structs = layout.structures();
  const auto avail = random_nonempty_subset(layout, rng);
  const int64_t b = std::uniform_int_distribution<int>(1, 2)(rng);
  const int64_t h = std::uniform_int_distribution<int>(2, 4)(rng);
  const int64_t w = std::uniform_int_distribution<int>(2, 4)(rng);
  const int64_t s = static_cast<int64_t>(structs.size());
  std::uniform_real_distribution<double> u(0.05, 0.95);
  std::bernoulli_distribution coin(0.5);
  auto probs = torch::empty({b, s, h, w}, torch::kDouble);
  auto targets = torch::empty({b, s, h, w}, torch::kDouble);
  auto pa = probs.accessor<double, 4>();
  auto ta = targets.accessor<double, 4>();
  for (int64_t i = 0; i < b; ++i)
    for (int64_t k = 0; k < s; ++k)
      for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) {
          pa[i][k][y][x] = u(rng);
          ta[i][k][y][x] = coin(rng) ? 1.0 : 0.0;
        }
  auto excluded = torch::zeros({b, s, h, w}, torch::kBool);
  for (int64_t k = 0; k < s; ++k)
    if (!avail.contains(structs[k])) excluded.select(1, k).fill_(true);
  Result r;
  compare(probs, excluded, [&](const torch::Tensor& p) { return het_pixel_loss(p, targets, avail, structs).total; },
          r);
  return r;
}

}  // namespace heteroseg::gradcheck
