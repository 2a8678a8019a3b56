#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "heteroseg/objectives.hpp"

// torch ships a glog-style CHECK macro that collides with doctest.
#undef CHECK
#include <doctest.h>

using namespace heteroseg;

namespace {

torch::Tensor t2(std::vector<std::vector<double>> rows) {
  auto out = torch::empty({static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows[0].size())}, torch::kDouble);
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < rows[i].size(); ++j) out[i][j] = rows[i][j];
  return out;
}

torch::Tensor bools(std::vector<int> v) {
  auto out = torch::empty({static_cast<int64_t>(v.size())}, torch::kBool);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] != 0;
  return out;
}

}  // namespace

TEST_CASE("masked_landmark_mse examples") {
  auto zeros = torch::zeros({3, 2}, torch::kDouble);
  CHECK(masked_landmark_mse(zeros, zeros, bools({1, 1, 1})).value().total == 0.0);
  auto off = t2({{0, 0}, {0, 0}, {5, -3}});
  CHECK(masked_landmark_mse(off, zeros, bools({1, 1, 0})).value().total == 0.0);
  auto pred = t2({{0, 0}, {1, 1}, {9, 9}});
  CHECK(masked_landmark_mse(pred, zeros, bools({1, 1, 0})).value().total == doctest::Approx(0.5));
}

TEST_CASE("masked_landmark_mse errors and full-mask reduction") {
  auto a = torch::rand({2, 5, 2}, torch::kDouble);
  auto b = torch::rand({2, 5, 2}, torch::kDouble);
  CHECK_THROWS(masked_landmark_mse(a, b, bools({0, 0, 0, 0, 0})));
  CHECK_THROWS(masked_landmark_mse(a, torch::rand({2, 4, 2}, torch::kDouble), bools({1, 1, 1, 1})));
  CHECK_THROWS(masked_landmark_mse(a, b, bools({1, 1, 1})));
  auto full = masked_landmark_mse(a, b, bools({1, 1, 1, 1, 1})).total;
  CHECK(full.item<double>() == torch::mse_loss(a, b).item<double>());
}

TEST_CASE("masked_landmark_mse ignores NaN sentinels in excluded rows") {
  auto pred = torch::zeros({1, 3, 2}, torch::kDouble);
  auto target = torch::zeros({1, 3, 2}, torch::kDouble);
  target[0][2].fill_(std::nan(""));
  auto v = masked_landmark_mse(pred, target, bools({1, 1, 0})).value().total;
  CHECK(v == 0.0);
}

TEST_CASE("soft_dice_binary examples") {
  auto target = t2({{1, 0}, {1, 0}});
  CHECK(soft_dice_binary(target.clone(), target).item<double>() == doctest::Approx(0.0).epsilon(1e-6));
  CHECK(soft_dice_binary(torch::zeros({2, 2}, torch::kDouble), target).item<double>() ==
        doctest::Approx(1.0).epsilon(1e-6));
  auto half = torch::full({2, 2}, 0.5, torch::kDouble);
  CHECK(soft_dice_binary(half, target).item<double>() == doctest::Approx(1.0 - 2.0 / (4.0 + kSoftDiceEps)));
  CHECK(soft_dice_binary(torch::zeros({2, 2}), torch::zeros({2, 2})).item<double>() == 0.0);
  CHECK_THROWS(soft_dice_binary(torch::full({2, 2}, 1.5), target));
  CHECK_THROWS(soft_dice_binary(torch::zeros({3, 2}), target));
}

TEST_CASE("soft_dice_binary range, binary symmetry and monotonicity") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0, 1);
  std::bernoulli_distribution coin(0.4);
  for (int trial = 0; trial < 200; ++trial) {
    auto p = torch::empty({4, 4}, torch::kDouble), g = torch::empty({4, 4}, torch::kDouble),
         h = torch::empty({4, 4}, torch::kDouble);
    for (int i = 0; i < 16; ++i) {
      p.view(-1)[i] = u(rng);
      g.view(-1)[i] = coin(rng) ? 1.0 : 0.0;
      h.view(-1)[i] = coin(rng) ? 1.0 : 0.0;
    }
    const double v = soft_dice_binary(p, g).item<double>();
    CHECK(v >= 0.0);
    CHECK(v <= 1.0);
    CHECK(soft_dice_binary(h, g).item<double>() == doctest::Approx(soft_dice_binary(g, h).item<double>()));
  }
  // Moving mass onto the target at fixed totals lowers the loss.
  auto g = t2({{1, 1, 0, 0}});
  double prev = 2.0;
  for (double shift = 0.0; shift <= 0.5; shift += 0.1) {
    auto p = t2({{0.5 + shift, 0.5, 0.5 - shift, 0.5}});
    const double v = soft_dice_binary(p, g).item<double>();
    CHECK(v <= prev);
    prev = v;
  }
}

TEST_CASE("het_pixel_loss examples") {
  const std::vector<Structure> lh{Structure::kLungs, Structure::kHeart};
  auto lung = t2({{1, 0}, {1, 0}});
  auto targets = torch::stack({lung, t2({{0, 1}, {0, 0}})});
  auto probs = torch::stack({lung.clone(), torch::full({2, 2}, 0.3, torch::kDouble)});
  CHECK(het_pixel_loss(probs, targets, {Structure::kLungs}, lh).value().total == doctest::Approx(0.0).epsilon(1e-5));

  auto uniform = torch::stack({torch::full({2, 2}, 0.5, torch::kDouble), torch::full({2, 2}, 0.9, torch::kDouble)});
  auto v = het_pixel_loss(uniform, targets, {Structure::kLungs}, lh).value();
  CHECK(v.components.at("bce") == doctest::Approx(std::log(2.0)));
  CHECK(v.components.at("dice") == doctest::Approx(0.5));
  CHECK(v.total == doctest::Approx(1.1931).epsilon(1e-4));

  auto both = het_pixel_loss(uniform, targets, {Structure::kLungs, Structure::kHeart}, lh).value().total;
  auto l_only = het_pixel_loss(uniform.narrow(0, 0, 1), targets.narrow(0, 0, 1), {Structure::kLungs},
                               {Structure::kLungs}).value().total;
  auto h_only = het_pixel_loss(uniform.narrow(0, 1, 1), targets.narrow(0, 1, 1), {Structure::kHeart},
                               {Structure::kHeart}).value().total;
  CHECK(both == doctest::Approx(l_only + h_only));

  CHECK_THROWS(het_pixel_loss(uniform, targets, {Structure::kClavicles}, lh));
  CHECK_THROWS(het_pixel_loss(uniform.narrow(0, 0, 1), targets.narrow(0, 0, 1), {Structure::kLungs}, lh));
}

TEST_CASE("multiclass_loss examples") {
  auto target = torch::zeros({1, 2, 2}, torch::kLong);
  target[0][0][0] = 1;
  auto uniform = torch::zeros({1, 2, 2, 2}, torch::kDouble);
  CHECK(multiclass_loss(uniform, target).value().components.at("ce") == doctest::Approx(std::log(2.0)));

  auto saturated = (torch::one_hot(target, 2).permute({0, 3, 1, 2}).to(torch::kDouble) * 2 - 1) * 60.0;
  // Only the soft-Dice epsilon remains.
  CHECK(multiclass_loss(saturated, target).value().total < 1e-6);

  auto background = torch::zeros({1, 2, 2}, torch::kLong);
  auto v = multiclass_loss(uniform, background).value();
  CHECK(v.components.at("dice") == 0.0);
  CHECK(v.total == doctest::Approx(std::log(2.0)));

  auto bad = target.clone();
  bad[0][1][1] = 2;
  CHECK_THROWS(multiclass_loss(uniform, bad));
}

TEST_CASE("kl_latent examples") {
  CHECK(kl_latent(torch::zeros({4}), torch::zeros({4})).item<double>() == 0.0);
  CHECK(kl_latent(torch::ones({1}, torch::kDouble), torch::zeros({1}, torch::kDouble)).item<double>() ==
        doctest::Approx(0.5));
  CHECK(kl_latent(torch::zeros({1}, torch::kDouble), torch::ones({1}, torch::kDouble)).item<double>() ==
        doctest::Approx(-0.5 * (2.0 - std::exp(1.0))));
  CHECK(kl_latent(torch::zeros({1}, torch::kDouble), torch::ones({1}, torch::kDouble)).item<double>() ==
        doctest::Approx(0.3591).epsilon(1e-4));
  CHECK_THROWS(kl_latent(torch::zeros({2}), torch::zeros({3})));
  CHECK_THROWS(kl_latent(torch::full({2}, std::nan("")), torch::zeros({2})));
}

TEST_CASE("losses are deterministic") {
  auto p = torch::rand({2, 3, 4, 4}, torch::kDouble);
  auto g = (torch::rand({2, 3, 4, 4}, torch::kDouble) > 0.5).to(torch::kDouble);
  const std::vector<Structure> all{Structure::kLungs, Structure::kHeart, Structure::kClavicles};
  CHECK(het_pixel_loss(p, g, LabelAvailability::all(), all).value().total ==
        het_pixel_loss(p, g, LabelAvailability::all(), all).value().total);
}

TEST_CASE("gradient masking against finite differences") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 20; ++trial) {
    auto lm = gradcheck::landmark_trial(rng);
    CHECK(lm.max_excluded <= 1e-6);
    CHECK(lm.max_included_rel <= 1e-4);
    auto px = gradcheck::pixel_trial(rng);
    CHECK(px.max_excluded <= 1e-6);
    CHECK(px.max_included_rel <= 1e-4);
  }
}
