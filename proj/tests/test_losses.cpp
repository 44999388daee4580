#include <doctest.h>

#include <cmath>

#include "gina/losses.hpp"

using namespace gina;

TEST_CASE("masked rgb loss hand values") {
  torch::manual_seed(0);
  auto x = torch::rand({1, 4, 4, 3});
  auto ones = torch::ones({1, 4, 4});
  CHECK(loss_rgb(x, x, ones).item<double>() == 0.0);
  CHECK(loss_rgb(torch::rand({1, 4, 4, 3}), x, torch::zeros({1, 4, 4})).item<double>() == 0.0);
  auto xh = x.clone();
  xh.slice(1, 0, 2) += 1.0;  // half of the pixels, every channel
  CHECK(loss_rgb(xh, x, ones).item<double>() == doctest::Approx(0.5).epsilon(1e-12));
  PatchFeatureL2 perceptual;
  torch::Tensor p;
  auto big = torch::rand({2, 32, 32, 3});
  CHECK(loss_rgb(big, big, torch::ones({2, 32, 32}), &perceptual, &p).item<double>() == 0.0);
  CHECK(p.item<double>() == 0.0);
  CHECK(perceptual.distance(big, torch::rand({2, 32, 32, 3})).item<double>() > 0.0);
}

TEST_CASE("alpha loss hand values") {
  auto m = torch::zeros({1, 4, 4}, torch::kBool);
  m.slice(1, 0, 1) = true;  // 25%
  auto sky = ~m;
  CHECK(loss_alpha(m.to(torch::kFloat32), m, sky).item<double>() == 0.0);
  CHECK(loss_alpha(torch::ones({1, 4, 4}), m, sky).item<double>() == doctest::Approx(0.75));
  CHECK(loss_alpha(torch::zeros({1, 4, 4}), m, sky).item<double>() == doctest::Approx(0.25));
  // Pixels in neither mask carry no supervision.
  auto sky_half = sky.clone();
  sky_half.slice(1, 2, 4) = false;
  auto a = torch::rand({1, 4, 4});
  auto b = a.clone();
  b.slice(1, 2, 4) = torch::rand({1, 2, 4});
  CHECK(loss_alpha(a, m, sky_half).item<double>() == loss_alpha(b, m, sky_half).item<double>());
  CHECK_THROWS(loss_alpha(a, m, torch::ones({1, 4, 4}, torch::kBool)));
}

TEST_CASE("gan terms at chance and the R1 penalty of a linear critic") {
  auto zero = torch::zeros({5}, torch::kFloat64);
  CHECK(gan_discriminator_loss(zero, zero).item<double>() == doctest::Approx(2 * std::log(2.0)).epsilon(1e-12));
  CHECK(gan_generator_loss(zero).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-12));

  const double a = 0.7, gamma = 1.0;
  auto real = torch::rand({3, 8, 8, 3}, torch::kFloat64).requires_grad_(true);
  auto logits = a * real.sum({1, 2, 3});
  auto r1 = r1_penalty(logits, real, gamma);
  CHECK(r1.item<double>() == doctest::Approx(gamma / 2 * a * a * 8 * 8 * 3).epsilon(1e-12));
}

TEST_CASE("data term is stationary at the symmetric point") {
  torch::manual_seed(2);
  Discriminator d(16, std::vector<std::int64_t>{4, 8});
  d->to(torch::kFloat64);
  {
    torch::NoGradGuard ng;
    d->out->weight.zero_();
    d->out->bias.zero_();
  }
  auto x = torch::rand({2, 16, 16, 3}, torch::kFloat64);
  auto loss = gan_discriminator_loss(d(x), d(x));
  auto grads = torch::autograd::grad({loss}, d->parameters(), {}, false, false, true);
  double worst = 0.0;
  for (const auto& g : grads) {
    if (g.defined()) worst = std::max(worst, g.abs().max().item<double>());
  }
  CHECK(worst == 0.0);
}

TEST_CASE("depth and semantic losses") {
  auto depth = torch::rand({1, 5, 5}) * 10;
  auto valid = torch::zeros({1, 5, 5}, torch::kBool);
  valid.view({-1}).slice(0, 0, 10) = true;
  auto m = torch::ones({1, 5, 5}, torch::kBool);
  CHECK(loss_depth(depth, depth, valid, m).item<double>() == 0.0);
  CHECK(loss_depth(depth + 2.0, depth, valid, m).item<double>() == doctest::Approx(4.0));
  CHECK(loss_depth(depth + 2.0, depth, torch::zeros_like(valid), m).item<double>() == 0.0);

  const int D = 6;
  auto feat = torch::rand({1, 5, 5, D});
  auto off = feat.clone();
  off.select(-1, 2) += 1.0;
  CHECK(loss_semantic(feat, feat, m).item<double>() == 0.0);
  CHECK(loss_semantic(off, feat, m).item<double>() == doctest::Approx(1.0 / D));
  CHECK(loss_semantic(off, feat, torch::zeros_like(m)).item<double>() == 0.0);
  CHECK_THROWS(loss_semantic(off, torch::Tensor(), m));
}
