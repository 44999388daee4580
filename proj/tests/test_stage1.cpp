#include <doctest.h>

#include <filesystem>

#include "gina/stage1.hpp"
#include "gina/synthetic.hpp"
#include "test_util.hpp"

using namespace gina;

namespace {

std::vector<ObjectSample> occluded_samples(const PipelineConfig& c, std::size_t n) {
  auto g = synthetic::generator_options_for(c);
  g.occlusion_probability = 1.0;
  return synthetic::generate_samples(n, 21, g);
}

std::vector<torch::Tensor> snapshot(torch::nn::Module& m) {
  std::vector<torch::Tensor> out;
  for (const auto& p : m.parameters()) out.push_back(p.detach().clone());
  return out;
}

bool same(const std::vector<torch::Tensor>& a, const std::vector<torch::Tensor>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!torch::equal(a[i], b[i])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("occluder pixels change no stage-1 loss term") {
  auto c = testing::tiny_config();
  c.depth_loss = true;
  auto samples = occluded_samples(c, 2);
  auto perturbed = samples;
  std::int64_t touched = 0;
  for (auto& s : perturbed) {
    auto occ = ~(s.object_mask | s.skyroad_mask);
    touched += occ.sum().item<std::int64_t>();
    s.image = torch::where(occ.unsqueeze(-1), torch::rand_like(s.image), s.image);
  }
  REQUIRE(touched > 0);
  Stage1Trainer tr(c);
  Discriminator disc(c.render_resolution, c.discriminator_channels);
  PatchFeatureL2 perceptual;
  auto a = stage1_forward(tr.model, samples, 5, &disc, &perceptual);
  auto b = stage1_forward(tr.model, perturbed, 5, &disc, &perceptual);
  CHECK(torch::equal(a.rgb, b.rgb));
  CHECK(torch::equal(a.perceptual, b.perceptual));
  CHECK(torch::equal(a.alpha, b.alpha));
  CHECK(torch::equal(a.vq, b.vq));
  CHECK(torch::equal(a.depth, b.depth));
  CHECK(torch::equal(a.gan_g, b.gan_g));
  CHECK(torch::equal(a.tokens, b.tokens));
  // Sanity: object pixels do matter.
  auto moved = samples;
  moved[0].image = torch::where(moved[0].object_mask.unsqueeze(-1), 1.0 - moved[0].image, moved[0].image);
  CHECK_FALSE(torch::equal(stage1_forward(tr.model, moved, 5, &disc, &perceptual).rgb, a.rgb));
}

TEST_CASE("all-zero loss weights leave the parameters unchanged") {
  auto c = testing::tiny_config();
  c.weight_rgb = c.weight_perceptual = c.weight_gan = c.weight_vq = c.weight_alpha = 0.0;
  auto samples = occluded_samples(c, 1);
  Stage1Trainer tr(c);
  auto before = snapshot(*tr.model);
  tr.train_step(samples);
  CHECK(same(before, snapshot(*tr.model)));
}

TEST_CASE("a training step keeps codebook rows unit norm and moves the weights") {
  auto c = testing::tiny_config();
  auto samples = occluded_samples(c, 1);
  Stage1Trainer tr(c);
  auto before = snapshot(*tr.model);
  auto r = tr.train_step(samples);
  CHECK(r.finite());
  CHECK(r.total == doctest::Approx(r.rgb + r.perceptual + r.vq + r.alpha));
  CHECK_FALSE(same(before, snapshot(*tr.model)));
  auto norms = tr.model->codebook->entries.norm(2, -1);
  CHECK(torch::allclose(norms, torch::ones_like(norms), 0, 1e-5));
}

TEST_CASE("adversarial step updates the discriminator once the warm-up is over") {
  auto c = testing::tiny_config();
  c.gan_warmup_steps = 1;
  auto samples = occluded_samples(c, 1);
  Stage1Trainer tr(c);
  CHECK_FALSE(tr.gan_active());
  auto d0 = snapshot(*tr.discriminator);
  CHECK(tr.train_step(samples).gan_d == 0.0);
  CHECK(same(d0, snapshot(*tr.discriminator)));
  CHECK(tr.gan_active());
  auto r = tr.train_step(samples);
  CHECK(r.gan_d > 0.0);
  CHECK(r.gan_g > 0.0);
  CHECK_FALSE(same(d0, snapshot(*tr.discriminator)));
}

TEST_CASE("stage-1 training is deterministic and resumes bit-exactly") {
  auto c = testing::tiny_config();
  c.gan_warmup_steps = 1;
  c.codebook_restart_interval = 2;
  auto samples = occluded_samples(c, 3);
  std::vector<LossReport> ra, rb;
  Stage1Trainer a(c);
  a.fit(samples, 3, [&](std::int64_t, const LossReport& r) { ra.push_back(r); });
  Stage1Trainer b(c);
  b.fit(samples, 1, [&](std::int64_t, const LossReport& r) { rb.push_back(r); });
  const auto path = std::filesystem::temp_directory_path() / "gina_stage1_resume.ckpt";
  b.save(path);
  auto resumed = Stage1Trainer::load(path, c);
  CHECK(resumed.step == 1);
  resumed.fit(samples, 2, [&](std::int64_t, const LossReport& r) { rb.push_back(r); });
  CHECK((ra == rb));
  CHECK(same(snapshot(*a.model), snapshot(*resumed.model)));
  CHECK(same(snapshot(*a.ema), snapshot(*resumed.ema)));
  CHECK(same(snapshot(*a.discriminator), snapshot(*resumed.discriminator)));
  auto wrong = c;
  wrong.codebook_size = 64;
  CHECK_THROWS_WITH(Stage1Trainer::load(path, wrong), doctest::Contains("codebook_size"));
  std::filesystem::remove(path);
}

TEST_CASE("non-finite losses abort before any update") {
  auto c = testing::tiny_config();
  c.depth_loss = true;
  auto samples = occluded_samples(c, 1);
  samples[0].depth = torch::full_like(*samples[0].depth, NAN);
  Stage1Trainer tr(c);
  auto before = snapshot(*tr.model);
  CHECK_THROWS_AS(tr.train_step(samples), NonFiniteLoss);
  CHECK(same(before, snapshot(*tr.model)));
  CHECK(tr.step == 0);
}

TEST_CASE("masked PSNR") {
  auto x = torch::zeros({1, 4, 4, 3});
  auto m = torch::ones({1, 4, 4});
  CHECK(masked_psnr(x + 0.1, x, m) == doctest::Approx(20.0));
  CHECK_THROWS(masked_psnr(x, x, torch::zeros({1, 4, 4})));
}
