#include "gina/losses.hpp"

#include <cmath>
#include <stdexcept>

#include "gina/rng.hpp"

namespace gina {

namespace F = torch::nn::functional;

FeaturePyramid::FeaturePyramid(std::uint64_t seed, std::vector<std::int64_t> channels)
    : channels_(std::move(channels)) {
  auto gen = make_generator(seed);
  std::int64_t in = 3;
  for (auto c : channels_) {
    // He-normal so activations keep their scale through the ReLUs.
    const double std = std::sqrt(2.0 / static_cast<double>(in * 9));
    weights_.push_back(torch::randn({c, in, 3, 3}, gen, torch::kFloat32) * std);
    biases_.push_back(torch::randn({c}, gen, torch::kFloat32) * 0.1);
    in = c;
  }
}

std::vector<torch::Tensor> FeaturePyramid::features(const torch::Tensor& images) const {
  auto x = images.permute({0, 3, 1, 2});
  std::vector<torch::Tensor> out;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& w = weights_[l].to(x.scalar_type());
    const auto& b = biases_[l].to(x.scalar_type());
    x = torch::relu(F::conv2d(x, w, F::Conv2dFuncOptions().bias(b).stride(2).padding(1)));
    out.push_back(x);
  }
  return out;
}

torch::Tensor FeaturePyramid::embed(const torch::Tensor& images) const {
  return features(images).back().mean({2, 3}).to(torch::kFloat64);
}

PatchFeatureL2::PatchFeatureL2(std::uint64_t seed) : pyramid_(seed, {16, 32, 64}) {}

torch::Tensor PatchFeatureL2::distance(const torch::Tensor& a, const torch::Tensor& b) const {
  auto fa = pyramid_.features(a);
  auto fb = pyramid_.features(b);
  auto total = torch::zeros({}, a.options());
  for (std::size_t l = 0; l < fa.size(); ++l) {
    auto na = fa[l] / (fa[l].pow(2).sum(1, true) + 1e-10).sqrt();
    auto nb = fb[l] / (fb[l].pow(2).sum(1, true) + 1e-10).sqrt();
    total = total + (na - nb).pow(2).sum(1).mean();
  }
  return total;
}

namespace {

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2));
}

torch::nn::Conv2d conv(std::int64_t in, std::int64_t out, std::int64_t k, bool bias = true) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).padding(k / 2).bias(bias));
}

}  // namespace

DiscriminatorImpl::DiscriminatorImpl(std::int64_t resolution, std::vector<std::int64_t> ch) {
  from_rgb = register_module("from_rgb", conv(3, ch[0], 1));
  std::int64_t res = resolution;
  for (std::size_t i = 1; i < ch.size(); ++i) {
    convs->push_back(conv(ch[i - 1], ch[i - 1], 3));
    convs->push_back(conv(ch[i - 1], ch[i], 3));
    skips->push_back(conv(ch[i - 1], ch[i], 1, false));
    res /= 2;
  }
  register_module("convs", convs);
  register_module("skips", skips);
  if (res < 1) throw std::invalid_argument("discriminator has too many blocks for the resolution");
  fc = register_module("fc", torch::nn::Linear(ch.back() * res * res, ch.back()));
  out = register_module("out", torch::nn::Linear(ch.back(), 1));
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images) {
  auto x = lrelu(from_rgb(images.permute({0, 3, 1, 2}) * 2.0 - 1.0));
  for (std::size_t i = 0; i < skips->size(); ++i) {
    auto skip = F::avg_pool2d(skips[i]->as<torch::nn::Conv2d>()->forward(x), F::AvgPool2dFuncOptions(2));
    auto h = lrelu(convs[2 * i]->as<torch::nn::Conv2d>()->forward(x));
    h = lrelu(convs[2 * i + 1]->as<torch::nn::Conv2d>()->forward(h));
    h = F::avg_pool2d(h, F::AvgPool2dFuncOptions(2));
    x = (h + skip) / std::sqrt(2.0);
  }
  x = lrelu(fc(x.flatten(1)));
  return out(x).squeeze(1);
}

namespace {

torch::Tensor as_float(const torch::Tensor& m, const torch::Tensor& like) {
  return m.to(like.scalar_type());
}

}  // namespace

torch::Tensor loss_rgb(const torch::Tensor& x_hat, const torch::Tensor& x, const torch::Tensor& m,
                       const PerceptualBackend* perceptual, torch::Tensor* perceptual_out) {
  if (x_hat.sizes() != x.sizes()) throw std::invalid_argument("loss_rgb: image shapes differ");
  auto mf = as_float(m, x_hat).unsqueeze(-1);
  auto l2 = ((x_hat - x) * mf).pow(2).mean();
  torch::Tensor p = torch::zeros({}, x_hat.options());
  if (perceptual) p = perceptual->distance(x_hat * mf, x * mf);
  if (perceptual_out) *perceptual_out = p;
  return l2;
}

torch::Tensor loss_alpha(const torch::Tensor& alpha, const torch::Tensor& m,
                         const torch::Tensor& m_skyroad) {
  if ((m.to(torch::kBool) & m_skyroad.to(torch::kBool)).any().item<bool>()) {
    throw std::invalid_argument("loss_alpha: object and sky/road masks overlap");
  }
  auto mo = as_float(m, alpha);
  auto ms = as_float(m_skyroad, alpha);
  return ((alpha - 1.0).pow(2) * mo + alpha.pow(2) * ms).mean();
}

torch::Tensor loss_depth(const torch::Tensor& rendered, const torch::Tensor& depth,
                         const torch::Tensor& valid, const torch::Tensor& m) {
  auto sel = as_float(valid.to(torch::kBool) & m.to(torch::kBool), rendered);
  auto count = sel.sum();
  if (count.item<double>() == 0.0) return (rendered * 0.0).sum();
  return ((rendered - depth).pow(2) * sel).sum() / count;
}

torch::Tensor loss_semantic(const torch::Tensor& rendered, const torch::Tensor& target,
                            const torch::Tensor& m) {
  if (!target.defined()) throw std::invalid_argument("semantic field enabled without target features");
  if (!rendered.defined()) throw std::invalid_argument("semantic field enabled but nothing rendered");
  auto mf = as_float(m, rendered).unsqueeze(-1);
  auto count = mf.sum() * static_cast<double>(rendered.size(-1));
  if (count.item<double>() == 0.0) return (rendered * 0.0).sum();
  return ((rendered - target).pow(2) * mf).sum() / count;
}

torch::Tensor gan_generator_loss(const torch::Tensor& fake_logits) {
  return F::softplus(-fake_logits).mean();
}

torch::Tensor gan_discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits) {
  return F::softplus(-real_logits).mean() + F::softplus(fake_logits).mean();
}

torch::Tensor r1_penalty(const torch::Tensor& real_logits, const torch::Tensor& real, double gamma) {
  auto g = torch::autograd::grad({real_logits.sum()}, {real}, {}, true, true)[0];
  return 0.5 * gamma * g.pow(2).flatten(1).sum(1).mean();
}

}  // namespace gina
