#pragma once

#include <memory>
#include <optional>

#include <torch/torch.h>

#include "gina/config.hpp"

namespace gina {

/// Fixed, untrained convolutional pyramid (3x3 stride-2 convs + ReLU) built from a
/// seed. Serves as the dependency-free perceptual feature extractor and as the
/// image embedding network for the distribution metrics.
class FeaturePyramid {
 public:
  FeaturePyramid(std::uint64_t seed, std::vector<std::int64_t> channels);

  /// images [B, H, W, 3] in [0, 1] -> one [B, C_l, H_l, W_l] map per level.
  std::vector<torch::Tensor> features(const torch::Tensor& images) const;

  /// Global-average-pooled last level, [B, C_last] float64.
  torch::Tensor embed(const torch::Tensor& images) const;

  std::int64_t embedding_dim() const { return channels_.back(); }

 private:
  std::vector<std::int64_t> channels_;
  std::vector<torch::Tensor> weights_;
  std::vector<torch::Tensor> biases_;
};

/// Perceptual distance between two image batches; returns a scalar.
class PerceptualBackend {
 public:
  virtual ~PerceptualBackend() = default;
  virtual torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const = 0;
};

/// Mean squared difference of channel-normalised pyramid features, summed over levels.
class PatchFeatureL2 : public PerceptualBackend {
 public:
  explicit PatchFeatureL2(std::uint64_t seed = 1234);
  torch::Tensor distance(const torch::Tensor& a, const torch::Tensor& b) const override;

 private:
  FeaturePyramid pyramid_;
};

/// Backend that always returns 0.
class NoPerceptual : public PerceptualBackend {
 public:
  torch::Tensor distance(const torch::Tensor& a, const torch::Tensor&) const override {
    return torch::zeros({}, a.options());
  }
};

/// Residual image discriminator; input [B, R, R, 3] -> logits [B].
struct DiscriminatorImpl : torch::nn::Module {
  DiscriminatorImpl(std::int64_t resolution, std::vector<std::int64_t> channels);
  torch::Tensor forward(const torch::Tensor& images);

  torch::nn::Conv2d from_rgb{nullptr};
  torch::nn::ModuleList convs;
  torch::nn::ModuleList skips;
  torch::nn::Linear fc{nullptr};
  torch::nn::Linear out{nullptr};
};
TORCH_MODULE(Discriminator);

/// Mean over pixels and channels of ((x_hat - x) * m)^2, plus the perceptual
/// distance between x_hat * m and x * m when a backend is given.
/// Images [B, H, W, 3], mask [B, H, W] (bool or float).
torch::Tensor loss_rgb(const torch::Tensor& x_hat, const torch::Tensor& x, const torch::Tensor& m,
                       const PerceptualBackend* perceptual = nullptr,
                       torch::Tensor* perceptual_out = nullptr);

/// Pixel mean of (alpha - 1)^2 on m plus alpha^2 on m_skyroad. Throws if the masks overlap.
torch::Tensor loss_alpha(const torch::Tensor& alpha, const torch::Tensor& m,
                         const torch::Tensor& m_skyroad);

/// Mean squared depth error over m & valid; zero when that set is empty.
torch::Tensor loss_depth(const torch::Tensor& rendered, const torch::Tensor& depth,
                         const torch::Tensor& valid, const torch::Tensor& m);

/// Mean squared feature error over pixels in m and all channels; zero when m is empty.
/// Throws if `target` is undefined.
torch::Tensor loss_semantic(const torch::Tensor& rendered, const torch::Tensor& target,
                            const torch::Tensor& m);

/// Non-saturating generator term: mean softplus(-D(fake)).
torch::Tensor gan_generator_loss(const torch::Tensor& fake_logits);

/// mean softplus(-D(real)) + mean softplus(D(fake)).
torch::Tensor gan_discriminator_loss(const torch::Tensor& real_logits, const torch::Tensor& fake_logits);

/// gamma / 2 * mean over batch of ||dD(real)/d real||^2; `real` must require grad and
/// `real_logits` must have been computed from it.
torch::Tensor r1_penalty(const torch::Tensor& real_logits, const torch::Tensor& real, double gamma);

}  // namespace gina
