#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>

#include <json.hpp>
#include <torch/torch.h>

#include "gina/codebook.hpp"
#include "gina/config.hpp"
#include "gina/decoder.hpp"
#include "gina/encoder.hpp"
#include "gina/losses.hpp"
#include "gina/render.hpp"
#include "gina/types.hpp"

namespace gina {

/// Encoder, codebook, decoder and field MLP: everything the generator step updates.
struct Stage1ModelImpl : torch::nn::Module {
  explicit Stage1ModelImpl(const PipelineConfig& config);

  /// Image handed to the encoder: whitened outside the object when pre-masking is
  /// on, resized to the configured input resolution. [H, W, 3].
  torch::Tensor encoder_input(const ObjectSample& sample) const;

  /// images [B, H, W, 3] -> normalised continuous embedding [B, 3, N_Z, N_Z, D_tok]
  torch::Tensor encode(const torch::Tensor& images);

  /// Token ids [B, 3, N_Z, N_Z] -> planes [B, 3, D_H, N_H, N_H]
  torch::Tensor decode_tokens(const torch::Tensor& tokens);

  /// Renders one asset's planes [3, D_H, N_H, N_H].
  RenderOutput render_planes(const torch::Tensor& planes, const Camera& camera, const Vec3& scale,
                             std::int64_t resolution, const RenderOptions& options);

  FieldFn field_fn(const torch::Tensor& planes, const Vec3& scale);

  PipelineConfig config;
  TriPlaneEncoder encoder{nullptr};
  Codebook codebook{nullptr};
  TriPlaneDecoder decoder{nullptr};
  TriPlaneField field{nullptr};
};
TORCH_MODULE(Stage1Model);

struct LossReport {
  double rgb = 0.0;
  double perceptual = 0.0;
  double gan_g = 0.0;
  double gan_d = 0.0;
  double vq = 0.0;
  double alpha = 0.0;
  std::optional<double> depth;
  std::optional<double> semantic;
  double total = 0.0;

  bool finite() const;
  nlohmann::json to_json() const;
  bool operator==(const LossReport&) const = default;
};

struct NonFiniteLoss : std::runtime_error {
  NonFiniteLoss(const LossReport& r);
  LossReport report;
};

/// Loss tensors of one forward pass over a batch.
struct Stage1Terms {
  torch::Tensor rgb, perceptual, gan_g, vq, alpha, depth, semantic;
  torch::Tensor x_hat;   // [B, R, R, 3] composited on white
  torch::Tensor target;  // [B, R, R, 3]
  torch::Tensor mask;    // [B, R, R] float
  torch::Tensor tokens;  // [B, 3, N_Z, N_Z]
  torch::Tensor embedding;  // [B, 3, N_Z, N_Z, D_tok] normalised, pre-quantisation
};

/// Targets of a sample at render resolution (area-averaged; masks keep pixels
/// covered more than half).
struct RenderTargets {
  torch::Tensor image;  // [R, R, 3]
  torch::Tensor mask;   // [R, R] bool
  torch::Tensor skyroad;
  torch::Tensor depth;        // [R, R] or undefined
  torch::Tensor depth_valid;  // [R, R] bool or undefined
  torch::Tensor semantic;     // [R, R, D] or undefined
};
RenderTargets render_targets(const ObjectSample& sample, std::int64_t resolution);

/// Forward pass shared by training, evaluation and the occlusion tests. `step_seed`
/// drives the sampling jitter (none when empty); `discriminator` may be null.
Stage1Terms stage1_forward(Stage1Model& model, const std::vector<ObjectSample>& batch,
                           std::optional<std::uint64_t> step_seed, Discriminator* discriminator,
                           const PerceptualBackend* perceptual);

/// 10 log10(1 / MSE) over pixels inside the mask (all channels).
double masked_psnr(const torch::Tensor& x_hat, const torch::Tensor& x, const torch::Tensor& m);

/// Owns the live model, EMA shadow, discriminator and both optimisers.
class Stage1Trainer {
 public:
  explicit Stage1Trainer(const PipelineConfig& config);

  /// One alternating D / G update; throws NonFiniteLoss before touching parameters
  /// when a loss is not finite.
  LossReport train_step(const std::vector<ObjectSample>& batch);

  /// Runs `steps` updates drawing batches deterministically from `samples`.
  void fit(const std::vector<ObjectSample>& samples, std::int64_t steps,
           const std::function<void(std::int64_t, const LossReport&)>& on_step = {});

  bool gan_active() const;

  void save(const std::filesystem::path& path) const;
  /// Restores everything including optimiser state; the stored config must be
  /// shape-compatible with `config` when given.
  static Stage1Trainer load(const std::filesystem::path& path,
                            const std::optional<PipelineConfig>& config = std::nullopt);

  PipelineConfig config;
  Stage1Model model{nullptr};
  Stage1Model ema{nullptr};
  Discriminator discriminator{nullptr};
  std::unique_ptr<torch::optim::Adam> opt_g;
  std::unique_ptr<torch::optim::Adam> opt_d;
  std::shared_ptr<PerceptualBackend> perceptual;
  std::int64_t step = 0;
  torch::Tensor code_usage_window;  // [K] assignments since the last restart check

 private:
  void update_ema();
  void restart_codes(const Stage1Terms& terms);
};

/// EMA (or live) weights from a stage-1 checkpoint, in eval mode.
Stage1Model load_stage1_model(const std::filesystem::path& path, bool use_ema = true);

/// Copies `src` parameters and buffers into `dst` (same architecture).
void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src);

}  // namespace gina
