#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

namespace gina {

/// Every knob of the two-stage pipeline. Presets are produced by desk_preset()
/// and paper_preset(); a JSON file may override any subset of fields.
struct PipelineConfig {
  std::string preset = "desk";
  std::uint64_t seed = 0;

  // Resolutions and latent layout.
  std::int64_t image_resolution = 64;
  std::int64_t render_resolution = 64;
  std::int64_t latent_grid = 8;  // N_Z
  std::int64_t token_dim = 32;   // D_tok
  std::int64_t codebook_size = 512;
  std::int64_t plane_resolution = 64;  // N_H
  std::int64_t plane_channels = 16;    // D_H

  // Volume rendering.
  std::int64_t samples_uniform = 16;
  std::int64_t samples_importance = 8;
  double density_threshold = 10.0;
  double world_extent = 6.0;  // side of the unit box in meters when scaled_box is off

  // Stage-2 decoding.
  std::int64_t decode_steps = 8;

  double commitment_weight = 0.25;
  double r1_gamma = 1.0;

  bool scaled_box = true;
  bool depth_loss = false;
  bool semantic_field = false;
  bool premask_input = true;
  bool l2_codes = true;
  std::int64_t semantic_channels = 8;

  // Encoder.
  std::int64_t patch_size = 16;
  std::int64_t encoder_width = 128;
  std::int64_t encoder_hidden = 512;
  std::int64_t encoder_heads = 8;
  std::int64_t encoder_vit_blocks = 3;
  std::int64_t encoder_cross_blocks = 3;

  // Decoder: token transformer, mapping network, style generator, field MLP.
  std::int64_t decoder_width = 128;
  std::int64_t decoder_hidden = 512;
  std::int64_t decoder_heads = 8;
  std::int64_t decoder_blocks = 3;
  std::int64_t decoder_token_channels = 64;  // channels of the intermediate features
  std::int64_t style_dim = 128;
  std::int64_t mapping_layers = 8;
  std::vector<std::int64_t> generator_channels{64, 64, 32, 32};
  std::int64_t field_hidden = 64;

  // Discriminator.
  std::vector<std::int64_t> discriminator_channels{16, 32, 64, 128};

  // Stage-1 optimisation.
  std::int64_t batch_size = 1;
  double lr_generator = 2e-4;
  double lr_discriminator = 2e-4;
  double adam_beta1 = 0.5;
  double adam_beta2 = 0.9;
  double ema_decay = 0.999;
  double weight_rgb = 1.0;
  double weight_perceptual = 1.0;
  double weight_gan = 1.0;
  double weight_vq = 1.0;
  double weight_alpha = 1.0;
  double weight_depth = 1.0;
  double weight_semantic = 1.0;
  std::int64_t gan_warmup_steps = 500;
  // Codebook rows unused for this many steps are re-seeded from current embeddings (0 = never).
  std::int64_t codebook_restart_interval = 50;

  // Stage-2 transformer.
  std::int64_t stage2_layers = 4;
  std::int64_t stage2_width = 128;
  std::int64_t stage2_hidden = 512;
  std::int64_t stage2_heads = 8;
  double stage2_dropout = 0.1;
  double label_smoothing = 0.1;
  double lr_stage2 = 4e-4;
  double stage2_beta1 = 0.9;
  double stage2_beta2 = 0.96;
  std::int64_t stage2_batch_size = 8;

  // Asset export.
  std::int64_t mesh_grid = 64;

  std::int64_t total_samples() const { return samples_uniform + samples_importance; }
  std::int64_t sequence_length() const { return 3 * latent_grid * latent_grid; }

  /// Throws std::invalid_argument naming the first violated field.
  void validate() const;
};

PipelineConfig desk_preset();
PipelineConfig paper_preset();

/// Throws std::invalid_argument on an unknown preset name.
PipelineConfig preset_by_name(const std::string& name);

/// Applies the fields present in `overrides` on top of `base`; unknown keys are an error.
PipelineConfig apply_overrides(const PipelineConfig& base, const nlohmann::json& overrides);

/// Names of the fields whose values differ between the two configs.
/// Only fields that change tensor shapes are compared.
std::vector<std::string> shape_mismatches(const PipelineConfig& stored, const PipelineConfig& expected);

void to_json(nlohmann::json& j, const PipelineConfig& c);
void from_json(const nlohmann::json& j, PipelineConfig& c);

}  // namespace gina
