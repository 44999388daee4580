#include "gina/config.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace gina {

#define GINA_CONFIG_FIELDS(X)                                                                  \
  X(preset) X(seed) X(image_resolution) X(render_resolution) X(latent_grid) X(token_dim)       \
  X(codebook_size) X(plane_resolution) X(plane_channels) X(samples_uniform)                    \
  X(samples_importance) X(density_threshold) X(world_extent) X(decode_steps)                   \
  X(commitment_weight) X(r1_gamma) X(scaled_box) X(depth_loss) X(semantic_field)               \
  X(premask_input) X(l2_codes) X(semantic_channels) X(patch_size) X(encoder_width)             \
  X(encoder_hidden) X(encoder_heads) X(encoder_vit_blocks) X(encoder_cross_blocks)             \
  X(decoder_width) X(decoder_hidden) X(decoder_heads) X(decoder_blocks)                        \
  X(decoder_token_channels) X(style_dim) X(mapping_layers) X(generator_channels)               \
  X(field_hidden) X(discriminator_channels) X(batch_size) X(lr_generator)                      \
  X(lr_discriminator) X(adam_beta1) X(adam_beta2) X(ema_decay) X(weight_rgb)                   \
  X(weight_perceptual) X(weight_gan) X(weight_vq) X(weight_alpha) X(weight_depth)              \
  X(weight_semantic) X(gan_warmup_steps) X(stage2_layers) X(stage2_width) X(stage2_hidden)     \
  X(stage2_heads) X(stage2_dropout) X(label_smoothing) X(lr_stage2) X(stage2_beta1)            \
  X(stage2_beta2) X(stage2_batch_size) X(mesh_grid) X(codebook_restart_interval)

// Fields that determine parameter shapes; a checkpoint is only loadable when these agree.
#define GINA_SHAPE_FIELDS(X)                                                                   \
  X(image_resolution) X(latent_grid) X(token_dim) X(codebook_size) X(plane_resolution)         \
  X(plane_channels) X(semantic_field) X(semantic_channels) X(patch_size) X(encoder_width)      \
  X(encoder_hidden) X(encoder_vit_blocks) X(encoder_cross_blocks) X(decoder_width)             \
  X(decoder_hidden) X(decoder_blocks) X(decoder_token_channels) X(style_dim)                   \
  X(mapping_layers) X(generator_channels) X(field_hidden) X(discriminator_channels)            \
  X(render_resolution) X(stage2_layers) X(stage2_width) X(stage2_hidden)

void to_json(nlohmann::json& j, const PipelineConfig& c) {
  j = nlohmann::json::object();
#define GINA_TO(name) j[#name] = c.name;
  GINA_CONFIG_FIELDS(GINA_TO)
#undef GINA_TO
}

void from_json(const nlohmann::json& j, PipelineConfig& c) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
#define GINA_FROM(name)                                                   \
  if (it.key() == #name) {                                                \
    it.value().get_to(c.name);                                            \
    known = true;                                                         \
  }
    GINA_CONFIG_FIELDS(GINA_FROM)
#undef GINA_FROM
    if (!known) {
      throw std::invalid_argument("unknown config field '" + it.key() + "'");
    }
  }
}

namespace {

void require_positive(std::int64_t v, const char* name) {
  if (v <= 0) {
    throw std::invalid_argument(std::string(name) + " must be strictly positive, got " +
                                std::to_string(v));
  }
}

bool is_power_of_two(std::int64_t v) { return v > 0 && std::has_single_bit(static_cast<std::uint64_t>(v)); }

}  // namespace

void PipelineConfig::validate() const {
#define GINA_POS(name) require_positive(name, #name);
  GINA_POS(image_resolution) GINA_POS(render_resolution) GINA_POS(latent_grid)
  GINA_POS(token_dim) GINA_POS(codebook_size) GINA_POS(plane_resolution)
  GINA_POS(plane_channels) GINA_POS(samples_uniform) GINA_POS(decode_steps)
  GINA_POS(patch_size) GINA_POS(encoder_width) GINA_POS(encoder_hidden) GINA_POS(encoder_heads)
  GINA_POS(decoder_width) GINA_POS(decoder_hidden) GINA_POS(decoder_heads)
  GINA_POS(decoder_token_channels) GINA_POS(style_dim) GINA_POS(mapping_layers)
  GINA_POS(field_hidden) GINA_POS(batch_size) GINA_POS(stage2_layers) GINA_POS(stage2_width)
  GINA_POS(stage2_hidden) GINA_POS(stage2_heads) GINA_POS(stage2_batch_size) GINA_POS(mesh_grid)
#undef GINA_POS
  if (samples_importance < 0) {
    throw std::invalid_argument("samples_importance must be nonnegative");
  }
  if (samples_importance > 0 && samples_uniform < 3) {
    throw std::invalid_argument("samples_uniform must be >= 3 when importance sampling is on");
  }
  if (render_resolution > image_resolution) {
    throw std::invalid_argument("render_resolution must not exceed image_resolution");
  }
  if (image_resolution % patch_size != 0) {
    throw std::invalid_argument("image_resolution must be divisible by patch_size");
  }
  if (image_resolution % render_resolution != 0) {
    throw std::invalid_argument("image_resolution must be a multiple of render_resolution");
  }
  if (encoder_width % encoder_heads != 0 || decoder_width % decoder_heads != 0 ||
      stage2_width % stage2_heads != 0) {
    throw std::invalid_argument("transformer widths must be divisible by their head counts");
  }
  if (plane_resolution % latent_grid != 0 || !is_power_of_two(plane_resolution / latent_grid)) {
    throw std::invalid_argument("plane_resolution / latent_grid must be a power of two");
  }
  const auto ups = std::countr_zero(static_cast<std::uint64_t>(plane_resolution / latent_grid));
  if (generator_channels.empty() || static_cast<std::int64_t>(generator_channels.size()) < ups) {
    throw std::invalid_argument("generator_channels needs at least log2(N_H / N_Z) blocks");
  }
  for (auto c : generator_channels) require_positive(c, "generator_channels");
  if (discriminator_channels.empty()) {
    throw std::invalid_argument("discriminator_channels must be nonempty");
  }
  for (auto c : discriminator_channels) require_positive(c, "discriminator_channels");
  if (!(density_threshold > 0.0) || !(world_extent > 0.0)) {
    throw std::invalid_argument("density_threshold and world_extent must be positive");
  }
  if (commitment_weight < 0.0 || r1_gamma < 0.0) {
    throw std::invalid_argument("commitment_weight and r1_gamma must be nonnegative");
  }
  if (!(ema_decay >= 0.0 && ema_decay <= 1.0)) {
    throw std::invalid_argument("ema_decay must lie in [0, 1]");
  }
  if (!(label_smoothing >= 0.0 && label_smoothing < 1.0)) {
    throw std::invalid_argument("label_smoothing must lie in [0, 1)");
  }
  if (semantic_field) require_positive(semantic_channels, "semantic_channels");
  if (codebook_restart_interval < 0) {
    throw std::invalid_argument("codebook_restart_interval must be nonnegative");
  }
}

PipelineConfig desk_preset() {
  PipelineConfig c;
  c.preset = "desk";
  return c;
}

PipelineConfig paper_preset() {
  PipelineConfig c;
  c.preset = "paper";
  c.image_resolution = 256;
  c.render_resolution = 128;
  c.latent_grid = 16;
  c.token_dim = 32;
  c.codebook_size = 2048;
  c.plane_resolution = 256;
  c.plane_channels = 32;
  c.samples_uniform = 24;
  c.samples_importance = 16;
  c.density_threshold = 10.0;
  c.decode_steps = 10;
  c.r1_gamma = 1.0;
  c.encoder_width = 512;
  c.encoder_hidden = 2048;
  c.encoder_heads = 8;
  c.decoder_width = 512;
  c.decoder_hidden = 2048;
  c.decoder_heads = 8;
  c.decoder_token_channels = 256;
  c.style_dim = 512;
  c.mapping_layers = 8;
  c.generator_channels = {512, 512, 256, 128};
  c.discriminator_channels = {16, 32, 64, 128, 256};
  c.stage2_layers = 12;
  c.stage2_width = 768;
  c.stage2_hidden = 3072;
  c.stage2_heads = 8;
  c.mesh_grid = 128;
  c.lr_generator = 1e-4;
  c.gan_warmup_steps = 0;
  return c;
}

PipelineConfig preset_by_name(const std::string& name) {
  if (name == "desk") return desk_preset();
  if (name == "paper") return paper_preset();
  throw std::invalid_argument("unknown preset '" + name + "' (expected desk or paper)");
}

PipelineConfig apply_overrides(const PipelineConfig& base, const nlohmann::json& overrides) {
  if (!overrides.is_object()) {
    throw std::invalid_argument("config overrides must be a JSON object");
  }
  PipelineConfig out = base;
  from_json(overrides, out);
  out.validate();
  return out;
}

std::vector<std::string> shape_mismatches(const PipelineConfig& stored,
                                          const PipelineConfig& expected) {
  std::vector<std::string> out;
#define GINA_CMP(name) \
  if (!(stored.name == expected.name)) out.emplace_back(#name);
  GINA_SHAPE_FIELDS(GINA_CMP)
#undef GINA_CMP
  return out;
}

}  // namespace gina
