#pragma once

#include <torch/torch.h>

#include "gina/config.hpp"
#include "gina/nn.hpp"

namespace gina {

/// Image -> continuous tri-plane embedding.
///
/// Images are cut into non-overlapping patch_size^2 patches, projected to tokens
/// and processed by ViT blocks (with a CLS token). A learnable tri-plane query grid
/// of 3 * N_Z^2 slots then cross-attends to the image tokens; a final linear layer,
/// LayerNorm and tanh produce D_tok channels per slot.
///
/// Input images are [B, H, W, 3]; output is [B, 3, N_Z, N_Z, D_tok] with planes
/// ordered xy, xz, yz and cells row-major inside each plane.
struct TriPlaneEncoderImpl : torch::nn::Module {
  explicit TriPlaneEncoderImpl(const PipelineConfig& config);

  /// [B, H, W, 3] -> [B, (H/p)(W/p) + 1, D_img]; token 0 is CLS. Positional
  /// embeddings are added.
  torch::Tensor patchify(const torch::Tensor& images);

  torch::Tensor forward(const torch::Tensor& images);

  std::int64_t image_resolution;
  std::int64_t patch_size;
  std::int64_t latent_grid;
  std::int64_t token_dim;

  torch::nn::Linear patch_proj{nullptr};
  torch::Tensor cls_token;
  torch::Tensor patch_pos;
  torch::nn::ModuleList vit_blocks;
  torch::Tensor triplane_query;  // [3 * N_Z^2, D_img]
  torch::nn::Linear query_proj{nullptr};
  torch::nn::ModuleList cross_blocks;
  torch::nn::LayerNorm context_norm{nullptr};
  torch::nn::Linear head{nullptr};
  torch::nn::LayerNorm head_norm{nullptr};
};
TORCH_MODULE(TriPlaneEncoder);

}  // namespace gina
