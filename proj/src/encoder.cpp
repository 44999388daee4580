#include "gina/encoder.hpp"

#include <sstream>
#include <stdexcept>

namespace gina {

TriPlaneEncoderImpl::TriPlaneEncoderImpl(const PipelineConfig& c)
    : image_resolution(c.image_resolution),
      patch_size(c.patch_size),
      latent_grid(c.latent_grid),
      token_dim(c.token_dim) {
  const auto width = c.encoder_width;
  const auto patches = (c.image_resolution / c.patch_size) * (c.image_resolution / c.patch_size);
  patch_proj = register_module("patch_proj",
                               torch::nn::Linear(c.patch_size * c.patch_size * 3, width));
  cls_token = register_parameter("cls_token", torch::zeros({1, 1, width}));
  patch_pos = register_parameter("patch_pos", torch::zeros({1, patches + 1, width}));
  for (std::int64_t i = 0; i < c.encoder_vit_blocks; ++i) {
    vit_blocks->push_back(nn::TransformerBlock(width, c.encoder_heads, c.encoder_hidden));
  }
  register_module("vit_blocks", vit_blocks);
  triplane_query = register_parameter(
      "triplane_query", torch::zeros({3 * c.latent_grid * c.latent_grid, width}));
  query_proj = register_module("query_proj", torch::nn::Linear(width, width));
  for (std::int64_t i = 0; i < c.encoder_cross_blocks; ++i) {
    cross_blocks->push_back(nn::CrossAttentionBlock(width, c.encoder_heads, c.encoder_hidden));
  }
  register_module("cross_blocks", cross_blocks);
  context_norm =
      register_module("context_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  head = register_module("head", torch::nn::Linear(width, c.token_dim));
  head_norm = register_module(
      "head_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({c.token_dim})));

  nn::init_linear_layers(*this);
  nn::trunc_normal_(cls_token, 0.02);
  nn::trunc_normal_(patch_pos, 0.02);
  // Unit-scale slot embeddings keep the cells distinct in the residual stream.
  torch::NoGradGuard guard;
  triplane_query.normal_(0.0, 1.0);
}

torch::Tensor TriPlaneEncoderImpl::patchify(const torch::Tensor& images) {
  if (images.dim() != 4 || images.size(3) != 3) {
    throw std::invalid_argument("encoder expects images shaped [B, H, W, 3]");
  }
  const auto b = images.size(0);
  const auto h = images.size(1);
  const auto w = images.size(2);
  if (h % patch_size != 0 || w % patch_size != 0) {
    std::ostringstream msg;
    msg << "image size H=" << h << ", W=" << w << " is not divisible by patch size "
        << patch_size;
    throw std::invalid_argument(msg.str());
  }
  if (h != image_resolution || w != image_resolution) {
    std::ostringstream msg;
    msg << "image size H=" << h << ", W=" << w << " does not match configured resolution "
        << image_resolution;
    throw std::invalid_argument(msg.str());
  }
  const auto gh = h / patch_size;
  const auto gw = w / patch_size;
  // [B, gh, p, gw, p, 3] -> [B, gh*gw, p*p*3]
  auto patches = images.reshape({b, gh, patch_size, gw, patch_size, 3})
                     .permute({0, 1, 3, 2, 4, 5})
                     .reshape({b, gh * gw, patch_size * patch_size * 3});
  auto tokens = patch_proj(patches);
  tokens = torch::cat({cls_token.expand({b, 1, tokens.size(2)}), tokens}, 1);
  return tokens + patch_pos;
}

torch::Tensor TriPlaneEncoderImpl::forward(const torch::Tensor& images) {
  auto tokens = patchify(images);
  for (auto& blk : *vit_blocks) tokens = blk->as<nn::TransformerBlock>()->forward(tokens);
  const auto context = context_norm(tokens);
  const auto b = images.size(0);
  auto q = query_proj(triplane_query).unsqueeze(0).expand({b, -1, -1});
  for (auto& blk : *cross_blocks) q = blk->as<nn::CrossAttentionBlock>()->forward(q, context);
  auto e = torch::tanh(head_norm(head(q)));
  return e.view({b, 3, latent_grid, latent_grid, token_dim});
}

}  // namespace gina
