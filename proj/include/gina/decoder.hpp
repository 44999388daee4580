#pragma once

#include <torch/torch.h>

#include "gina/config.hpp"
#include "gina/nn.hpp"

namespace gina {

/// Quantised latents -> intermediate tri-plane features plus a CLS summary.
///
/// z [B, 3, N_Z, N_Z, D_tok] -> features [B, 3, N_Z, N_Z, C_tok] (tanh range) and
/// cls [B, width].
struct TokenTransformerImpl : torch::nn::Module {
  explicit TokenTransformerImpl(const PipelineConfig& config);
  std::pair<torch::Tensor, torch::Tensor> forward(const torch::Tensor& z);

  std::int64_t latent_grid;
  std::int64_t token_channels;
  torch::nn::Linear in_proj{nullptr};
  torch::Tensor cls_token;
  torch::Tensor pos;
  torch::nn::ModuleList blocks;
  torch::nn::Linear out_proj{nullptr};
  torch::nn::LayerNorm out_norm{nullptr};
  torch::nn::LayerNorm cls_norm{nullptr};
};
TORCH_MODULE(TokenTransformer);

/// Stack of FC + leaky ReLU layers mapping the CLS vector to a style vector w.
struct MappingNetworkImpl : torch::nn::Module {
  MappingNetworkImpl(std::int64_t in_dim, std::int64_t style_dim, std::int64_t layers);
  torch::Tensor forward(const torch::Tensor& cls);

  torch::nn::ModuleList fcs;
};
TORCH_MODULE(MappingNetwork);

/// Weight-modulated convolution. Each sample gets its own kernel, scaled per input
/// channel by an affine map of w and, when `demodulate`, renormalised per output
/// channel. Implemented as one grouped convolution over the batch.
struct ModulatedConvImpl : torch::nn::Module {
  ModulatedConvImpl(std::int64_t in_channels, std::int64_t out_channels, std::int64_t kernel,
                    std::int64_t style_dim, bool demodulate);
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

  std::int64_t in_channels;
  std::int64_t out_channels;
  std::int64_t kernel;
  bool demodulate;
  torch::Tensor weight;  // [out, in, k, k]
  torch::Tensor bias;    // [out]
  torch::nn::Linear affine{nullptr};
};
TORCH_MODULE(ModulatedConv);

/// One plane's generator: a sequence of blocks (two modulated 3x3 convs each,
/// the last log2(N_H / N_Z) of them preceded by 2x bilinear upsampling) and a
/// 1x1 modulated output conv without demodulation.
struct PlaneGeneratorImpl : torch::nn::Module {
  PlaneGeneratorImpl(const PipelineConfig& config);
  /// x [B, C_tok, N_Z, N_Z], w [B, style] -> [B, D_H, N_H, N_H]
  torch::Tensor forward(const torch::Tensor& x, const torch::Tensor& w);

  std::vector<bool> upsample;
  torch::nn::ModuleList convs;
  ModulatedConv to_plane{nullptr};
};
TORCH_MODULE(PlaneGenerator);

/// Full decoder G up to (not including) the field MLP and renderer.
struct TriPlaneDecoderImpl : torch::nn::Module {
  explicit TriPlaneDecoderImpl(const PipelineConfig& config);

  /// z [B, 3, N_Z, N_Z, D_tok] -> (features, cls)
  std::pair<torch::Tensor, torch::Tensor> token_transform(const torch::Tensor& z);

  /// (features [B, 3, N_Z, N_Z, C_tok], cls [B, width]) -> planes [B, 3, D_H, N_H, N_H]
  torch::Tensor synthesize_planes(const torch::Tensor& features, const torch::Tensor& cls);

  torch::Tensor forward(const torch::Tensor& z);

  TokenTransformer tokens{nullptr};
  MappingNetwork mapping{nullptr};
  torch::nn::ModuleList generators;
};
TORCH_MODULE(TriPlaneDecoder);

}  // namespace gina
