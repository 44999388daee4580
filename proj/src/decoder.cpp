#include "gina/decoder.hpp"

#include <bit>
#include <cmath>
#include <stdexcept>

namespace gina {

namespace F = torch::nn::functional;

namespace {

torch::Tensor lrelu(const torch::Tensor& x) {
  return F::leaky_relu(x, F::LeakyReLUFuncOptions().negative_slope(0.2)) * std::sqrt(2.0);
}

}  // namespace

TokenTransformerImpl::TokenTransformerImpl(const PipelineConfig& c)
    : latent_grid(c.latent_grid), token_channels(c.decoder_token_channels) {
  const auto width = c.decoder_width;
  in_proj = register_module("in_proj", torch::nn::Linear(c.token_dim, width));
  cls_token = register_parameter("cls_token", torch::zeros({1, 1, width}));
  pos = register_parameter("pos", torch::zeros({1, c.sequence_length() + 1, width}));
  for (std::int64_t i = 0; i < c.decoder_blocks; ++i) {
    blocks->push_back(nn::TransformerBlock(width, c.decoder_heads, c.decoder_hidden));
  }
  register_module("blocks", blocks);
  out_proj = register_module("out_proj", torch::nn::Linear(width, token_channels));
  out_norm = register_module("out_norm",
                             torch::nn::LayerNorm(torch::nn::LayerNormOptions({token_channels})));
  cls_norm = register_module("cls_norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({width})));
  nn::init_linear_layers(*this);
  nn::trunc_normal_(cls_token, 0.02);
  torch::NoGradGuard guard;
  pos.normal_(0.0, 1.0);
}

std::pair<torch::Tensor, torch::Tensor> TokenTransformerImpl::forward(const torch::Tensor& z) {
  const auto b = z.size(0);
  auto x = in_proj(z.reshape({b, -1, z.size(-1)}));
  x = torch::cat({cls_token.expand({b, 1, x.size(2)}), x}, 1) + pos;
  for (auto& blk : *blocks) x = blk->as<nn::TransformerBlock>()->forward(x);
  auto cls = cls_norm(x.select(1, 0));
  auto feats = torch::tanh(out_norm(out_proj(x.slice(1, 1))));
  return {feats.view({b, 3, latent_grid, latent_grid, token_channels}), cls};
}

MappingNetworkImpl::MappingNetworkImpl(std::int64_t in_dim, std::int64_t style_dim,
                                       std::int64_t layers) {
  for (std::int64_t i = 0; i < layers; ++i) {
    fcs->push_back(torch::nn::Linear(i == 0 ? in_dim : style_dim, style_dim));
  }
  register_module("fcs", fcs);
  nn::init_linear_layers(*this);
}

torch::Tensor MappingNetworkImpl::forward(const torch::Tensor& cls) {
  auto x = cls * torch::rsqrt(cls.pow(2).mean(-1, true) + 1e-8);
  for (auto& fc : *fcs) x = lrelu(fc->as<torch::nn::Linear>()->forward(x));
  return x;
}

ModulatedConvImpl::ModulatedConvImpl(std::int64_t in_c, std::int64_t out_c, std::int64_t k,
                                     std::int64_t style_dim, bool demod)
    : in_channels(in_c), out_channels(out_c), kernel(k), demodulate(demod) {
  weight = register_parameter(
      "weight", torch::randn({out_c, in_c, k, k}) / std::sqrt(static_cast<double>(in_c * k * k)));
  bias = register_parameter("bias", torch::zeros({out_c}));
  affine = register_module("affine", torch::nn::Linear(style_dim, in_c));
  torch::NoGradGuard guard;
  torch::nn::init::xavier_uniform_(affine->weight);
  affine->bias.fill_(1.0);
}

torch::Tensor ModulatedConvImpl::forward(const torch::Tensor& x, const torch::Tensor& w) {
  const auto b = x.size(0);
  auto s = affine(w);  // [B, in]
  auto wt = weight.unsqueeze(0) * s.view({b, 1, in_channels, 1, 1});
  if (demodulate) wt = wt * torch::rsqrt(wt.pow(2).sum({2, 3, 4}, true) + 1e-8);
  auto y = F::conv2d(x.reshape({1, b * in_channels, x.size(2), x.size(3)}),
                     wt.reshape({b * out_channels, in_channels, kernel, kernel}),
                     F::Conv2dFuncOptions().padding(kernel / 2).groups(b));
  return y.view({b, out_channels, x.size(2), x.size(3)}) + bias.view({1, -1, 1, 1});
}

PlaneGeneratorImpl::PlaneGeneratorImpl(const PipelineConfig& c) {
  const auto& ch = c.generator_channels;
  if (ch.empty()) throw std::invalid_argument("generator_channels must not be empty");
  const auto ratio = c.plane_resolution / c.latent_grid;
  if (ratio * c.latent_grid != c.plane_resolution || !std::has_single_bit(static_cast<std::uint64_t>(ratio))) {
    throw std::invalid_argument("plane_resolution must be a power-of-two multiple of latent_grid");
  }
  const auto ups = static_cast<std::int64_t>(std::countr_zero(static_cast<std::uint64_t>(ratio)));
  const auto n = static_cast<std::int64_t>(ch.size());
  if (ups > n) {
    throw std::invalid_argument("generator_channels has " + std::to_string(n) +
                                " blocks but needs " + std::to_string(ups) + " upsamplings");
  }
  std::int64_t in = c.decoder_token_channels;
  for (std::int64_t i = 0; i < n; ++i) {
    upsample.push_back(i >= n - ups);
    convs->push_back(ModulatedConv(in, ch[i], 3, c.style_dim, true));
    convs->push_back(ModulatedConv(ch[i], ch[i], 3, c.style_dim, true));
    in = ch[i];
  }
  register_module("convs", convs);
  to_plane = register_module("to_plane", ModulatedConv(in, c.plane_channels, 1, c.style_dim, false));
}

torch::Tensor PlaneGeneratorImpl::forward(const torch::Tensor& x_in, const torch::Tensor& w) {
  auto x = x_in;
  for (std::size_t i = 0; i < upsample.size(); ++i) {
    if (upsample[i]) {
      x = F::interpolate(x, F::InterpolateFuncOptions()
                                .scale_factor(std::vector<double>{2.0, 2.0})
                                .mode(torch::kBilinear)
                                .align_corners(false));
    }
    x = lrelu(convs[2 * i]->as<ModulatedConv>()->forward(x, w));
    x = lrelu(convs[2 * i + 1]->as<ModulatedConv>()->forward(x, w));
  }
  return to_plane(x, w);
}

TriPlaneDecoderImpl::TriPlaneDecoderImpl(const PipelineConfig& c) {
  tokens = register_module("tokens", TokenTransformer(c));
  mapping = register_module("mapping", MappingNetwork(c.decoder_width, c.style_dim, c.mapping_layers));
  for (int p = 0; p < 3; ++p) generators->push_back(PlaneGenerator(c));
  register_module("generators", generators);
}

std::pair<torch::Tensor, torch::Tensor> TriPlaneDecoderImpl::token_transform(const torch::Tensor& z) {
  return tokens(z);
}

torch::Tensor TriPlaneDecoderImpl::synthesize_planes(const torch::Tensor& features,
                                                     const torch::Tensor& cls) {
  auto w = mapping(cls);
  std::vector<torch::Tensor> planes;
  for (int p = 0; p < 3; ++p) {
    auto x = features.select(1, p).permute({0, 3, 1, 2});  // [B, C, N_Z, N_Z]
    planes.push_back(generators[p]->as<PlaneGenerator>()->forward(x, w));
  }
  return torch::stack(planes, 1);
}

torch::Tensor TriPlaneDecoderImpl::forward(const torch::Tensor& z) {
  auto [features, cls] = token_transform(z);
  return synthesize_planes(features, cls);
}

}  // namespace gina
