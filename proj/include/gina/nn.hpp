#pragma once

#include <cstdint>

#include <torch/torch.h>

namespace gina::nn {

/// Multi-head attention; queries and keys/values may come from different sequences.
struct AttentionImpl : torch::nn::Module {
  AttentionImpl(std::int64_t dim, std::int64_t heads, double dropout = 0.0);

  /// query [B, Lq, D], context [B, Lk, D] -> [B, Lq, D]
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context);

  std::int64_t heads;
  std::int64_t head_dim;
  double dropout;
  torch::nn::Linear to_q{nullptr}, to_k{nullptr}, to_v{nullptr}, to_out{nullptr};
};
TORCH_MODULE(Attention);

struct MlpImpl : torch::nn::Module {
  MlpImpl(std::int64_t dim, std::int64_t hidden, double dropout = 0.0);
  torch::Tensor forward(const torch::Tensor& x);

  double dropout;
  torch::nn::Linear fc1{nullptr}, fc2{nullptr};
};
TORCH_MODULE(Mlp);

/// Pre-norm transformer block: x + Attn(LN(x)), then x + MLP(LN(x)).
struct TransformerBlockImpl : torch::nn::Module {
  TransformerBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden,
                       double dropout = 0.0);
  torch::Tensor forward(const torch::Tensor& x);

  double dropout;
  torch::nn::LayerNorm norm1{nullptr}, norm2{nullptr};
  Attention attn{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(TransformerBlock);

/// Pre-norm cross-attention block: queries attend to a context sequence.
struct CrossAttentionBlockImpl : torch::nn::Module {
  CrossAttentionBlockImpl(std::int64_t dim, std::int64_t heads, std::int64_t hidden);
  torch::Tensor forward(const torch::Tensor& query, const torch::Tensor& context);

  torch::nn::LayerNorm norm_q{nullptr}, norm_ctx{nullptr}, norm_mlp{nullptr};
  Attention attn{nullptr};
  Mlp mlp{nullptr};
};
TORCH_MODULE(CrossAttentionBlock);

/// Truncated normal init in [-2 std, 2 std].
void trunc_normal_(torch::Tensor& t, double std);

/// Xavier-uniform weights and zero biases for every Linear under `module`.
void init_linear_layers(torch::nn::Module& module);

}  // namespace gina::nn
