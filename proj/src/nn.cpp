#include "gina/nn.hpp"

#include <cmath>

namespace gina::nn {

namespace F = torch::nn::functional;

AttentionImpl::AttentionImpl(std::int64_t dim, std::int64_t heads_, double dropout_)
    : heads(heads_), head_dim(dim / heads_), dropout(dropout_) {
  TORCH_CHECK(dim % heads == 0, "attention dim ", dim, " not divisible by heads ", heads);
  to_q = register_module("to_q", torch::nn::Linear(dim, dim));
  to_k = register_module("to_k", torch::nn::Linear(dim, dim));
  to_v = register_module("to_v", torch::nn::Linear(dim, dim));
  to_out = register_module("to_out", torch::nn::Linear(dim, dim));
}

torch::Tensor AttentionImpl::forward(const torch::Tensor& query, const torch::Tensor& context) {
  const auto b = query.size(0);
  const auto lq = query.size(1);
  const auto lk = context.size(1);
  auto split = [&](const torch::Tensor& t, std::int64_t len) {
    return t.view({b, len, heads, head_dim}).transpose(1, 2);
  };
  auto q = split(to_q(query), lq);
  auto k = split(to_k(context), lk);
  auto v = split(to_v(context), lk);
  auto scores = torch::matmul(q, k.transpose(-2, -1)) / std::sqrt(static_cast<double>(head_dim));
  auto attn = torch::softmax(scores, -1);
  if (dropout > 0.0) attn = F::dropout(attn, F::DropoutFuncOptions().p(dropout).training(is_training()));
  auto out = torch::matmul(attn, v).transpose(1, 2).reshape({b, lq, heads * head_dim});
  return to_out(out);
}

MlpImpl::MlpImpl(std::int64_t dim, std::int64_t hidden, double dropout_) : dropout(dropout_) {
  fc1 = register_module("fc1", torch::nn::Linear(dim, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, dim));
}

torch::Tensor MlpImpl::forward(const torch::Tensor& x) {
  auto h = torch::gelu(fc1(x));
  if (dropout > 0.0) h = F::dropout(h, F::DropoutFuncOptions().p(dropout).training(is_training()));
  return fc2(h);
}

TransformerBlockImpl::TransformerBlockImpl(std::int64_t dim, std::int64_t heads,
                                           std::int64_t hidden, double dropout_)
    : dropout(dropout_) {
  norm1 = register_module("norm1", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm2 = register_module("norm2", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", Attention(dim, heads, dropout));
  mlp = register_module("mlp", Mlp(dim, hidden, dropout));
}

torch::Tensor TransformerBlockImpl::forward(const torch::Tensor& x) {
  auto h = norm1(x);
  auto a = attn(h, h);
  if (dropout > 0.0) a = F::dropout(a, F::DropoutFuncOptions().p(dropout).training(is_training()));
  auto y = x + a;
  return y + mlp(norm2(y));
}

CrossAttentionBlockImpl::CrossAttentionBlockImpl(std::int64_t dim, std::int64_t heads,
                                                 std::int64_t hidden) {
  norm_q = register_module("norm_q", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm_ctx = register_module("norm_ctx", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  norm_mlp = register_module("norm_mlp", torch::nn::LayerNorm(torch::nn::LayerNormOptions({dim})));
  attn = register_module("attn", Attention(dim, heads));
  mlp = register_module("mlp", Mlp(dim, hidden));
}

torch::Tensor CrossAttentionBlockImpl::forward(const torch::Tensor& query,
                                               const torch::Tensor& context) {
  auto y = query + attn(norm_q(query), norm_ctx(context));
  return y + mlp(norm_mlp(y));
}

void trunc_normal_(torch::Tensor& t, double std) {
  torch::NoGradGuard guard;
  // Inverse-CDF sampling restricted to [-2 std, 2 std].
  const double bound = std::erf(2.0 / std::sqrt(2.0));
  t.uniform_(-bound, bound);
  t.erfinv_();
  t.mul_(std * std::sqrt(2.0));
}

void init_linear_layers(torch::nn::Module& module) {
  torch::NoGradGuard guard;
  for (auto& m : module.modules(/*include_self=*/false)) {
    if (auto* lin = m->as<torch::nn::Linear>()) {
      torch::nn::init::xavier_uniform_(lin->weight);
      if (lin->bias.defined()) lin->bias.zero_();
    }
  }
}

}  // namespace gina::nn
