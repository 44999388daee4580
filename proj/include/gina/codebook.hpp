#pragma once

#include <torch/torch.h>

#include "gina/config.hpp"

namespace gina {

/// Result of nearest-neighbour quantisation. `vectors` are rows of the codebook
/// (gradient flows to the entries only), `indices` are int64 in [0, K).
struct QuantizedLatents {
  torch::Tensor vectors;  // [..., D_tok]
  torch::Tensor indices;  // [...]
};

/// K x D_tok learnable code table with Euclidean nearest-neighbour lookup.
struct CodebookImpl : torch::nn::Module {
  CodebookImpl(std::int64_t size, std::int64_t dim, bool l2_normalized);
  explicit CodebookImpl(const PipelineConfig& config)
      : CodebookImpl(config.codebook_size, config.token_dim, config.l2_codes) {}

  /// Applies the l2 normalisation used for both codes and embeddings (identity when off).
  torch::Tensor normalize(const torch::Tensor& e) const;

  /// Nearest entry per vector of `e` [..., D]; ties go to the lowest index.
  /// `e` must already be normalised when l2 mode is on (see normalize()).
  QuantizedLatents quantize(const torch::Tensor& e) const;

  /// Rows for `indices`; throws on out-of-range ids.
  torch::Tensor lookup(const torch::Tensor& indices) const;

  /// Re-projects rows onto the unit sphere when l2 mode is on; rows already within
  /// 1e-6 of unit norm are left bit-identical.
  void renormalize();

  /// Overwrites rows whose `usage` count is zero with randomly chosen rows of
  /// `embeddings` [N, D] (already normalised). Returns how many rows were replaced.
  std::int64_t restart_dead(const torch::Tensor& usage, const torch::Tensor& embeddings,
                            at::Generator& gen);

  std::int64_t size;
  std::int64_t dim;
  bool l2_normalized;
  torch::Tensor entries;  // [K, D]
};
TORCH_MODULE(Codebook);

/// Forward value is exactly `z`; the backward pass hands the incoming gradient to
/// `e` unchanged and nothing to `z`.
torch::Tensor straight_through(const torch::Tensor& e, const torch::Tensor& z);

/// ||sg[e] - z||^2 + commitment * ||sg[z] - e||^2, squared norms over the last
/// axis, averaged over cells.
torch::Tensor vq_loss(const torch::Tensor& e, const torch::Tensor& z, double commitment);

/// Histogram of indices over [0, K).
torch::Tensor code_usage(const torch::Tensor& indices, std::int64_t size);

}  // namespace gina
