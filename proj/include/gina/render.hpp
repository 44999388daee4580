#pragma once

#include <functional>
#include <optional>

#include <torch/torch.h>

#include "gina/config.hpp"
#include "gina/types.hpp"

namespace gina {

/// Field values at a batch of points.
struct FieldSample {
  torch::Tensor sigma;     // [P] >= 0
  torch::Tensor rgb;       // [P, 3] in [0, 1]
  torch::Tensor semantic;  // [P, D_sem] or undefined
};

/// A radiance field over object-frame points [P, 3] (meters).
using FieldFn = std::function<FieldSample(const torch::Tensor& points)>;

/// Axis-aligned region the field lives in, centred at the origin.
/// `half` is half the box side per axis; `extent` is the side of the unit cube
/// that tri-plane coordinates are normalised by.
struct FieldBox {
  Vec3 half{0.5, 0.5, 0.5};
  double extent = 1.0;

  /// Box for an object of size `scale` under the config's box mode.
  static FieldBox for_object(const PipelineConfig& config, const Vec3& scale);

  /// Per-axis ratio box side / extent, passed to query_field as the scale.
  Vec3 query_scale() const;

  /// Object-frame meters -> normalised coordinates p = (x + half) / extent.
  torch::Tensor to_unit(const torch::Tensor& points) const;
};

/// Shallow MLP reading summed bilinear tri-plane features.
struct TriPlaneFieldImpl : torch::nn::Module {
  TriPlaneFieldImpl(std::int64_t plane_channels, std::int64_t hidden, std::int64_t semantic_channels);
  explicit TriPlaneFieldImpl(const PipelineConfig& c)
      : TriPlaneFieldImpl(c.plane_channels, c.field_hidden,
                          c.semantic_field ? c.semantic_channels : 0) {}

  /// Sum of bilinear samples of planes [3, D_H, N_H, N_H] at p̂ [P, 3] in [0, 1]^3
  /// (border clamped) -> [P, D_H].
  torch::Tensor sample_features(const torch::Tensor& planes, const torch::Tensor& p_hat) const;

  /// p [P, 3] normalised coordinates; p̂ = p / scale. Throws on nonpositive scale.
  FieldSample query(const torch::Tensor& planes, const torch::Tensor& p, const Vec3& scale);

  std::int64_t semantic_channels;
  torch::nn::Linear fc1{nullptr};
  torch::nn::Linear fc2{nullptr};
};
TORCH_MODULE(TriPlaneField);

/// FieldFn evaluating `field` on one asset's planes [3, D_H, N_H, N_H] inside `box`.
FieldFn triplane_field_fn(TriPlaneField field, torch::Tensor planes, FieldBox box);

struct RenderOptions {
  std::int64_t samples_uniform = 16;
  std::int64_t samples_importance = 8;
  /// When set, stratified and importance samples are randomised from it; otherwise
  /// bin midpoints and evenly spaced CDF quantiles are used.
  std::optional<at::Generator> generator;
  /// Rays per field evaluation batch.
  std::int64_t chunk = 8192;

  static RenderOptions from_config(const PipelineConfig& c) {
    RenderOptions o;
    o.samples_uniform = c.samples_uniform;
    o.samples_importance = c.samples_importance;
    return o;
  }
};

struct RayRenderResult {
  torch::Tensor rgb;       // [N, 3]
  torch::Tensor alpha;     // [N]
  torch::Tensor depth;     // [N]
  torch::Tensor semantic;  // [N, D] or undefined
  torch::Tensor weights;   // [N, S] compositing weights (zero rows for missed rays)
  torch::Tensor t;         // [N, S] sample distances
  torch::Tensor hit;       // [N] bool
};

/// Volume-renders rays (origins/dirs [N, 3], dirs need not be unit but must be
/// nonzero; depth is measured in units of |dir|) against `field` inside the box
/// [-half, half].
RayRenderResult render_rays(const FieldFn& field, const torch::Tensor& origins,
                            const torch::Tensor& dirs, const Vec3& half, const RenderOptions& options);

struct RenderOutput {
  torch::Tensor rgb;       // [R, R, 3]
  torch::Tensor alpha;     // [R, R]
  torch::Tensor depth;     // [R, R]
  torch::Tensor semantic;  // [R, R, D] or undefined
};

/// Renders a square image of `resolution` pixels through `camera` (intrinsics are
/// rescaled to the resolution).
RenderOutput render(const FieldFn& field, const Camera& camera, const Vec3& half,
                    std::int64_t resolution, const RenderOptions& options,
                    torch::ScalarType dtype = torch::kFloat32);

/// NeRF weights w_i = T_i (1 - exp(-sigma_i delta_i)); the last delta runs to `t_far`.
torch::Tensor compositing_weights(const torch::Tensor& sigma, const torch::Tensor& t,
                                  const torch::Tensor& t_far);

/// Slab test; returns (t_near clamped at 0, t_far) per ray.
std::pair<torch::Tensor, torch::Tensor> ray_box_intersect(const torch::Tensor& origins,
                                                          const torch::Tensor& dirs, const Vec3& half);

}  // namespace gina
