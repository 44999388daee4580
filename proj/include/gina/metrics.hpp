#pragma once

#include <cstdint>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "gina/losses.hpp"
#include "gina/mesh.hpp"
#include "gina/render.hpp"
#include "gina/types.hpp"

namespace gina {

/// Image -> vector embedding used by FID and image COV/MMD.
class EmbeddingBackend {
 public:
  virtual ~EmbeddingBackend() = default;
  virtual std::string name() const = 0;
  virtual std::int64_t dimension() const = 0;
  /// images [B, H, W, 3] in [0, 1] -> [B, dimension] float64.
  virtual torch::Tensor embed(const torch::Tensor& images) const = 0;
};

/// Seeded random conv pyramid with global average pooling (no downloads).
class RandomPyramidBackend : public EmbeddingBackend {
 public:
  explicit RandomPyramidBackend(std::uint64_t seed = 2024, std::int64_t dim = 64);
  std::string name() const override { return "random_pyramid"; }
  std::int64_t dimension() const override { return pyramid_.embedding_dim(); }
  torch::Tensor embed(const torch::Tensor& images) const override;

 private:
  FeaturePyramid pyramid_;
};

/// Registered backends: "random_pyramid".
std::unique_ptr<EmbeddingBackend> make_embedding_backend(const std::string& name);

/// ||mu_g - mu_v||^2 + Tr[S_g + S_v - 2 (S_g S_v)^(1/2)] over rows of [N, D] sets.
double frechet_distance(const torch::Tensor& emb_g, const torch::Tensor& emb_v);

/// Percent of region pixels (alpha > 0.5) outside the largest 8-connected component,
/// averaged over alpha maps [N, H, W]; empty regions count as 100.
double mask_fou(const torch::Tensor& alphas);
double mask_fou_single(const torch::Tensor& alpha);

struct CovMmd {
  double cov = 0.0;
  double mmd = 0.0;
};

/// COV/MMD from distances [|V|, |G|] with dist(i, j) between validation i and generated j.
/// Non-finite columns never match.
CovMmd cov_mmd_from_distances(const torch::Tensor& dist);

/// Squared Euclidean COV/MMD between embedding sets [N, D].
CovMmd cov_mmd_embeddings(const torch::Tensor& emb_g, const torch::Tensor& emb_v);

/// `n` points [n, 3] float64 drawn uniformly by area from the mesh surface.
torch::Tensor sample_surface(const Mesh& mesh, std::int64_t n, std::uint64_t seed);

/// Mean over points [N, 3] of the squared distance to the nearest row of `surface` [M, 3].
double one_way_chamfer(const torch::Tensor& points, const torch::Tensor& surface);

/// Same, with the mesh represented by `samples` area-weighted surface points.
/// Empty meshes give +infinity.
double one_way_chamfer(const torch::Tensor& points, const Mesh& mesh, std::int64_t samples = 10000,
                       std::uint64_t seed = 0);

CovMmd geometry_cov_mmd(const std::vector<torch::Tensor>& clouds, const std::vector<Mesh>& meshes,
                        std::int64_t samples = 10000, std::uint64_t seed = 0);

/// Percent of surface area outside the largest edge-connected component; empty = 100.
double mesh_fou_single(const Mesh& mesh);
double mesh_fou(const std::vector<Mesh>& meshes);

/// Back-projected object points [N, 3] from a depth map: pixels with alpha > 0.5.
/// `depth` is the distance along each unit ray.
torch::Tensor backproject(const Camera& camera, const torch::Tensor& depth, const torch::Tensor& alpha);

struct ConsistencyOptions {
  double angle = std::numbers::pi / 4.0;  // yaw between the two views
  double normalized_edge = 10.0;
  std::int64_t resolution = 64;
  RenderOptions render;
};

/// Symmetric Chamfer between depth back-projections of `field` from `camera` and
/// from `camera` rotated by the yaw angle about z, after scaling the box's longest
/// edge to `normalized_edge`. Each side keeps the points the other view can see
/// (inside its frame and silhouette, facing it). Returns nullopt when either view
/// has no valid depth.
std::optional<double> depth_consistency(const FieldFn& field, const Vec3& half, const Camera& camera,
                                        const ConsistencyOptions& options);

/// Rendered samples or validation images at a common resolution.
struct ImageSet {
  torch::Tensor images;  // [N, H, W, 3] in [0, 1], composited on white
  torch::Tensor alpha;   // [N, H, W]
  std::int64_t size() const { return images.defined() ? images.size(0) : 0; }
};

/// Whitened validation images and object masks, area-resized to `resolution`.
/// Samples with a visible_fraction below `min_visible` are dropped when it is recorded.
ImageSet validation_images(const std::vector<ObjectSample>& samples, std::int64_t resolution,
                           double min_visible = 0.5);

/// Depth back-projections of validation samples, subsampled to at most `points` each.
std::vector<torch::Tensor> validation_clouds(const std::vector<ObjectSample>& samples,
                                             std::int64_t points, std::uint64_t seed,
                                             double min_visible = 0.5);

struct EvalInputs {
  ImageSet generated;
  ImageSet validation;
  std::vector<Mesh> generated_meshes;
  std::vector<torch::Tensor> validation_clouds;
  std::vector<std::optional<double>> consistency;  // one per decoded asset
  std::vector<std::string> missing;
};

inline constexpr const char* kEvalSchema = "gina.eval.v1";

/// The eight-column report. Metrics whose inputs are missing are null and listed
/// under "missing". Throws when the generated image set is empty.
nlohmann::json evaluate(const EvalInputs& inputs, const EmbeddingBackend& backend,
                        std::int64_t chamfer_samples = 10000, std::uint64_t seed = 0);

/// Throws std::runtime_error naming the first schema violation.
void validate_report(const nlohmann::json& report);

/// Fixed-width table of the report's metrics.
std::string report_table(const nlohmann::json& report);

}  // namespace gina
