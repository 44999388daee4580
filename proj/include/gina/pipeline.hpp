#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "gina/config.hpp"
#include "gina/dataset.hpp"
#include "gina/mesh.hpp"
#include "gina/metrics.hpp"
#include "gina/stage1.hpp"
#include "gina/stage2.hpp"

namespace gina {

namespace fs = std::filesystem;

/// runs/<name>/{ckpt,samples,meshes,reports,run.json}
struct RunLayout {
  fs::path root;

  explicit RunLayout(fs::path r) : root(std::move(r)) {}
  fs::path ckpt() const { return root / "ckpt"; }
  fs::path samples() const { return root / "samples"; }
  fs::path meshes() const { return root / "meshes"; }
  fs::path reports() const { return root / "reports"; }
  fs::path run_json() const { return root / "run.json"; }
  fs::path stage1_ckpt() const { return ckpt() / "stage1.ckpt"; }
  fs::path stage2_ckpt() const { return ckpt() / "stage2.ckpt"; }
  void create() const;
};

/// Writes `dir/run.json` with the resolved config and seed and records the arguments
/// of `command` (a rerun of the same command replaces its entry).
void record_run(const fs::path& dir, const std::string& command, const nlohmann::json& args,
                const PipelineConfig& config);

/// Receives one JSON object per event (progress, losses, artifacts).
using Logger = std::function<void(const nlohmann::json&)>;

struct Stage1Job {
  fs::path data;
  fs::path out;
  std::int64_t steps = 200;
  std::optional<fs::path> resume;
  std::int64_t log_every = 10;
};

Stage1Trainer train_stage1(const PipelineConfig& config, const Stage1Job& job, const Logger& log = {});

/// Token grids [N, 3, N_Z, N_Z] of the samples under `model` (no gradients).
torch::Tensor encode_samples(Stage1Model& model, const std::vector<ObjectSample>& samples,
                             std::int64_t batch = 8);

struct Stage2Job {
  fs::path data;
  fs::path stage1;
  fs::path out;
  std::string condition = "none";
  std::int64_t steps = 200;
  std::optional<fs::path> resume;
  std::int64_t log_every = 10;
};

/// Encodes the dataset with the stage-1 EMA weights and fits the token prior.
Stage2Trainer train_stage2(const PipelineConfig& config, const Stage2Job& job, const Logger& log = {});

/// One discrete latent asset: tokens, the object size it is decoded at and where it came from.
struct Asset {
  torch::Tensor tokens;  // [3, N_Z, N_Z] int64
  Vec3 scale{1, 1, 1};
  nlohmann::json info = nlohmann::json::object();

  nlohmann::json to_json() const;
  static Asset from_json(const nlohmann::json& j);
};

/// Reads an asset from a meta.json file or from a folder containing one.
Asset read_asset(const fs::path& path);

/// Orbit camera framing an object of `scale` (2.5 circumradii away).
Camera asset_camera(const Vec3& scale, double azimuth, double elevation, std::int64_t resolution);

inline constexpr int kTurntableViews = 8;
inline constexpr double kGalleryElevation = 30.0 * 3.14159265358979323846 / 180.0;

/// Writes `folder/{meta.json,image.png,alpha.png,turntable.png}`. The main image is
/// the first turntable view; the strip holds 8 azimuths at 30 degrees elevation.
void write_asset(Stage1Model& model, const Asset& asset, const fs::path& folder);

struct SampleJob {
  fs::path stage1;
  fs::path stage2;
  fs::path out;  // samples directory
  std::int64_t n = 4;
  std::optional<std::int64_t> class_value;  // discrete conditions
  std::optional<Vec3> scale;                // decode size; scale conditions use it too
  SamplingPolicy policy;
  std::uint64_t seed = 0;
};

std::vector<Asset> sample_assets(const SampleJob& job, const Logger& log = {});

struct ReconstructJob {
  fs::path stage1;
  fs::path data;
  fs::path out;
  std::vector<std::int64_t> indices{0};
};

/// Encodes and re-renders dataset samples from their own cameras; reports masked PSNR.
nlohmann::json reconstruct(const ReconstructJob& job, const Logger& log = {});

struct VaryJob {
  fs::path stage1;
  fs::path stage2;
  fs::path data;
  fs::path out;
  std::int64_t index = 0;
  std::int64_t n = 4;
  double mask_ratio = 0.5;
  SamplingPolicy policy;
  std::uint64_t seed = 0;
};

/// Image-conditioned variations: the source's tokens with `mask_ratio` of them
/// re-sampled by the prior.
std::vector<Asset> vary(const VaryJob& job, const Logger& log = {});

/// Marching cubes over the decoded field of `asset`.
Mesh asset_mesh(Stage1Model& model, const Asset& asset, std::int64_t grid_res, double threshold,
                bool with_color = true);

/// Meshes every asset folder under `samples` into `out/NNNNNN.<format>`.
std::vector<fs::path> mesh_samples(const fs::path& stage1, const fs::path& samples, const fs::path& out,
                                   std::int64_t grid_res, double threshold, MeshFormat format,
                                   const Logger& log = {});

struct EvalJob {
  fs::path generated;   // run directory, samples directory or dataset directory
  fs::path validation;  // dataset directory
  std::optional<fs::path> stage1;  // for the consistency score; found in the run when omitted
  std::string backend = "random_pyramid";
  std::int64_t cloud_points = 2048;
  std::int64_t chamfer_samples = 10000;
  double min_visible = 0.5;
  std::uint64_t seed = 0;
};

nlohmann::json evaluate_run(const PipelineConfig& config, const EvalJob& job, const Logger& log = {});

struct GalleryResult {
  fs::path grid;
  fs::path turntables;
  std::int64_t rows = 0;
  std::int64_t cols = 0;
  std::int64_t strip_width = 0;
};

/// Tiles the sample images into a near-square grid and stacks the turntable strips.
GalleryResult gallery(const fs::path& samples, const fs::path& out);

/// Asset folders (those with meta.json) under `samples`, sorted by name.
std::vector<fs::path> asset_folders(const fs::path& samples);

}  // namespace gina
