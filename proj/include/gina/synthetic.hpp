#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "gina/config.hpp"
#include "gina/rng.hpp"
#include "gina/types.hpp"

namespace gina::synthetic {

enum class ObjectKind { box, capsule, truck, ellipsoid };
enum class OccluderShape { disk, sphere };

const char* to_string(ObjectKind kind);
const char* to_string(OccluderShape shape);

/// Disk occluders face the camera they were placed for (`normal`).
struct Occluder {
  OccluderShape shape = OccluderShape::sphere;
  Vec3 center{0, 0, 0};
  double radius = 0.1;
  Vec3 normal{1, 0, 0};

  nlohmann::json to_json() const;
};

struct OrbitRange {
  double azimuth_min = 0.0;
  double azimuth_max = 2.0 * std::numbers::pi;
  double elevation_min = 5.0 * std::numbers::pi / 180.0;
  double elevation_max = 30.0 * std::numbers::pi / 180.0;
  double radius_min = 2.2;  // multiples of the object circumradius
  double radius_max = 3.0;
};

struct View {
  double azimuth = 0.0;
  double elevation = 0.0;
  double radius = 1.0;  // meters from the object center
};

/// Procedural scene: one analytic object centered at the origin and resting on
/// the ground plane z = -scale.z / 2, plus optional occluders.
struct SceneSpec {
  ObjectKind kind = ObjectKind::box;
  std::uint64_t texture_seed = 0;
  Vec3 scale{4.5, 1.9, 1.5};
  std::vector<Occluder> occluders;
  OrbitRange orbit;
  double brightness = 1.0;
  std::int64_t time_of_day = 0;
  std::int64_t class_label = 0;

  double circumradius() const;
  /// Throws std::invalid_argument when scale or brightness leave their ranges.
  void validate() const;
  /// True when `view` lies inside the orbit ranges (radius in meters).
  bool contains(const View& view) const;
};

/// Reserved occluder color (unlit magenta); no other surface can produce it.
inline constexpr std::array<double, 3> kOccluderColor{1.0, 0.0, 1.0};

/// Focal length that fits the object's circumsphere into 90% of the frame.
double fitting_focal(const SceneSpec& spec, double distance, std::int64_t resolution);

Camera view_camera(const SceneSpec& spec, const View& view, std::int64_t resolution);

struct RenderOptions {
  std::int64_t resolution = 64;
  bool semantic = false;
  std::int64_t semantic_channels = 8;
  double sensor_noise = 0.0;  // stddev of seeded per-pixel noise; 0 keeps images analytic
};

/// Ray-casts the scene through `camera`. Object, sky/road and occluder pixels are
/// classified by the first hit; depth is the first-hit distance on object pixels.
ObjectSample render_with_camera(const SceneSpec& spec, const Camera& camera,
                                const RenderOptions& options, std::uint64_t seed = 0);

/// Renders from an orbit view; the view must lie inside spec.orbit.
ObjectSample render_sample(const SceneSpec& spec, const View& view, const RenderOptions& options,
                           std::uint64_t seed = 0);

struct GeneratorOptions {
  RenderOptions render;
  /// Mixture over {car, truck, bus, other}.
  std::array<double, 4> class_mixture{0.55, 0.2, 0.1, 0.15};
  double occlusion_probability = 0.5;
  double night_probability = 0.3;
  /// Occluders are redrawn until at least this fraction of the silhouette stays visible.
  double min_visible_fraction = 0.1;
};

GeneratorOptions generator_options_for(const PipelineConfig& config);

/// Class labels from the mixture by largest-remainder quotas, then a seeded shuffle.
std::vector<std::int64_t> stratified_labels(std::size_t n, const std::array<double, 4>& mixture,
                                            std::uint64_t seed);

SceneSpec draw_scene(std::int64_t class_label, Rng& rng, const GeneratorOptions& options);
View draw_view(const SceneSpec& spec, Rng& rng);

/// Places occluders between the camera and the object until the visibility rule holds.
void place_occluders(SceneSpec& spec, const View& view, Rng& rng, const GeneratorOptions& options);

std::vector<ObjectSample> generate_samples(std::size_t n, std::uint64_t seed,
                                           const GeneratorOptions& options);

/// Writes `n` samples in the dataset directory format.
void generate_dataset(std::size_t n, const PipelineConfig& config, std::uint64_t seed,
                      const std::filesystem::path& out_dir,
                      const GeneratorOptions& options);
void generate_dataset(std::size_t n, const PipelineConfig& config, std::uint64_t seed,
                      const std::filesystem::path& out_dir);

}  // namespace gina::synthetic
