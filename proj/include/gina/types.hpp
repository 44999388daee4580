#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

namespace gina {

using Vec3 = std::array<double, 3>;
using Mat3 = std::array<double, 9>;  // row-major

/// Pinhole camera in the object frame. OpenCV axes: +x right, +y down, +z forward.
/// `rotation` maps camera-frame directions to object-frame directions.
struct Camera {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  std::int64_t width = 1;
  std::int64_t height = 1;
  Mat3 rotation{1, 0, 0, 0, 1, 0, 0, 0, 1};
  Vec3 position{0, 0, 0};

  /// Same camera with intrinsics rescaled to a square `resolution` image.
  Camera resized(std::int64_t resolution) const;

  /// Camera at `position` looking at `target`, object-frame +z is up.
  static Camera look_at(const Vec3& position, const Vec3& target, double focal,
                        std::int64_t resolution);

  /// Camera orbiting `target` at (azimuth, elevation) in radians and `radius`.
  static Camera orbit(double azimuth, double elevation, double radius, double focal,
                      std::int64_t resolution, const Vec3& target = {0, 0, 0});

  /// Throws std::invalid_argument for a non-orthonormal rotation or nonpositive focal.
  void validate() const;

  /// Per-pixel ray origins and unit directions, both [height*width, 3], row-major pixels.
  std::pair<torch::Tensor, torch::Tensor> rays(torch::ScalarType dtype = torch::kFloat32) const;

  /// Pixel (u, v) coordinates of object-frame points; also returns camera-frame depth z.
  std::pair<torch::Tensor, torch::Tensor> project(const torch::Tensor& points) const;

  /// Camera rotated by `angle` radians about the object-frame z axis through the origin.
  Camera rotated_about_z(double angle) const;

  nlohmann::json to_json() const;
  static Camera from_json(const nlohmann::json& j);
};

/// One training record. Images are [H, W, 3] float32 in [0, 1]; masks are [H, W] bool.
struct ObjectSample {
  std::string id;
  torch::Tensor image;
  torch::Tensor object_mask;
  torch::Tensor skyroad_mask;
  Camera camera;
  Vec3 scale{1, 1, 1};
  std::optional<torch::Tensor> depth;        // [H, W] float32 meters
  std::optional<torch::Tensor> depth_valid;  // [H, W] bool
  std::optional<torch::Tensor> semantic;     // [H, W, D] float32
  std::int64_t class_label = 0;
  std::int64_t time_of_day = 0;  // 0 day, 1 night
  nlohmann::json extra = nlohmann::json::object();

  std::int64_t height() const { return image.size(0); }
  std::int64_t width() const { return image.size(1); }

  /// Throws std::invalid_argument describing the first broken invariant.
  void validate() const;

  /// Image with every non-object pixel replaced by white.
  torch::Tensor whitened() const;
};

enum class ConditionKind { none, discrete, continuous, image };

std::string to_string(ConditionKind kind);
ConditionKind condition_kind_from_string(const std::string& s);

struct ConditionSpec {
  ConditionKind kind = ConditionKind::none;
  std::optional<std::int64_t> discrete_value;
  std::int64_t num_classes = 0;
  std::vector<double> continuous_vector;
  std::shared_ptr<const ObjectSample> source_image;
  double mask_ratio = 0.0;

  static ConditionSpec none() { return {}; }
  static ConditionSpec discrete(std::int64_t value, std::int64_t num_classes);
  static ConditionSpec continuous(std::vector<double> v);
  static ConditionSpec image(std::shared_ptr<const ObjectSample> sample, double mask_ratio);

  void validate() const;
};

}  // namespace gina
