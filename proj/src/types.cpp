#include "gina/types.hpp"

#include <cmath>
#include <stdexcept>

namespace gina {

namespace {

Vec3 sub(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
Vec3 cross(const Vec3& a, const Vec3& b) {
  return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
Vec3 normalized(const Vec3& a) {
  const double n = std::sqrt(dot(a, a));
  return {a[0] / n, a[1] / n, a[2] / n};
}

torch::Tensor mat_tensor(const Mat3& m) {
  return torch::tensor(std::vector<double>(m.begin(), m.end()), torch::kFloat64).view({3, 3});
}

}  // namespace

Camera Camera::resized(std::int64_t resolution) const {
  if (width != height) {
    throw std::invalid_argument("Camera::resized expects a square image");
  }
  Camera c = *this;
  const double s = static_cast<double>(resolution) / static_cast<double>(width);
  c.fx *= s;
  c.fy *= s;
  c.cx *= s;
  c.cy *= s;
  c.width = resolution;
  c.height = resolution;
  return c;
}

Camera Camera::look_at(const Vec3& position, const Vec3& target, double focal,
                       std::int64_t resolution) {
  const Vec3 to_target = sub(target, position);
  if (dot(to_target, to_target) <= 0.0) {
    throw std::invalid_argument("degenerate camera: position coincides with target");
  }
  const Vec3 forward = normalized(to_target);
  Vec3 up{0, 0, 1};
  if (std::abs(dot(forward, up)) > 0.999999) up = {0, 1, 0};
  const Vec3 right = normalized(cross(forward, up));
  const Vec3 down = cross(forward, right);
  Camera c;
  c.fx = focal;
  c.fy = focal;
  c.cx = 0.5 * static_cast<double>(resolution);
  c.cy = 0.5 * static_cast<double>(resolution);
  c.width = resolution;
  c.height = resolution;
  c.rotation = {right[0], down[0], forward[0], right[1], down[1], forward[1],
                right[2], down[2], forward[2]};
  c.position = position;
  return c;
}

Camera Camera::orbit(double azimuth, double elevation, double radius, double focal,
                     std::int64_t resolution, const Vec3& target) {
  if (!(radius > 0.0)) {
    throw std::invalid_argument("degenerate camera: orbit radius must be positive");
  }
  const Vec3 pos{target[0] + radius * std::cos(elevation) * std::cos(azimuth),
                 target[1] + radius * std::cos(elevation) * std::sin(azimuth),
                 target[2] + radius * std::sin(elevation)};
  return look_at(pos, target, focal, resolution);
}

void Camera::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) throw std::invalid_argument("camera focal must be positive");
  if (width <= 0 || height <= 0) throw std::invalid_argument("camera size must be positive");
  for (int a = 0; a < 3; ++a) {
    for (int b = 0; b < 3; ++b) {
      double d = 0.0;
      for (int r = 0; r < 3; ++r) d += rotation[r * 3 + a] * rotation[r * 3 + b];
      const double expect = a == b ? 1.0 : 0.0;
      if (std::abs(d - expect) > 1e-6) {
        throw std::invalid_argument("camera rotation is not orthonormal");
      }
    }
  }
}

std::pair<torch::Tensor, torch::Tensor> Camera::rays(torch::ScalarType dtype) const {
  auto opts = torch::TensorOptions().dtype(torch::kFloat64);
  auto ys = torch::arange(height, opts).add_(0.5);
  auto xs = torch::arange(width, opts).add_(0.5);
  auto grid = torch::meshgrid({ys, xs}, "ij");
  auto dx = (grid[1] - cx) / fx;
  auto dy = (grid[0] - cy) / fy;
  auto dir_cam = torch::stack({dx, dy, torch::ones_like(dx)}, -1).view({-1, 3});
  auto dirs = torch::matmul(dir_cam, mat_tensor(rotation).t());
  const auto norms = dirs.norm(2, -1, true);
  if ((norms <= 0).any().item<bool>()) {
    throw std::invalid_argument("degenerate ray: zero direction");
  }
  dirs = dirs / norms;
  auto origins = torch::tensor(std::vector<double>(position.begin(), position.end()), opts)
                     .view({1, 3})
                     .expand({dirs.size(0), 3})
                     .contiguous();
  return {origins.to(dtype), dirs.to(dtype)};
}

std::pair<torch::Tensor, torch::Tensor> Camera::project(const torch::Tensor& points) const {
  auto p = points.to(torch::kFloat64);
  auto pos = torch::tensor(std::vector<double>(position.begin(), position.end()), torch::kFloat64);
  auto cam = torch::matmul(p - pos, mat_tensor(rotation));
  auto z = cam.select(-1, 2);
  auto u = cam.select(-1, 0) / z * fx + cx;
  auto v = cam.select(-1, 1) / z * fy + cy;
  return {torch::stack({u, v}, -1), z};
}

Camera Camera::rotated_about_z(double angle) const {
  const double c = std::cos(angle);
  const double s = std::sin(angle);
  const Mat3 rz{c, -s, 0, s, c, 0, 0, 0, 1};
  Camera out = *this;
  for (int r = 0; r < 3; ++r) {
    for (int k = 0; k < 3; ++k) {
      double v = 0.0;
      for (int m = 0; m < 3; ++m) v += rz[r * 3 + m] * rotation[m * 3 + k];
      out.rotation[r * 3 + k] = v;
    }
    out.position[r] = rz[r * 3 + 0] * position[0] + rz[r * 3 + 1] * position[1] +
                      rz[r * 3 + 2] * position[2];
  }
  return out;
}

nlohmann::json Camera::to_json() const {
  return {{"fx", fx},         {"fy", fy},         {"cx", cx},       {"cy", cy},
          {"width", width},   {"height", height}, {"rotation", rotation},
          {"position", position}};
}

Camera Camera::from_json(const nlohmann::json& j) {
  Camera c;
  j.at("fx").get_to(c.fx);
  j.at("fy").get_to(c.fy);
  j.at("cx").get_to(c.cx);
  j.at("cy").get_to(c.cy);
  j.at("width").get_to(c.width);
  j.at("height").get_to(c.height);
  j.at("rotation").get_to(c.rotation);
  j.at("position").get_to(c.position);
  return c;
}

void ObjectSample::validate() const {
  const std::string who = "sample '" + id + "': ";
  if (!image.defined() || image.dim() != 3 || image.size(2) != 3) {
    throw std::invalid_argument(who + "image must be H x W x 3");
  }
  const auto h = image.size(0);
  const auto w = image.size(1);
  auto check_mask = [&](const torch::Tensor& m, const char* name) {
    if (!m.defined() || m.dim() != 2 || m.size(0) != h || m.size(1) != w) {
      throw std::invalid_argument(who + name + " shape does not match image");
    }
    if (m.scalar_type() != torch::kBool) {
      throw std::invalid_argument(who + name + " must be boolean");
    }
  };
  check_mask(object_mask, "object_mask");
  check_mask(skyroad_mask, "skyroad_mask");
  if (!torch::isfinite(image).all().item<bool>() || image.min().item<double>() < 0.0 ||
      image.max().item<double>() > 1.0) {
    throw std::invalid_argument(who + "image values must lie in [0, 1]");
  }
  if ((object_mask & skyroad_mask).any().item<bool>()) {
    throw std::invalid_argument(who + "object_mask and skyroad_mask overlap");
  }
  for (double s : scale) {
    if (!(s > 0.0)) throw std::invalid_argument(who + "scale components must be positive");
  }
  camera.validate();
  if (camera.width != w || camera.height != h) {
    throw std::invalid_argument(who + "camera size does not match image");
  }
  if (depth.has_value() != depth_valid.has_value()) {
    throw std::invalid_argument(who + "depth requires a validity mask");
  }
  if (depth) {
    if (depth->dim() != 2 || depth->size(0) != h || depth->size(1) != w) {
      throw std::invalid_argument(who + "depth shape does not match image");
    }
    check_mask(*depth_valid, "depth_valid");
    auto valid_depth = depth->masked_select(*depth_valid);
    if (valid_depth.numel() > 0 && (!torch::isfinite(valid_depth).all().item<bool>() ||
                                    valid_depth.min().item<double>() < 0.0)) {
      throw std::invalid_argument(who + "valid depth must be finite and nonnegative");
    }
  }
  if (semantic) {
    if (semantic->dim() != 3 || semantic->size(0) != h || semantic->size(1) != w) {
      throw std::invalid_argument(who + "semantic shape does not match image");
    }
  }
}

torch::Tensor ObjectSample::whitened() const {
  auto m = object_mask.unsqueeze(-1).to(image.scalar_type());
  return image * m + (1.0 - m);
}

std::string to_string(ConditionKind kind) {
  switch (kind) {
    case ConditionKind::none: return "none";
    case ConditionKind::discrete: return "discrete";
    case ConditionKind::continuous: return "continuous";
    case ConditionKind::image: return "image";
  }
  return "none";
}

ConditionKind condition_kind_from_string(const std::string& s) {
  if (s == "none") return ConditionKind::none;
  if (s == "discrete") return ConditionKind::discrete;
  if (s == "continuous") return ConditionKind::continuous;
  if (s == "image") return ConditionKind::image;
  throw std::invalid_argument("unknown condition kind '" + s + "'");
}

ConditionSpec ConditionSpec::discrete(std::int64_t value, std::int64_t num_classes) {
  ConditionSpec c;
  c.kind = ConditionKind::discrete;
  c.discrete_value = value;
  c.num_classes = num_classes;
  c.validate();
  return c;
}

ConditionSpec ConditionSpec::continuous(std::vector<double> v) {
  ConditionSpec c;
  c.kind = ConditionKind::continuous;
  c.continuous_vector = std::move(v);
  c.validate();
  return c;
}

ConditionSpec ConditionSpec::image(std::shared_ptr<const ObjectSample> sample, double mask_ratio) {
  ConditionSpec c;
  c.kind = ConditionKind::image;
  c.source_image = std::move(sample);
  c.mask_ratio = mask_ratio;
  c.validate();
  return c;
}

void ConditionSpec::validate() const {
  const bool has_discrete = discrete_value.has_value();
  const bool has_continuous = !continuous_vector.empty();
  const bool has_image = source_image != nullptr;
  const int populated = int(has_discrete) + int(has_continuous) + int(has_image);
  const int expected = kind == ConditionKind::none ? 0 : 1;
  if (populated != expected) {
    throw std::invalid_argument("condition payload does not match kind " + to_string(kind));
  }
  if (kind == ConditionKind::discrete && !has_discrete) {
    throw std::invalid_argument("discrete condition without a value");
  }
  if (kind == ConditionKind::continuous && !has_continuous) {
    throw std::invalid_argument("continuous condition without a vector");
  }
  if (kind == ConditionKind::image && !has_image) {
    throw std::invalid_argument("image condition without a source sample");
  }
  if (!(mask_ratio >= 0.0 && mask_ratio <= 1.0)) {
    throw std::invalid_argument("mask_ratio must lie in [0, 1]");
  }
  if (has_discrete && (num_classes <= 0 || *discrete_value < 0 || *discrete_value >= num_classes)) {
    throw std::invalid_argument("discrete condition value outside configured vocabulary");
  }
}

}  // namespace gina
