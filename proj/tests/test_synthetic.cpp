#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gina/dataset.hpp"
#include "gina/synthetic.hpp"

using namespace gina;
using namespace gina::synthetic;
namespace fs = std::filesystem;

namespace {

SceneSpec plain_box() {
  SceneSpec s;
  s.kind = ObjectKind::box;
  s.scale = {4.5, 1.9, 1.5};
  return s;
}

torch::Tensor occluder_pixels(const ObjectSample& s) {
  auto c = torch::tensor({kOccluderColor[0], kOccluderColor[1], kOccluderColor[2]}, torch::kFloat32);
  return (s.image == c).all(-1);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST_CASE("box seen along +x has the analytic rectangular silhouette") {
  auto spec = plain_box();
  const double dist = 12.0, focal = 800.0;
  const std::int64_t res = 1024;
  auto cam = Camera::look_at({dist, 0, 0}, {0, 0, 0}, focal, res);
  RenderOptions opt;
  opt.resolution = res;
  auto s = render_with_camera(spec, cam, opt);
  s.validate();
  const double near = dist - spec.scale[0] / 2;
  const double expected = (focal * spec.scale[1] / near) * (focal * spec.scale[2] / near);
  const double area = s.object_mask.sum().item<double>();
  CHECK(std::abs(area - expected) / expected < 0.02);
  // Centred: the mask's bounding box is symmetric about the principal point.
  auto nz = s.object_mask.nonzero();
  const double cmin = nz.select(1, 1).min().item<double>(), cmax = nz.select(1, 1).max().item<double>();
  CHECK(std::abs((cmin + cmax + 1) / 2 - res / 2.0) <= 1.0);
  // Ground plane is present below the object, sky above.
  CHECK(s.skyroad_mask[res - 1][res / 2].item<bool>());
  CHECK(s.skyroad_mask[0][res / 2].item<bool>());
}

TEST_CASE("a central disk occluder carves exactly its pixels out of the silhouette") {
  auto spec = plain_box();
  auto cam = Camera::look_at({12, 0, 0}, {0, 0, 0}, 200.0, 128);
  RenderOptions opt;
  opt.resolution = 128;
  auto clear = render_with_camera(spec, cam, opt);
  Occluder disk;
  disk.shape = OccluderShape::disk;
  disk.center = {6.0, 0.0, 0.0};
  disk.radius = 0.2;
  disk.normal = {1, 0, 0};
  spec.occluders = {disk};
  auto occ = render_with_camera(spec, cam, opt);
  occ.validate();
  auto disk_px = occluder_pixels(occ);
  CHECK(disk_px.sum().item<std::int64_t>() > 50);
  CHECK_FALSE((disk_px & occ.object_mask).any().item<bool>());
  CHECK_FALSE((disk_px & occ.skyroad_mask).any().item<bool>());
  CHECK(torch::equal(occ.object_mask | disk_px, clear.object_mask));
}

TEST_CASE("generated samples satisfy the mask and depth invariants") {
  GeneratorOptions g;
  g.render.resolution = 32;
  auto samples = generate_samples(12, 5, g);
  for (const auto& s : samples) {
    s.validate();
    CHECK_FALSE((s.object_mask & s.skyroad_mask).any().item<bool>());
    const auto d = s.depth->index({s.object_mask});
    CHECK(torch::isfinite(d).all().item<bool>());
    const double radius = s.extra["view"]["radius"].get<double>();
    SceneSpec spec;
    spec.scale = s.scale;
    CHECK(d.min().item<double>() >= radius - spec.circumradius() - 1e-4);
    CHECK(s.object_mask.sum().item<double>() / s.extra["silhouette_pixels"].get<double>() >= 0.1);
  }
  CHECK_THROWS(render_sample(plain_box(), View{0.2, 0.2, 0.0}, g.render));
}

TEST_CASE("full occlusion probability occludes every sample") {
  GeneratorOptions g;
  g.render.resolution = 32;
  g.occlusion_probability = 1.0;
  for (const auto& s : generate_samples(10, 8, g)) {
    CHECK(s.extra["occluders"].size() >= 1);
    CHECK(s.object_mask.sum().item<std::int64_t>() < s.extra["silhouette_pixels"].get<std::int64_t>());
  }
}

TEST_CASE("class labels follow the mixture") {
  GeneratorOptions g;
  auto labels = stratified_labels(100, g.class_mixture, 3);
  std::array<int, 4> hist{};
  for (auto l : labels) ++hist[l];
  for (int k = 0; k < 4; ++k) CHECK(std::abs(hist[k] - 100.0 * g.class_mixture[k]) <= 5.0);
  CHECK(labels != stratified_labels(100, g.class_mixture, 4));
}

TEST_CASE("dataset generation is byte deterministic") {
  auto a = fs::temp_directory_path() / "gina_gen_a";
  auto b = fs::temp_directory_path() / "gina_gen_b";
  fs::remove_all(a);
  fs::remove_all(b);
  auto c = desk_preset();
  generate_dataset(2, c, 42, a);
  generate_dataset(2, c, 42, b);
  for (const auto& e : fs::recursive_directory_iterator(a)) {
    if (!e.is_regular_file()) continue;
    auto rel = fs::relative(e.path(), a);
    CHECK_MESSAGE(slurp(e.path()) == slurp(b / rel), rel.string());
  }
  auto ds = load_dataset(a);
  CHECK(ds.samples.size() == 2);
  CHECK(ds.rejected.empty());
  CHECK_THROWS(generate_dataset(0, c, 1, a));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("silhouettes agree across views after depth reprojection") {
  auto spec = plain_box();
  spec.kind = ObjectKind::truck;
  spec.scale = {5.5, 2.4, 2.8};
  RenderOptions opt;
  opt.resolution = 96;
  const double r = 2.5 * spec.circumradius();
  auto a = render_sample(spec, View{0.4, 0.3, r}, opt);
  auto b = render_sample(spec, View{0.4 + 0.5, 0.3, r}, opt);
  auto agree = [](const ObjectSample& from, const ObjectSample& to) {
    auto [o, d] = from.camera.rays(torch::kFloat64);
    auto keep = from.object_mask.reshape({-1});
    auto pts = (o + d * from.depth->reshape({-1, 1}).to(torch::kFloat64)).index({keep});
    auto [uv, z] = to.camera.project(pts);
    auto col = uv.select(1, 0).floor().clamp(0, to.width() - 1).to(torch::kLong);
    auto row = uv.select(1, 1).floor().clamp(0, to.height() - 1).to(torch::kLong);
    auto hit = to.object_mask.index({row, col});
    return hit.to(torch::kDouble).mean().item<double>();
  };
  CHECK(agree(a, b) >= 0.95);
  CHECK(agree(b, a) >= 0.95);
}
