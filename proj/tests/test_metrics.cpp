#include <doctest.h>

#include <cmath>

#include "gina/metrics.hpp"

using namespace gina;

namespace {

Mesh cube(const Vec3& lo, double side) {
  Mesh m;
  for (int c = 0; c < 8; ++c) {
    m.vertices.push_back({lo[0] + side * (c & 1), lo[1] + side * ((c >> 1) & 1), lo[2] + side * ((c >> 2) & 1)});
  }
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

Mesh merge(const Mesh& a, const Mesh& b) {
  Mesh m = a;
  const auto off = static_cast<std::int64_t>(a.vertices.size());
  m.vertices.insert(m.vertices.end(), b.vertices.begin(), b.vertices.end());
  for (auto f : b.faces) m.faces.push_back({f[0] + off, f[1] + off, f[2] + off});
  return m;
}

Mesh scaled(Mesh m, double s) {
  for (auto& v : m.vertices) {
    for (auto& x : v) x *= s;
  }
  return m;
}

FieldFn opaque_sphere(double radius) {
  return [radius](const torch::Tensor& p) {
    FieldSample s;
    s.sigma = (p.norm(2, -1) < radius).to(p.scalar_type()) * 2000.0;
    s.rgb = torch::full({p.size(0), 3}, 0.5, p.options());
    return s;
  };
}

}  // namespace

TEST_CASE("frechet distance closed forms") {
  torch::manual_seed(0);
  auto a = torch::randn({50, 4}, torch::kFloat64);
  CHECK(std::abs(frechet_distance(a, a)) < 1e-8);
  // Two points per side give unbiased variance 1 and means 0 and 1.
  const double h = std::sqrt(0.5);
  auto g = torch::tensor({{-h}, {h}}, torch::kFloat64);
  auto v = torch::tensor({{1.0 - h}, {1.0 + h}}, torch::kFloat64);
  CHECK(frechet_distance(g, v) == doctest::Approx(1.0).epsilon(1e-6));
  auto b = torch::randn({40, 4}, torch::kFloat64) * 2 + 0.5;
  CHECK(frechet_distance(a, b) == frechet_distance(b, a));
  // Orthogonal rotation of both sets.
  auto q = std::get<0>(torch::linalg_qr(torch::randn({4, 4}, torch::kFloat64)));
  CHECK(std::abs(frechet_distance(a.mm(q), b.mm(q)) - frechet_distance(a, b)) <= 1e-6);
  CHECK_THROWS(frechet_distance(a, torch::randn({10, 3}, torch::kFloat64)));
  CHECK_THROWS(frechet_distance(a.slice(0, 0, 1), a));
}

TEST_CASE("mask FOU on crafted masks") {
  auto blob = torch::zeros({20, 20});
  blob.slice(0, 2, 10).slice(1, 2, 12) = 1.0;  // 80 pixels
  CHECK(mask_fou_single(blob) == 0.0);
  auto two = blob.clone();
  two.slice(0, 14, 18).slice(1, 14, 19) = 1.0;  // 20 pixels, separate
  CHECK(mask_fou_single(two) == doctest::Approx(20.0).epsilon(1e-12));
  CHECK(mask_fou_single(torch::zeros({8, 8})) == 100.0);
  // Diagonal neighbours are connected.
  auto diag = torch::zeros({4, 4});
  diag[0][0] = 1.0;
  diag[1][1] = 1.0;
  CHECK(mask_fou_single(diag) == 0.0);
  CHECK(mask_fou(torch::stack({blob, two, torch::zeros({20, 20})})) == doctest::Approx(40.0));
}

TEST_CASE("image COV and MMD") {
  torch::manual_seed(1);
  auto v = torch::randn({6, 3}, torch::kFloat64);
  auto r = cov_mmd_embeddings(v, v);
  CHECK(r.cov == 1.0);
  CHECK(r.mmd == 0.0);
  auto two = torch::tensor({{0.0, 0.0}, {3.0, 4.0}}, torch::kFloat64);
  auto one = two.slice(0, 0, 1);
  r = cov_mmd_embeddings(one, two);
  CHECK(r.cov == 0.5);
  CHECK(r.mmd == doctest::Approx(12.5));
  auto g = torch::randn({5, 3}, torch::kFloat64);
  auto perm = g.index_select(0, torch::tensor({3, 0, 4, 1, 2}));
  auto a = cov_mmd_embeddings(g, v);
  auto b = cov_mmd_embeddings(perm, v);
  CHECK(a.cov == b.cov);
  CHECK(a.mmd == b.mmd);
  auto dup = cov_mmd_embeddings(torch::cat({g, g.slice(0, 2, 3)}), v);
  CHECK(dup.cov >= a.cov);
  CHECK(dup.mmd <= a.mmd);
  CHECK(a.cov > 0.0);
  CHECK(a.cov <= 1.0);
}

TEST_CASE("mesh FOU") {
  auto c = cube({0, 0, 0}, 1.0);
  CHECK(mesh_fou_single(c) == 0.0);
  CHECK(mesh_fou_single(merge(c, cube({3, 0, 0}, 1.0))) == 50.0);
  Mesh floater;
  // Right triangle with legs sqrt(1.2): area 0.6.
  const double l = std::sqrt(1.2);
  floater.vertices = {{5, 5, 5}, {5 + l, 5, 5}, {5, 5 + l, 5}};
  floater.faces = {{0, 1, 2}};
  CHECK(mesh_fou_single(merge(c, floater)) == doctest::Approx(100.0 * 0.6 / 6.6).epsilon(1e-9));
  CHECK(mesh_fou_single(Mesh{}) == 100.0);
  CHECK(mesh_fou({c, Mesh{}}) == 50.0);
}

TEST_CASE("one-way chamfer") {
  auto c = cube({0, 0, 0}, 1.0);
  auto on_surface = sample_surface(c, 2048, 5);
  CHECK(one_way_chamfer(on_surface, c, 10000, 1) < 1e-3);
  Mesh quad;
  quad.vertices = {{-2, -2, 0}, {2, -2, 0}, {2, 2, 0}, {-2, 2, 0}};
  quad.faces = {{0, 1, 2}, {0, 2, 3}};
  const double d = 0.5;
  auto p = torch::tensor({{0.1, -0.2, d}}, torch::kFloat64);
  CHECK(one_way_chamfer(p, quad, 10000, 2) == doctest::Approx(d * d).epsilon(0.05));
  CHECK(std::isinf(one_way_chamfer(p, Mesh{})));
  CHECK_THROWS(one_way_chamfer(torch::zeros({0, 3}, torch::kFloat64), quad));
  // A single point against a cube versus the cube's samples against that point.
  auto far = torch::tensor({{0.5, 0.5, 0.5}}, torch::kFloat64);
  CHECK(one_way_chamfer(far, on_surface) != doctest::Approx(one_way_chamfer(on_surface, far)));
  CHECK(sample_surface(c, 100, 9).equal(sample_surface(c, 100, 9)));
}

TEST_CASE("geometry COV and MMD") {
  std::vector<Mesh> shapes = {cube({0, 0, 0}, 1.0), cube({4, 0, 0}, 0.5), cube({0, 5, 0}, 2.0)};
  std::vector<torch::Tensor> clouds;
  for (std::size_t i = 0; i < shapes.size(); ++i) clouds.push_back(sample_surface(shapes[i], 2048, 100 + i));
  auto r = geometry_cov_mmd(clouds, shapes, 10000, 3);
  CHECK(r.cov == 1.0);
  CHECK(r.mmd < 1e-3);
  auto one = geometry_cov_mmd({clouds[0], clouds[0]}, {shapes[0]}, 2000, 3);
  CHECK(one.cov == 0.5);
  std::vector<torch::Tensor> c2;
  std::vector<Mesh> s2;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    c2.push_back(clouds[i] * 2.0);
    s2.push_back(scaled(shapes[i], 2.0));
  }
  auto base = geometry_cov_mmd(clouds, {shapes[1]}, 2000, 3);
  auto dbl = geometry_cov_mmd(c2, {s2[1]}, 2000, 3);
  CHECK(dbl.mmd == doctest::Approx(4.0 * base.mmd).epsilon(1e-9));
  auto with_empty = geometry_cov_mmd(clouds, {shapes[0], Mesh{}}, 2000, 3);
  CHECK(with_empty.cov == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("depth consistency") {
  const Vec3 half{0.5, 0.5, 0.5};
  auto cam = Camera::orbit(0.3, 0.4, 2.0, 80.0, 64);
  ConsistencyOptions opt;
  opt.resolution = 64;
  opt.render.samples_uniform = 64;
  opt.render.samples_importance = 64;
  auto c = depth_consistency(opaque_sphere(0.3), half, cam, opt);
  REQUIRE(c.has_value());
  CHECK(*c < 0.05);
  opt.angle = 0.0;
  auto same = depth_consistency(opaque_sphere(0.3), half, cam, opt);
  REQUIRE(same.has_value());
  CHECK(*same == doctest::Approx(0.0).epsilon(1e-12));
  CHECK_FALSE(depth_consistency(opaque_sphere(0.0), half, cam, opt).has_value());
  CHECK(backproject(cam, torch::ones({8, 8}), torch::ones({8, 8})).size(0) == 64);
}

TEST_CASE("evaluate reports all eight metrics and self-evaluates cleanly") {
  torch::manual_seed(4);
  ImageSet set;
  set.images = torch::rand({6, 32, 32, 3});
  set.alpha = (torch::rand({6, 32, 32}) > 0.3).to(torch::kFloat32);
  EvalInputs in;
  in.generated = set;
  in.validation = set;
  in.generated_meshes = {cube({0, 0, 0}, 1.0), cube({2, 0, 0}, 1.0)};
  in.validation_clouds = {sample_surface(in.generated_meshes[0], 512, 1),
                          sample_surface(in.generated_meshes[1], 512, 2)};
  in.consistency = {0.01, std::nullopt, 0.03};
  RandomPyramidBackend backend;
  auto rep = evaluate(in, backend, 4000, 0);
  validate_report(rep);
  auto reparsed = nlohmann::json::parse(rep.dump());
  CHECK_NOTHROW(validate_report(reparsed));
  CHECK(reparsed == rep);
  CHECK(rep["metrics"]["fid"].get<double>() < 1e-3);
  CHECK(rep["metrics"]["cov"].get<double>() == 1.0);
  CHECK(rep["metrics"]["mask_fou"].get<double>() == rep["validation_mask_fou"].get<double>());
  CHECK(rep["metrics"]["consistency"].get<double>() == doctest::Approx(0.02));
  CHECK(rep["counts"]["consistency_skipped"].get<int>() == 1);
  CHECK(rep["metrics"]["geometry_cov"].get<double>() == 1.0);
  CHECK(rep["metrics"]["mesh_fou"].get<double>() == 0.0);
  CHECK(report_table(rep).find("Mesh FOU") != std::string::npos);

  EvalInputs partial;
  partial.generated = set;
  auto p = evaluate(partial, backend);
  validate_report(p);
  CHECK(p["metrics"]["fid"].is_null());
  CHECK(p["missing"].size() >= 3);
  CHECK_THROWS(evaluate(EvalInputs{}, backend));
  auto broken = rep;
  broken["metrics"].erase("geometry_mmd");
  CHECK_THROWS(validate_report(broken));
}
