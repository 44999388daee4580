#include <doctest.h>

#include <cmath>
#include <map>
#include <numbers>

#include "gina/mesh.hpp"

using namespace gina;

namespace {

const Vec3 kCenter{0.03, -0.02, 0.01};
constexpr double kRadius = 0.3;

FieldFn sphere_field(double sigma) {
  return [sigma](const torch::Tensor& p) {
    auto c = torch::tensor({kCenter[0], kCenter[1], kCenter[2]}, p.options());
    FieldSample s;
    s.sigma = ((p - c).norm(2, -1) < kRadius).to(p.scalar_type()) * sigma;
    s.rgb = torch::full({p.size(0), 3}, 0.25, p.options());
    return s;
  };
}

// Density crossing 10 exactly on the sphere, linear in the distance to it.
FieldFn smooth_sphere_field() {
  return [](const torch::Tensor& p) {
    auto c = torch::tensor({kCenter[0], kCenter[1], kCenter[2]}, p.options());
    FieldSample s;
    s.sigma = (10.0 + 100.0 * (kRadius - (p - c).norm(2, -1))).clamp_min(0.0);
    s.rgb = torch::full({p.size(0), 3}, 0.25, p.options());
    return s;
  };
}

double max_sphere_deviation(const Mesh& m) {
  double worst = 0.0;
  for (const auto& v : m.vertices) {
    const double r = std::hypot(v[0] - kCenter[0], v[1] - kCenter[1], v[2] - kCenter[2]);
    worst = std::max(worst, std::abs(r - kRadius));
  }
  return worst;
}

// Every undirected edge used by exactly two faces, in opposite directions.
bool watertight_and_oriented(const Mesh& m) {
  std::map<std::pair<std::int64_t, std::int64_t>, int> directed;
  for (const auto& f : m.faces) {
    for (int k = 0; k < 3; ++k) directed[{f[k], f[(k + 1) % 3]}] += 1;
  }
  for (const auto& [e, count] : directed) {
    if (count != 1) return false;
    auto it = directed.find({e.second, e.first});
    if (it == directed.end() || it->second != 1) return false;
  }
  return true;
}

Mesh unit_cube() {
  Mesh m;
  for (int c = 0; c < 8; ++c) m.vertices.push_back({double(c & 1), double((c >> 1) & 1), double((c >> 2) & 1)});
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

std::filesystem::path tmp(const std::string& name) { return std::filesystem::temp_directory_path() / name; }

}  // namespace

TEST_CASE("case tables close every cube consistently") {
  CHECK(marching_cubes_case(0).empty());
  CHECK(marching_cubes_case(255).empty());
  CHECK(marching_cubes_case(1).size() == 1);
  int nonempty = 0;
  for (int cs = 1; cs < 255; ++cs) {
    nonempty += !marching_cubes_case(cs).empty();
    // Every used edge separates an inside corner from an outside one.
    for (const auto& tri : marching_cubes_case(cs)) {
      for (int e : tri) {
        auto [a, b] = marching_cubes_edge(e);
        CHECK(((cs >> a) & 1) != ((cs >> b) & 1));
      }
    }
  }
  CHECK(nonempty == 254);
}

TEST_CASE("random binary grids give closed, consistently oriented surfaces") {
  for (int trial = 0; trial < 20; ++trial) {
    torch::manual_seed(trial);
    auto d = (torch::rand({7, 7, 7}, torch::kFloat64) > 0.5).to(torch::kFloat64);
    // Empty border so the surface cannot leave the grid.
    d.slice(0, 0, 1).zero_();
    d.slice(0, 6, 7).zero_();
    d.slice(1, 0, 1).zero_();
    d.slice(1, 6, 7).zero_();
    d.slice(2, 0, 1).zero_();
    d.slice(2, 6, 7).zero_();
    auto m = marching_cubes(d, {1, 1, 1}, 0.5);
    REQUIRE_FALSE(m.empty());
    CHECK(watertight_and_oriented(m));
    m.validate();
  }
}

TEST_CASE("sphere oracle: area, deviation, watertightness, orientation") {
  const Vec3 half{0.5, 0.5, 0.5};
  auto m = extract_mesh(sphere_field(20.0), half, 64, 10.0);
  REQUIRE_FALSE(m.empty());
  m.validate();
  const double area = 4.0 * std::numbers::pi * kRadius * kRadius;
  // The step field puts every vertex on an edge midpoint; the staircase bias keeps
  // its area roughly 8% high, so the tight area check uses the smooth field.
  CHECK(m.surface_area() > area);
  CHECK((m.surface_area() - area) / area < 0.10);
  auto smooth = extract_mesh(smooth_sphere_field(), half, 64, 10.0);
  CHECK(std::abs(smooth.surface_area() - area) / area < 0.05);
  CHECK(watertight_and_oriented(smooth));
  const double voxel = 1.0 / 63.0;
  CHECK(max_sphere_deviation(m) <= voxel);
  CHECK(watertight_and_oriented(m));
  // Normals point away from the centre.
  int outward = 0;
  for (std::size_t f = 0; f < m.faces.size(); ++f) {
    const auto& a = m.vertices[m.faces[f][0]];
    const auto& b = m.vertices[m.faces[f][1]];
    const auto& c = m.vertices[m.faces[f][2]];
    const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]}, v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
    const Vec3 n{u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]};
    const double dot = n[0] * (a[0] - kCenter[0]) + n[1] * (a[1] - kCenter[1]) + n[2] * (a[2] - kCenter[2]);
    outward += dot > 0;
  }
  CHECK(outward == static_cast<int>(m.faces.size()));
  for (const auto& v : m.vertices) {
    for (int a = 0; a < 3; ++a) CHECK(std::abs(v[a]) <= half[a]);
  }
}

TEST_CASE("sphere deviation shrinks as the grid is refined") {
  const Vec3 half{0.5, 0.5, 0.5};
  const double d32 = max_sphere_deviation(extract_mesh(sphere_field(20.0), half, 32, 10.0));
  const double d64 = max_sphere_deviation(extract_mesh(sphere_field(20.0), half, 64, 10.0));
  const double d128 = max_sphere_deviation(extract_mesh(sphere_field(20.0), half, 128, 10.0));
  CHECK(d64 < d32);
  CHECK(d128 < d64);
}

TEST_CASE("empty field gives an empty mesh") {
  auto m = extract_mesh(sphere_field(0.0), {0.5, 0.5, 0.5}, 16, 10.0);
  CHECK(m.empty());
  CHECK(m.vertices.empty());
  CHECK_THROWS(extract_mesh(sphere_field(20.0), {0.5, 0.5, 0.5}, 4, 10.0));
  const auto path = tmp("gina_empty.obj");
  export_mesh(m, path);
  CHECK(import_mesh(path).empty());
  std::filesystem::remove(path);
}

TEST_CASE("vertex colors come from the field") {
  auto m = extract_mesh(sphere_field(20.0), {0.5, 0.5, 0.5}, 16, 10.0, true);
  REQUIRE(m.colors.size() == m.vertices.size());
  CHECK(m.colors[0][1] == doctest::Approx(0.25));
}

TEST_CASE("cube round-trips exactly through OBJ and PLY") {
  auto cube = unit_cube();
  cube.validate();
  CHECK(cube.surface_area() == doctest::Approx(6.0));
  for (const char* ext : {"obj", "ply"}) {
    const auto path = tmp(std::string("gina_cube.") + ext);
    export_mesh(cube, path);
    auto back = import_mesh(path);
    CHECK((back.vertices == cube.vertices));
    CHECK((back.faces == cube.faces));
    std::filesystem::remove(path);
  }
  CHECK_THROWS_AS(export_mesh(cube, tmp("gina_cube.stl")), std::invalid_argument);
}

TEST_CASE("sphere mesh re-imports with identical face count") {
  auto m = extract_mesh(sphere_field(20.0), {0.5, 0.5, 0.5}, 32, 10.0, true);
  for (const char* ext : {"obj", "ply"}) {
    const auto path = tmp(std::string("gina_sphere.") + ext);
    export_mesh(m, path);
    auto back = import_mesh(path);
    CHECK(back.faces.size() == m.faces.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < m.vertices.size(); ++i) {
      for (int a = 0; a < 3; ++a) worst = std::max(worst, std::abs(back.vertices[i][a] - m.vertices[i][a]));
    }
    CHECK(worst <= 1e-6);
    CHECK(back.colors.size() == m.colors.size());
    std::filesystem::remove(path);
  }
}
