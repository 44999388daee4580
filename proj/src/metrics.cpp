#include "gina/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <Eigen/Dense>
#include <opencv2/imgproc.hpp>

#include "gina/image_io.hpp"
#include "gina/rng.hpp"

namespace gina {

namespace {

using MatrixXd = Eigen::MatrixXd;
using VectorXd = Eigen::VectorXd;

constexpr double kInf = std::numeric_limits<double>::infinity();

// Sum after sorting so the result does not depend on input order.
double sorted_sum(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  double s = 0.0;
  for (double x : v) s += x;
  return s;
}

MatrixXd to_eigen(const torch::Tensor& t) {
  auto c = t.to(torch::kFloat64).contiguous();
  MatrixXd m(c.size(0), c.size(1));
  auto a = c.accessor<double, 2>();
  for (std::int64_t i = 0; i < c.size(0); ++i) {
    for (std::int64_t j = 0; j < c.size(1); ++j) m(i, j) = a[i][j];
  }
  return m;
}

MatrixXd covariance(const MatrixXd& x, const VectorXd& mu) {
  MatrixXd centered = x.rowwise() - mu.transpose();
  MatrixXd cov = centered.transpose() * centered / static_cast<double>(x.rows() - 1);
  return 0.5 * (cov + cov.transpose());
}

MatrixXd sqrt_psd(const MatrixXd& s) {
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (s + s.transpose()));
  VectorXd root = eig.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return eig.eigenvectors() * root.asDiagonal() * eig.eigenvectors().transpose();
}

// Tr (A B)^(1/2) as Tr (A^(1/2) B A^(1/2))^(1/2), a symmetric PSD product.
double trace_sqrt_product(const MatrixXd& a, const MatrixXd& b) {
  const MatrixXd ra = sqrt_psd(a);
  MatrixXd m = ra * b * ra;
  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(0.5 * (m + m.transpose()), Eigen::EigenvaluesOnly);
  return eig.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
}

void check_points(const torch::Tensor& p, const char* what) {
  if (p.dim() != 2 || p.size(1) != 3) throw std::invalid_argument(std::string(what) + " must be [N, 3]");
  if (p.size(0) == 0) throw std::invalid_argument(std::string(what) + " is empty");
}

}  // namespace

RandomPyramidBackend::RandomPyramidBackend(std::uint64_t seed, std::int64_t dim)
    : pyramid_(seed, {16, 32, dim}) {}

torch::Tensor RandomPyramidBackend::embed(const torch::Tensor& images) const {
  torch::NoGradGuard guard;
  std::vector<torch::Tensor> out;
  for (std::int64_t s = 0; s < images.size(0); s += 64) {
    out.push_back(pyramid_.embed(images.slice(0, s, std::min(images.size(0), s + 64)).to(torch::kFloat32)));
  }
  if (out.empty()) return torch::zeros({0, dimension()}, torch::kFloat64);
  return torch::cat(out);
}

std::unique_ptr<EmbeddingBackend> make_embedding_backend(const std::string& name) {
  if (name == "random_pyramid") return std::make_unique<RandomPyramidBackend>();
  throw std::invalid_argument("unknown embedding backend '" + name + "' (available: random_pyramid)");
}

double frechet_distance(const torch::Tensor& emb_g, const torch::Tensor& emb_v) {
  if (emb_g.dim() != 2 || emb_v.dim() != 2 || emb_g.size(1) != emb_v.size(1)) {
    throw std::invalid_argument("frechet_distance: embedding dimensions differ");
  }
  if (emb_g.size(0) < 2 || emb_v.size(0) < 2) {
    throw std::invalid_argument("frechet_distance needs at least 2 vectors per set");
  }
  const MatrixXd g = to_eigen(emb_g);
  const MatrixXd v = to_eigen(emb_v);
  const VectorXd mg = g.colwise().mean();
  const VectorXd mv = v.colwise().mean();
  const MatrixXd sg = covariance(g, mg);
  const MatrixXd sv = covariance(v, mv);
  const double cross = 0.5 * (trace_sqrt_product(sg, sv) + trace_sqrt_product(sv, sg));
  const double d = (mg - mv).squaredNorm() + sg.trace() + sv.trace() - 2.0 * cross;
  return std::max(d, 0.0);
}

double mask_fou_single(const torch::Tensor& alpha) {
  auto region = (alpha.detach().to(torch::kFloat64) > 0.5).to(torch::kUInt8).contiguous();
  const auto total = region.sum().item<std::int64_t>();
  if (total == 0) return 100.0;
  cv::Mat img(static_cast<int>(region.size(0)), static_cast<int>(region.size(1)), CV_8U, region.data_ptr());
  cv::Mat labels, stats, centroids;
  const int n = cv::connectedComponentsWithStats(img, labels, stats, centroids, 8, CV_32S);
  std::int64_t largest = 0;
  for (int i = 1; i < n; ++i) largest = std::max<std::int64_t>(largest, stats.at<int>(i, cv::CC_STAT_AREA));
  return 100.0 * (1.0 - static_cast<double>(largest) / static_cast<double>(total));
}

double mask_fou(const torch::Tensor& alphas) {
  if (alphas.size(0) == 0) throw std::invalid_argument("mask_fou: empty set");
  std::vector<double> v;
  for (std::int64_t i = 0; i < alphas.size(0); ++i) v.push_back(mask_fou_single(alphas[i]));
  return sorted_sum(v) / static_cast<double>(v.size());
}

CovMmd cov_mmd_from_distances(const torch::Tensor& dist) {
  auto d = dist.to(torch::kFloat64).contiguous();
  const auto nv = d.size(0);
  const auto ng = d.size(1);
  if (nv == 0 || ng == 0) throw std::invalid_argument("COV/MMD need nonempty sets");
  auto a = d.accessor<double, 2>();
  std::set<std::int64_t> matched;
  for (std::int64_t j = 0; j < ng; ++j) {
    std::int64_t best = -1;
    double best_d = kInf;
    for (std::int64_t i = 0; i < nv; ++i) {
      if (std::isfinite(a[i][j]) && a[i][j] < best_d) {
        best_d = a[i][j];
        best = i;
      }
    }
    if (best >= 0) matched.insert(best);
  }
  std::vector<double> mins;
  for (std::int64_t i = 0; i < nv; ++i) {
    double m = kInf;
    for (std::int64_t j = 0; j < ng; ++j) m = std::min(m, a[i][j]);
    mins.push_back(m);
  }
  CovMmd r;
  r.cov = static_cast<double>(matched.size()) / static_cast<double>(nv);
  r.mmd = sorted_sum(mins) / static_cast<double>(nv);
  return r;
}

CovMmd cov_mmd_embeddings(const torch::Tensor& emb_g, const torch::Tensor& emb_v) {
  if (emb_g.size(1) != emb_v.size(1)) throw std::invalid_argument("COV/MMD: embedding dimensions differ");
  auto g = emb_g.to(torch::kFloat64);
  auto v = emb_v.to(torch::kFloat64);
  auto diff = v.unsqueeze(1) - g.unsqueeze(0);
  return cov_mmd_from_distances(diff.pow(2).sum(-1));
}

torch::Tensor sample_surface(const Mesh& mesh, std::int64_t n, std::uint64_t seed) {
  if (mesh.empty()) throw std::invalid_argument("cannot sample an empty mesh");
  const auto nf = static_cast<std::int64_t>(mesh.faces.size());
  auto areas = torch::empty({nf}, torch::kFloat64);
  auto tri = torch::empty({nf, 3, 3}, torch::kFloat64);
  auto aa = areas.accessor<double, 1>();
  auto ta = tri.accessor<double, 3>();
  for (std::int64_t f = 0; f < nf; ++f) {
    aa[f] = mesh.face_area(static_cast<std::size_t>(f));
    for (int k = 0; k < 3; ++k) {
      const auto& v = mesh.vertices[static_cast<std::size_t>(mesh.faces[static_cast<std::size_t>(f)][k])];
      for (int c = 0; c < 3; ++c) ta[f][k][c] = v[static_cast<std::size_t>(c)];
    }
  }
  auto gen = make_generator(seed);
  auto pick = torch::multinomial(areas, n, true, gen);
  auto r1 = torch::rand({n, 1}, gen, torch::kFloat64).sqrt();
  auto r2 = torch::rand({n, 1}, gen, torch::kFloat64);
  auto t = tri.index_select(0, pick);
  return (1 - r1) * t.select(1, 0) + r1 * (1 - r2) * t.select(1, 1) + r1 * r2 * t.select(1, 2);
}

double one_way_chamfer(const torch::Tensor& points, const torch::Tensor& surface) {
  check_points(points, "point cloud");
  check_points(surface, "surface samples");
  auto p = points.to(torch::kFloat64);
  auto s = surface.to(torch::kFloat64);
  std::vector<double> mins;
  mins.reserve(static_cast<std::size_t>(p.size(0)));
  for (std::int64_t i = 0; i < p.size(0); i += 256) {
    auto chunk = p.slice(0, i, std::min(p.size(0), i + 256));
    // Direct differences, no |x|^2 + |y|^2 - 2xy cancellation.
    auto d = torch::cdist(chunk, s, 2.0, /*donot_use_mm*/ 2).pow(2).amin(1).contiguous();
    mins.insert(mins.end(), d.data_ptr<double>(), d.data_ptr<double>() + d.numel());
  }
  return sorted_sum(mins) / static_cast<double>(mins.size());
}

double one_way_chamfer(const torch::Tensor& points, const Mesh& mesh, std::int64_t samples,
                       std::uint64_t seed) {
  check_points(points, "point cloud");
  if (mesh.empty()) return kInf;
  return one_way_chamfer(points, sample_surface(mesh, samples, seed));
}

CovMmd geometry_cov_mmd(const std::vector<torch::Tensor>& clouds, const std::vector<Mesh>& meshes,
                        std::int64_t samples, std::uint64_t seed) {
  if (clouds.empty() || meshes.empty()) throw std::invalid_argument("geometry COV/MMD need nonempty sets");
  std::vector<torch::Tensor> surf;
  for (std::size_t j = 0; j < meshes.size(); ++j) {
    surf.push_back(meshes[j].empty() ? torch::Tensor() : sample_surface(meshes[j], samples, derive_seed(seed, j)));
  }
  auto dist = torch::empty({static_cast<std::int64_t>(clouds.size()), static_cast<std::int64_t>(meshes.size())},
                           torch::kFloat64);
  for (std::size_t i = 0; i < clouds.size(); ++i) {
    for (std::size_t j = 0; j < meshes.size(); ++j) {
      dist[static_cast<std::int64_t>(i)][static_cast<std::int64_t>(j)] =
          surf[j].defined() ? one_way_chamfer(clouds[i], surf[j]) : kInf;
    }
  }
  return cov_mmd_from_distances(dist);
}

double mesh_fou_single(const Mesh& mesh) {
  if (mesh.empty()) return 100.0;
  const auto nf = mesh.faces.size();
  std::vector<std::size_t> parent(nf);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t x) {
    while (parent[x] != x) x = parent[x] = parent[parent[x]];
    return x;
  };
  std::unordered_map<std::int64_t, std::size_t> edge_owner;
  const auto nv = static_cast<std::int64_t>(mesh.vertices.size());
  for (std::size_t f = 0; f < nf; ++f) {
    for (int k = 0; k < 3; ++k) {
      auto a = mesh.faces[f][k];
      auto b = mesh.faces[f][(k + 1) % 3];
      if (a > b) std::swap(a, b);
      auto [it, fresh] = edge_owner.emplace(a * nv + b, f);
      if (!fresh) parent[find(f)] = find(it->second);
    }
  }
  std::unordered_map<std::size_t, std::vector<double>> comp;
  std::vector<double> all;
  for (std::size_t f = 0; f < nf; ++f) {
    const double a = mesh.face_area(f);
    comp[find(f)].push_back(a);
    all.push_back(a);
  }
  double largest = 0.0;
  for (auto& [root, areas] : comp) largest = std::max(largest, sorted_sum(areas));
  const double total = sorted_sum(all);
  if (!(total > 0.0)) return 100.0;
  return 100.0 * (1.0 - largest / total);
}

double mesh_fou(const std::vector<Mesh>& meshes) {
  if (meshes.empty()) throw std::invalid_argument("mesh_fou: empty set");
  std::vector<double> v;
  for (const auto& m : meshes) v.push_back(mesh_fou_single(m));
  return sorted_sum(v) / static_cast<double>(v.size());
}

torch::Tensor backproject(const Camera& camera, const torch::Tensor& depth, const torch::Tensor& alpha) {
  const auto r = depth.size(0);
  auto [o, d] = camera.resized(r).rays(torch::kFloat64);
  auto keep = (alpha.reshape({-1}).to(torch::kFloat64) > 0.5);
  auto pts = o + d * depth.reshape({-1, 1}).to(torch::kFloat64);
  return pts.index({keep});
}

namespace {

struct DepthView {
  Camera camera;
  torch::Tensor points;   // [R*R, 3] back-projected per pixel
  torch::Tensor normals;  // [R*R, 3] facing the camera
  torch::Tensor valid;    // [R*R] bool
  torch::Tensor has_normal;
  torch::Tensor alpha;    // [R, R]
  torch::Tensor surface;  // bilinear fill of valid pixel quads, [M, 3]
};

// Points interpolated inside every 2x2 block of hit pixels whose depths agree,
// so that nearest-point queries see a surface rather than a pixel lattice.
torch::Tensor densify(const torch::Tensor& grid, const torch::Tensor& t, const torch::Tensor& hit, int k) {
  const auto r = grid.size(0);
  if (r < 2) return grid.reshape({-1, 3}).index({hit.reshape({-1})});
  auto c00 = grid.slice(0, 0, r - 1).slice(1, 0, r - 1);
  auto c01 = grid.slice(0, 0, r - 1).slice(1, 1);
  auto c10 = grid.slice(0, 1).slice(1, 0, r - 1);
  auto c11 = grid.slice(0, 1).slice(1, 1);
  auto quad_t = torch::stack({t.slice(0, 0, r - 1).slice(1, 0, r - 1), t.slice(0, 0, r - 1).slice(1, 1),
                              t.slice(0, 1).slice(1, 0, r - 1), t.slice(0, 1).slice(1, 1)}, -1);
  auto spread = std::get<0>(quad_t.max(-1)) - std::get<0>(quad_t.min(-1));
  auto keep = hit.slice(0, 0, r - 1).slice(1, 0, r - 1) & hit.slice(0, 0, r - 1).slice(1, 1) &
              hit.slice(0, 1).slice(1, 0, r - 1) & hit.slice(0, 1).slice(1, 1) &
              (spread < 0.05 * quad_t.mean(-1));
  auto q = torch::stack({c00, c01, c10, c11}, 2).index({keep});  // [Q, 4, 3]
  std::vector<torch::Tensor> out{grid.reshape({-1, 3}).index({hit.reshape({-1})})};
  for (int a = 0; a < k; ++a) {
    for (int b = 0; b < k; ++b) {
      if (a == 0 && b == 0) continue;
      const double v = double(a) / k, u = double(b) / k;
      out.push_back(q.select(1, 0) * ((1 - v) * (1 - u)) + q.select(1, 1) * ((1 - v) * u) +
                    q.select(1, 2) * (v * (1 - u)) + q.select(1, 3) * (v * u));
    }
  }
  return torch::cat(out);
}

DepthView depth_view(const FieldFn& field, const Vec3& half, const Camera& camera,
                     const ConsistencyOptions& opt) {
  const auto r = opt.resolution;
  DepthView v;
  v.camera = camera.resized(r);
  auto out = render(field, camera, half, r, opt.render, torch::kFloat64);
  v.alpha = out.alpha;
  auto hit = out.alpha > 0.5;
  auto t = out.depth / out.alpha.clamp_min(1e-12);
  auto [o, d] = v.camera.rays(torch::kFloat64);
  auto grid = (o + d * t.reshape({-1, 1})).view({r, r, 3});
  // Normals from neighbouring hit pixels: central differences where both sides hit,
  // one-sided otherwise. Pixels with no usable neighbour on an axis get no normal.
  auto diff = [&](int dim) {
    auto g = torch::zeros_like(grid);
    auto ok = torch::zeros({r, r}, torch::kBool);
    if (r < 2) return std::make_pair(g, ok);
    auto fwd = torch::zeros_like(grid), bwd = torch::zeros_like(grid);
    auto fok = torch::zeros({r, r}, torch::kBool), bok = torch::zeros({r, r}, torch::kBool);
    fwd.slice(dim, 0, r - 1).copy_(grid.slice(dim, 1) - grid.slice(dim, 0, r - 1));
    fok.slice(dim, 0, r - 1).copy_(hit.slice(dim, 1) & hit.slice(dim, 0, r - 1));
    bwd.slice(dim, 1).copy_(grid.slice(dim, 1) - grid.slice(dim, 0, r - 1));
    bok.slice(dim, 1).copy_(fok.slice(dim, 0, r - 1));
    g = torch::where((fok & bok).unsqueeze(-1), 0.5 * (fwd + bwd),
                     torch::where(fok.unsqueeze(-1), fwd, bwd));
    return std::make_pair(g, fok | bok);
  };
  auto [du, uok] = diff(1);
  auto [dv, vok] = diff(0);
  auto n = torch::cross(du, dv, -1);
  auto dflat = d.view({r, r, 3});
  n = n / n.norm(2, -1, true).clamp_min(1e-30);
  auto facing = (n * dflat).sum(-1) < 0;
  n = torch::where(facing.unsqueeze(-1), n, -n);
  v.has_normal = (hit & uok & vok).reshape({-1});
  v.points = grid.reshape({-1, 3});
  v.normals = n.reshape({-1, 3});
  v.valid = hit.reshape({-1});
  v.surface = densify(grid, t, hit, 4);
  return v;
}

// Valid points of `a` that lie in `b`'s frame and silhouette and face `b`'s camera.
torch::Tensor visible_in(const DepthView& a, const DepthView& b) {
  auto pts = a.points.index({a.has_normal});
  auto nrm = a.normals.index({a.has_normal});
  if (pts.size(0) == 0) return pts;
  const auto r = b.alpha.size(0);
  auto [uv, z] = b.camera.project(pts);
  auto col = uv.select(1, 0).floor();
  auto row = uv.select(1, 1).floor();
  auto inside = (z > 0) & (col >= 0) & (col < r) & (row >= 0) & (row < r);
  auto idx = (row.clamp(0, r - 1) * r + col.clamp(0, r - 1)).to(torch::kInt64);
  auto fg = b.alpha.reshape({-1}).index_select(0, idx) > 0.5;
  auto pos = torch::tensor(std::vector<double>(b.camera.position.begin(), b.camera.position.end()),
                           torch::kFloat64);
  auto faces = ((pos - pts) * nrm).sum(-1) > 0;
  return pts.index({inside & fg & faces});
}

}  // namespace

std::optional<double> depth_consistency(const FieldFn& field, const Vec3& half, const Camera& camera,
                                        const ConsistencyOptions& options) {
  torch::NoGradGuard guard;
  auto a = depth_view(field, half, camera, options);
  auto b = depth_view(field, half, camera.rotated_about_z(options.angle), options);
  if (!a.valid.any().item<bool>() || !b.valid.any().item<bool>()) return std::nullopt;
  auto va = visible_in(a, b);
  auto vb = visible_in(b, a);
  if (va.size(0) == 0 || vb.size(0) == 0) return std::nullopt;
  const double s = options.normalized_edge / (2.0 * *std::max_element(half.begin(), half.end()));
  return 0.5 * (one_way_chamfer(va * s, b.surface * s) + one_way_chamfer(vb * s, a.surface * s));
}

ImageSet validation_images(const std::vector<ObjectSample>& samples, std::int64_t resolution,
                           double min_visible) {
  std::vector<torch::Tensor> imgs, alphas;
  for (const auto& s : samples) {
    if (s.extra.contains("visible_fraction") && s.extra["visible_fraction"].get<double>() < min_visible) continue;
    imgs.push_back(io::area_resize(s.whitened().to(torch::kFloat32), resolution));
    alphas.push_back(io::area_resize(s.object_mask.to(torch::kFloat32).unsqueeze(-1), resolution).squeeze(-1));
  }
  ImageSet set;
  if (imgs.empty()) return set;
  set.images = torch::stack(imgs);
  set.alpha = torch::stack(alphas);
  return set;
}

std::vector<torch::Tensor> validation_clouds(const std::vector<ObjectSample>& samples, std::int64_t points,
                                             std::uint64_t seed, double min_visible) {
  std::vector<torch::Tensor> out;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    if (!s.depth) continue;
    if (s.extra.contains("visible_fraction") && s.extra["visible_fraction"].get<double>() < min_visible) continue;
    auto valid = s.object_mask.clone();
    if (s.depth_valid) valid = valid & *s.depth_valid;
    auto depth = *s.depth;
    auto [o, d] = s.camera.rays(torch::kFloat64);
    auto pts = (o + d * depth.reshape({-1, 1}).to(torch::kFloat64)).index({valid.reshape({-1})});
    if (pts.size(0) == 0) continue;
    if (pts.size(0) > points) {
      auto gen = make_generator(derive_seed(seed, i));
      pts = pts.index_select(0, torch::randperm(pts.size(0), gen).slice(0, 0, points));
    }
    out.push_back(pts);
  }
  return out;
}

nlohmann::json evaluate(const EvalInputs& in, const EmbeddingBackend& backend, std::int64_t chamfer_samples,
                        std::uint64_t seed) {
  if (in.generated.size() == 0) throw std::invalid_argument("evaluate: the generated set is empty");
  nlohmann::json rep;
  rep["schema"] = kEvalSchema;
  rep["embedding_backend"] = backend.name();
  auto missing = in.missing;
  nlohmann::json m = {{"fid", nullptr},         {"mask_fou", nullptr},   {"cov", nullptr},
                      {"mmd", nullptr},         {"consistency", nullptr}, {"mesh_fou", nullptr},
                      {"geometry_cov", nullptr}, {"geometry_mmd", nullptr}};
  m["mask_fou"] = mask_fou(in.generated.alpha);
  if (in.validation.size() > 0) {
    auto eg = backend.embed(in.generated.images);
    auto ev = backend.embed(in.validation.images);
    if (eg.size(0) >= 2 && ev.size(0) >= 2) {
      m["fid"] = frechet_distance(eg, ev);
    } else {
      missing.push_back("fid: needs at least 2 images per set");
    }
    auto cm = cov_mmd_embeddings(eg, ev);
    m["cov"] = cm.cov;
    m["mmd"] = cm.mmd;
    rep["validation_mask_fou"] = mask_fou(in.validation.alpha);
  } else {
    missing.push_back("validation images");
  }
  std::int64_t skipped = 0;
  std::vector<double> cons;
  for (const auto& c : in.consistency) {
    if (c) {
      cons.push_back(*c);
    } else {
      ++skipped;
    }
  }
  if (!cons.empty()) {
    m["consistency"] = sorted_sum(cons) / static_cast<double>(cons.size());
  } else {
    missing.push_back("consistency: no decoded assets with valid depth");
  }
  if (!in.generated_meshes.empty()) {
    m["mesh_fou"] = mesh_fou(in.generated_meshes);
    if (!in.validation_clouds.empty()) {
      auto g = geometry_cov_mmd(in.validation_clouds, in.generated_meshes, chamfer_samples, seed);
      m["geometry_cov"] = g.cov;
      m["geometry_mmd"] = std::isfinite(g.mmd) ? nlohmann::json(g.mmd) : nlohmann::json(nullptr);
    } else {
      missing.push_back("validation point clouds");
    }
  } else {
    missing.push_back("generated meshes");
  }
  rep["metrics"] = m;
  std::int64_t empty_meshes = 0;
  for (const auto& mesh : in.generated_meshes) empty_meshes += mesh.empty();
  rep["counts"] = {{"generated_images", in.generated.size()},
                   {"validation_images", in.validation.size()},
                   {"generated_meshes", in.generated_meshes.size()},
                   {"empty_meshes", empty_meshes},
                   {"validation_clouds", in.validation_clouds.size()},
                   {"consistency_assets", cons.size()},
                   {"consistency_skipped", skipped}};
  rep["missing"] = missing;
  return rep;
}

void validate_report(const nlohmann::json& r) {
  if (!r.is_object()) throw std::runtime_error("report is not a JSON object");
  if (r.value("schema", "") != kEvalSchema) throw std::runtime_error("report schema is not " + std::string(kEvalSchema));
  if (!r.contains("metrics") || !r["metrics"].is_object()) throw std::runtime_error("report has no metrics object");
  for (const char* k : {"fid", "mask_fou", "cov", "mmd", "consistency", "mesh_fou", "geometry_cov", "geometry_mmd"}) {
    if (!r["metrics"].contains(k)) throw std::runtime_error(std::string("report is missing metric ") + k);
    const auto& v = r["metrics"][k];
    if (!v.is_null() && !v.is_number()) throw std::runtime_error(std::string("metric ") + k + " is not a number");
  }
  for (const char* k : {"cov", "geometry_cov"}) {
    const auto& v = r["metrics"][k];
    if (v.is_number() && (v.get<double>() < 0.0 || v.get<double>() > 1.0)) {
      throw std::runtime_error(std::string(k) + " outside [0, 1]");
    }
  }
  for (const char* k : {"mask_fou", "mesh_fou"}) {
    const auto& v = r["metrics"][k];
    if (v.is_number() && (v.get<double>() < 0.0 || v.get<double>() > 100.0)) {
      throw std::runtime_error(std::string(k) + " outside [0, 100]");
    }
  }
  if (!r.contains("missing") || !r["missing"].is_array()) throw std::runtime_error("report has no missing list");
  if (!r.contains("counts") || !r["counts"].is_object()) throw std::runtime_error("report has no counts");
}

std::string report_table(const nlohmann::json& r) {
  std::ostringstream out;
  const std::vector<std::pair<const char*, const char*>> rows = {
      {"fid", "FID"},           {"mask_fou", "Mask FOU (%)"},       {"cov", "COV"},
      {"mmd", "MMD"},           {"consistency", "Consistency"},     {"mesh_fou", "Mesh FOU (%)"},
      {"geometry_cov", "Geometry COV"}, {"geometry_mmd", "Geometry MMD"}};
  out << std::left << std::setw(16) << "metric" << "value\n";
  for (const auto& [key, label] : rows) {
    out << std::left << std::setw(16) << label;
    const auto& v = r["metrics"][key];
    if (v.is_null()) {
      out << "n/a";
    } else {
      out << std::setprecision(6) << v.get<double>();
    }
    out << '\n';
  }
  return out.str();
}

}  // namespace gina
