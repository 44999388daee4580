#include "gina/render.hpp"

#include <limits>
#include <stdexcept>

namespace gina {

namespace F = torch::nn::functional;

namespace {

torch::Tensor vec_tensor(const Vec3& v, const torch::Tensor& like) {
  return torch::tensor({v[0], v[1], v[2]}, torch::TensorOptions().dtype(torch::kFloat64))
      .to(like.scalar_type());
}

}  // namespace

FieldBox FieldBox::for_object(const PipelineConfig& config, const Vec3& scale) {
  FieldBox box;
  box.extent = config.world_extent;
  for (int a = 0; a < 3; ++a) {
    if (!(scale[a] > 0.0)) throw std::invalid_argument("object scale must be positive");
    box.half[a] = 0.5 * (config.scaled_box ? scale[a] : config.world_extent);
  }
  return box;
}

Vec3 FieldBox::query_scale() const {
  return {2.0 * half[0] / extent, 2.0 * half[1] / extent, 2.0 * half[2] / extent};
}

torch::Tensor FieldBox::to_unit(const torch::Tensor& points) const {
  return (points + vec_tensor(half, points)) / extent;
}

TriPlaneFieldImpl::TriPlaneFieldImpl(std::int64_t plane_channels, std::int64_t hidden,
                                     std::int64_t semantic)
    : semantic_channels(semantic) {
  fc1 = register_module("fc1", torch::nn::Linear(plane_channels, hidden));
  fc2 = register_module("fc2", torch::nn::Linear(hidden, 4 + semantic));
}

torch::Tensor TriPlaneFieldImpl::sample_features(const torch::Tensor& planes,
                                                 const torch::Tensor& p_hat) const {
  auto g = p_hat * 2.0 - 1.0;
  auto x = g.select(1, 0);
  auto y = g.select(1, 1);
  auto z = g.select(1, 2);
  // Plane rows index the first named axis, columns the second; grid_sample takes (col, row).
  auto grid = torch::stack({torch::stack({y, x}, -1), torch::stack({z, x}, -1),
                            torch::stack({z, y}, -1)},
                           0)
                  .unsqueeze(1);  // [3, 1, P, 2]
  auto s = F::grid_sample(planes, grid,
                          F::GridSampleFuncOptions()
                              .mode(torch::kBilinear)
                              .padding_mode(torch::kBorder)
                              .align_corners(false));  // [3, D, 1, P]
  return s.sum(0).squeeze(1).transpose(0, 1);
}

FieldSample TriPlaneFieldImpl::query(const torch::Tensor& planes, const torch::Tensor& p,
                                     const Vec3& scale) {
  for (double s : scale) {
    if (!(s > 0.0)) throw std::invalid_argument("query scale must be positive");
  }
  auto p_hat = p / vec_tensor(scale, p);
  auto h = F::softplus(fc1(sample_features(planes, p_hat)));
  auto out = fc2(h);
  FieldSample r;
  r.sigma = F::softplus(out.select(1, 0));
  r.rgb = torch::sigmoid(out.slice(1, 1, 4));
  if (semantic_channels > 0) r.semantic = out.slice(1, 4);
  return r;
}

FieldFn triplane_field_fn(TriPlaneField field, torch::Tensor planes, FieldBox box) {
  return [field, planes, box](const torch::Tensor& points) mutable {
    if (points.scalar_type() == planes.scalar_type()) return field->query(planes, box.to_unit(points), box.query_scale());
    auto f = field->query(planes, box.to_unit(points).to(planes.scalar_type()), box.query_scale());
    const auto dt = points.scalar_type();
    return FieldSample{f.sigma.to(dt), f.rgb.to(dt), f.semantic.defined() ? f.semantic.to(dt) : f.semantic};
  };
}

std::pair<torch::Tensor, torch::Tensor> ray_box_intersect(const torch::Tensor& origins,
                                                          const torch::Tensor& dirs,
                                                          const Vec3& half) {
  auto h = vec_tensor(half, origins);
  auto t1 = (-h - origins) / dirs;
  auto t2 = (h - origins) / dirs;
  auto t_near = torch::minimum(t1, t2).amax(1).clamp_min(0.0);
  auto t_far = torch::maximum(t1, t2).amin(1);
  return {t_near, t_far};
}

torch::Tensor compositing_weights(const torch::Tensor& sigma, const torch::Tensor& t,
                                  const torch::Tensor& t_far) {
  auto delta = torch::cat({t.slice(1, 1) - t.slice(1, 0, -1), t_far.unsqueeze(1) - t.slice(1, -1)}, 1)
                   .clamp_min(0.0);
  auto tau = sigma * delta;
  auto excl = torch::cat({torch::zeros_like(tau.slice(1, 0, 1)), tau.cumsum(1).slice(1, 0, -1)}, 1);
  return torch::exp(-excl) * (1.0 - torch::exp(-tau));
}

namespace {

// Inverse-CDF sampling of `n` distances from piecewise-constant bin weights.
torch::Tensor sample_pdf(const torch::Tensor& edges, const torch::Tensor& weights, std::int64_t n,
                         const std::optional<at::Generator>& gen) {
  auto w = weights + 1e-5;
  auto pdf = w / w.sum(1, true);
  auto cdf = torch::cat({torch::zeros_like(pdf.slice(1, 0, 1)), pdf.cumsum(1)}, 1);
  cdf.select(1, -1).fill_(1.0);
  const auto rays = weights.size(0);
  torch::Tensor u;
  if (gen) {
    u = std::get<0>(torch::rand({rays, n}, *gen, weights.options()).sort(1));
  } else {
    u = ((torch::arange(n, weights.options()) + 0.5) / static_cast<double>(n)).expand({rays, n}).contiguous();
  }
  auto idx = torch::searchsorted(cdf, u, /*out_int32=*/false, /*right=*/true);
  const auto bins = weights.size(1);
  auto below = (idx - 1).clamp(0, bins);
  auto above = idx.clamp(0, bins);
  auto cdf_lo = cdf.gather(1, below);
  auto cdf_hi = cdf.gather(1, above);
  auto e_lo = edges.gather(1, below);
  auto e_hi = edges.gather(1, above);
  auto denom = cdf_hi - cdf_lo;
  auto frac = torch::where(denom > 1e-12, (u - cdf_lo) / denom.clamp_min(1e-12), torch::zeros_like(u));
  return e_lo + frac * (e_hi - e_lo);
}

struct ChunkResult {
  torch::Tensor rgb, alpha, depth, semantic, weights, t;
};

ChunkResult render_chunk(const FieldFn& field, const torch::Tensor& o, const torch::Tensor& d,
                         const torch::Tensor& t_near, const torch::Tensor& t_far,
                         const RenderOptions& opt) {
  const auto n = o.size(0);
  const auto su = opt.samples_uniform;
  const auto si = opt.samples_importance;
  auto opts = o.options();
  auto step = (t_far - t_near) / static_cast<double>(su);
  torch::Tensor offs;
  if (opt.generator) {
    offs = torch::rand({n, su}, *opt.generator, opts);
  } else {
    offs = torch::full({n, su}, 0.5, opts);
  }
  auto t_u = t_near.unsqueeze(1) + (torch::arange(su, opts).unsqueeze(0) + offs) * step.unsqueeze(1);

  auto query = [&](const torch::Tensor& t) {
    const auto s = t.size(1);
    auto pts = o.unsqueeze(1) + t.unsqueeze(2) * d.unsqueeze(1);
    auto f = field(pts.reshape({n * s, 3}));
    FieldSample r;
    r.sigma = f.sigma.reshape({n, s});
    r.rgb = f.rgb.reshape({n, s, 3});
    if (f.semantic.defined()) r.semantic = f.semantic.reshape({n, s, -1});
    return r;
  };

  auto coarse = query(t_u);
  torch::Tensor t_all = t_u;
  FieldSample all = coarse;
  if (si > 0) {
    torch::Tensor t_i;
    {
      torch::NoGradGuard guard;
      auto w = compositing_weights(coarse.sigma.detach(), t_u, t_far);
      auto edges = t_near.unsqueeze(1) + torch::arange(su + 1, opts).unsqueeze(0) * step.unsqueeze(1);
      t_i = sample_pdf(edges, w, si, opt.generator);
    }
    auto fine = query(t_i);
    auto cat_t = torch::cat({t_u, t_i}, 1);
    auto [sorted, order] = cat_t.sort(1);
    t_all = sorted;
    all.sigma = torch::cat({coarse.sigma, fine.sigma}, 1).gather(1, order);
    all.rgb = torch::cat({coarse.rgb, fine.rgb}, 1).gather(1, order.unsqueeze(2).expand({-1, -1, 3}));
    if (coarse.semantic.defined()) {
      auto sem = torch::cat({coarse.semantic, fine.semantic}, 1);
      all.semantic = sem.gather(1, order.unsqueeze(2).expand({-1, -1, sem.size(2)}));
    }
  }
  auto w = compositing_weights(all.sigma, t_all, t_far);
  ChunkResult r;
  r.weights = w;
  r.t = t_all;
  r.alpha = w.sum(1);
  r.rgb = (w.unsqueeze(2) * all.rgb).sum(1);
  r.depth = (w * t_all).sum(1);
  if (all.semantic.defined()) r.semantic = (w.unsqueeze(2) * all.semantic).sum(1);
  return r;
}

}  // namespace

RayRenderResult render_rays(const FieldFn& field, const torch::Tensor& origins,
                            const torch::Tensor& dirs, const Vec3& half, const RenderOptions& opt) {
  if (origins.dim() != 2 || origins.size(1) != 3 || dirs.sizes() != origins.sizes()) {
    throw std::invalid_argument("render_rays expects origins and dirs shaped [N, 3]");
  }
  if (opt.samples_uniform < 1 || opt.samples_importance < 0) {
    throw std::invalid_argument("render_rays: need at least one uniform sample");
  }
  const auto n = origins.size(0);
  if (n > 0 && (dirs.norm(2, 1) == 0).any().item<bool>()) {
    throw std::invalid_argument("degenerate ray: zero direction");
  }
  auto [t_near, t_far] = ray_box_intersect(origins, dirs, half);
  auto hit = t_far > t_near;
  auto hit_idx = hit.nonzero().squeeze(1);
  const auto s = opt.samples_uniform + opt.samples_importance;
  auto opts = origins.options();

  RayRenderResult out;
  out.hit = hit;
  std::vector<ChunkResult> parts;
  for (std::int64_t start = 0; start < hit_idx.size(0); start += opt.chunk) {
    auto idx = hit_idx.slice(0, start, std::min(hit_idx.size(0), start + opt.chunk));
    parts.push_back(render_chunk(field, origins.index_select(0, idx), dirs.index_select(0, idx),
                                 t_near.index_select(0, idx), t_far.index_select(0, idx), opt));
  }
  auto gather = [&](auto member, std::vector<std::int64_t> tail) {
    std::vector<torch::Tensor> xs;
    for (auto& p : parts) xs.push_back(p.*member);
    std::vector<std::int64_t> shape{n};
    shape.insert(shape.end(), tail.begin(), tail.end());
    auto full = torch::zeros(shape, opts);
    if (xs.empty()) return full;
    return full.index_copy(0, hit_idx, torch::cat(xs, 0));
  };
  out.rgb = gather(&ChunkResult::rgb, {3});
  out.alpha = gather(&ChunkResult::alpha, {});
  out.depth = gather(&ChunkResult::depth, {});
  out.weights = gather(&ChunkResult::weights, {s});
  out.t = gather(&ChunkResult::t, {s});
  if (!parts.empty() && parts.front().semantic.defined()) {
    out.semantic = gather(&ChunkResult::semantic, {parts.front().semantic.size(1)});
  }
  return out;
}

RenderOutput render(const FieldFn& field, const Camera& camera, const Vec3& half,
                    std::int64_t resolution, const RenderOptions& options, torch::ScalarType dtype) {
  camera.validate();
  auto cam = camera.resized(resolution);
  auto [o, d] = cam.rays(dtype);
  auto r = render_rays(field, o, d, half, options);
  RenderOutput out;
  out.rgb = r.rgb.view({resolution, resolution, 3});
  out.alpha = r.alpha.view({resolution, resolution});
  out.depth = r.depth.view({resolution, resolution});
  if (r.semantic.defined()) out.semantic = r.semantic.view({resolution, resolution, -1});
  return out;
}

}  // namespace gina
