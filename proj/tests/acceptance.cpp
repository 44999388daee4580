// Prints one PASS/FAIL line per acceptance criterion; exits nonzero if any fails.
#include <chrono>
#include <cmath>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

#include "gina/codebook.hpp"
#include "gina/decoder.hpp"
#include "gina/encoder.hpp"
#include "gina/pipeline.hpp"
#include "gina/synthetic.hpp"
#include "gradcheck.hpp"
#include "test_util.hpp"

using namespace gina;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

FieldFn constant_field(double sigma) {
  return [sigma](const torch::Tensor& pts) {
    FieldSample f;
    f.sigma = torch::full({pts.size(0)}, sigma, pts.options());
    f.rgb = torch::full({pts.size(0), 3}, 0.5, pts.options());
    return f;
  };
}

RenderOptions uniform_only(std::int64_t n) {
  RenderOptions o;
  o.samples_uniform = n;
  o.samples_importance = 0;
  return o;
}

// 1. Constant density against 1 - exp(-sigma L).
void rendering_oracle(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  auto o = torch::tensor({{-3.0, 0.1, -0.2}}, torch::kFloat64);
  auto d = torch::tensor({{1.0, 0.0, 0.0}}, torch::kFloat64);
  auto alpha_err = [&](double sigma, std::int64_t n) {
    auto r = render_rays(constant_field(sigma), o, d, {0.5, 0.5, 0.5}, uniform_only(n));
    return std::abs(r.alpha.item<double>() - (1.0 - std::exp(-sigma)));
  };
  double worst64 = 0.0;
  for (double sigma : {0.1, 5.0}) {
    const double e64 = alpha_err(sigma, 64);
    worst64 = std::max(worst64, e64);
    out.require(e64 < 1e-3, "alpha error at 64 samples");
  }
  // Monotone convergence is checked over a wider range, including sigma*L = 1.
  for (double sigma : {0.1, 1.0, 5.0}) {
    auto err = [&](std::int64_t n) { return alpha_err(sigma, n); };
    double prev = err(8);
    for (std::int64_t n : {16, 32, 64, 128}) {
      const double e = err(n);
      out.require(e < prev, "error decreases when samples double");
      prev = e;
    }
  }
  const double t = seconds_since(t0);
  out.require(t < 10.0, "runtime < 10 s");
  out.detail << "max alpha err@64 " << worst64 << " (sigma*L 0.1, 5; at 1: " << alpha_err(1.0, 64) << "), " << t
             << " s";
}

// 2. Finite-difference checks in float64.
void gradient_suite(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  {
    torch::manual_seed(11);
    TriPlaneField field(4, 8, 0);
    field->to(torch::kFloat64);
    FieldBox box;
    box.half = {0.5, 0.4, 0.3};
    box.extent = 1.0;
    Camera cam = Camera::orbit(0.7, 0.4, 2.0, 6.0, 4);
    auto [o, d] = cam.rays(torch::kFloat64);
    auto coeff = torch::rand({o.size(0), 3}, torch::kFloat64);
    auto loss = [&](const torch::Tensor& planes) {
      auto r = render_rays(triplane_field_fn(field, planes, box), o, d, box.half, uniform_only(16));
      return (r.rgb * coeff).sum();
    };
    auto gc = testing::grad_check(loss, torch::randn({3, 4, 4, 4}, torch::kFloat64), 40, 1);
    out.require(gc.max_abs_grad > 1e-6 && gc.max_rel_err < 1e-4, "renderer plane cell -> pixel");
    out.detail << "renderer " << gc.max_rel_err;
  }
  {
    torch::manual_seed(4);
    auto c = testing::tiny_config();
    TriPlaneEncoder enc(c);
    enc->to(torch::kFloat64);
    auto probe = torch::randn({1, 3, 4, 4, 8}, torch::kFloat64);
    auto loss = [&](const torch::Tensor& x) { return (enc(x) * probe).sum(); };
    auto gc = testing::grad_check(loss, torch::rand({1, 16, 16, 3}, torch::kFloat64), 30, 2);
    out.require(gc.max_abs_grad > 1e-6 && gc.max_rel_err < 1e-4, "encoder input -> embedding probe");
    out.detail << ", encoder " << gc.max_rel_err;
  }
  {
    torch::manual_seed(12);
    auto c = testing::tiny_config();
    Codebook cb(c);
    TriPlaneDecoder dec(c);
    TriPlaneField field(c);
    cb->to(torch::kFloat64);
    dec->to(torch::kFloat64);
    field->to(torch::kFloat64);
    FieldBox box;
    Camera cam = Camera::orbit(0.5, 0.4, 2.0, 8.0, 4);
    auto [o, d] = cam.rays(torch::kFloat64);
    auto pixel_loss = [&](const torch::Tensor& zq) {
      auto planes = dec(zq)[0];
      return render_rays(triplane_field_fn(field, planes, box), o, d, box.half, uniform_only(8)).rgb.sum();
    };
    auto e = cb->normalize(torch::randn({1, 3, 4, 4, 8}, torch::kFloat64)).detach().requires_grad_(true);
    auto z = cb->quantize(e).vectors.detach();
    auto grad_e = torch::autograd::grad({pixel_loss(straight_through(e, z))}, {e})[0];
    auto gc = testing::grad_check_against(pixel_loss, z, grad_e, 30, 3, 1e-5);
    out.require(gc.max_abs_grad > 1e-6 && gc.max_rel_err < 1e-4, "straight-through embedding -> pixel loss");
    out.detail << ", straight-through " << gc.max_rel_err;
  }
  const double t = seconds_since(t0);
  out.require(t < 120.0, "runtime < 2 min");
  out.detail << " (max rel err), " << t << " s";
}

// 3. Quantization and the stop-gradient split of the VQ loss.
void vq_contract(Outcome& out) {
  std::int64_t mismatches = 0;
  for (int book = 0; book < 10; ++book) {
    torch::manual_seed(200 + book);
    Codebook cb(64, 8, true);
    auto e = cb->normalize(torch::randn({100, 8}, torch::kFloat64).to(torch::kFloat32));
    auto q = cb->quantize(e);
    auto table = cb->entries.detach().to(torch::kFloat64);
    auto x = e.to(torch::kFloat64);
    for (std::int64_t i = 0; i < 100; ++i) {
      std::int64_t best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (std::int64_t k = 0; k < table.size(0); ++k) {
        const double dist = (table[k] - x[i]).pow(2).sum().item<double>();
        if (dist < best_d) {
          best_d = dist;
          best = k;
        }
      }
      mismatches += q.indices[i].item<std::int64_t>() != best;
    }
    out.require(torch::equal(cb->lookup(q.indices), q.vectors), "lookup(quantize(e)) == z");
  }
  out.require(mismatches == 0, "brute-force argmin");

  torch::manual_seed(3);
  const double beta = 0.25;
  auto e = torch::randn({3, 4, 6}, torch::kFloat64).set_requires_grad(true);
  auto z = torch::randn({3, 4, 6}, torch::kFloat64).set_requires_grad(true);
  auto g_cb = torch::autograd::grad({vq_loss(e, z, 0.0)}, {e, z}, {}, true, false, true);
  out.require(!g_cb[0].defined() || g_cb[0].abs().max().item<double>() == 0.0, "codebook term has zero grad in e");
  out.require(g_cb[1].abs().max().item<double>() > 0.0, "codebook term moves z");
  auto commit = vq_loss(e, z, beta) - vq_loss(e, z, 0.0);
  auto g_cm = torch::autograd::grad({commit}, {e, z}, {}, true, false, true);
  out.require(!g_cm[1].defined() || g_cm[1].abs().max().item<double>() == 0.0, "commitment term has zero grad in z");
  out.require(g_cm[0].abs().max().item<double>() > 0.0, "commitment term moves e");
  auto y = straight_through(e, z);
  auto g = torch::randn({3, 4, 6}, torch::kFloat64);
  auto g_st = torch::autograd::grad({y}, {e, z}, {g}, true, false, true);
  out.require(torch::equal(g_st[0], g), "straight-through copies the gradient to e");
  out.require(!g_st[1].defined() || g_st[1].abs().max().item<double>() == 0.0, "straight-through blocks z");
  out.detail << mismatches << " argmin mismatches over 1000 cells";
}

// 4. Scaled tri-plane query identity.
void scaled_box_identity(Outcome& out) {
  torch::manual_seed(5);
  TriPlaneField field(6, 16, 3);
  auto gen = at::detail::createCPUGenerator(23);
  int exact = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto planes = torch::randn({3, 6, 8, 8}, gen);
    auto p = torch::rand({1, 3}, gen) * 2.0 - 1.0;
    auto s = torch::rand({3}, gen) * 2.0 + 0.05;
    Vec3 scale{s[0].item<double>(), s[1].item<double>(), s[2].item<double>()};
    auto a = field->query(planes, p, scale);
    auto b = field->query(planes, p / s, {1.0, 1.0, 1.0});
    exact += torch::equal(a.sigma, b.sigma) && torch::equal(a.rgb, b.rgb) && torch::equal(a.semantic, b.semantic);
  }
  out.require(exact == 100, "bitwise equality");
  out.detail << exact << "/100 exact";
}

// 5. Occluder pixels do not enter any stage-1 loss term.
void occlusion_insensitivity(Outcome& out) {
  auto c = testing::tiny_config();
  c.depth_loss = true;
  auto g = synthetic::generator_options_for(c);
  g.occlusion_probability = 1.0;
  auto samples = synthetic::generate_samples(3, 21, g);
  auto perturbed = samples;
  std::int64_t touched = 0;
  for (auto& s : perturbed) {
    auto occ = ~(s.object_mask | s.skyroad_mask);
    touched += occ.sum().item<std::int64_t>();
    s.image = torch::where(occ.unsqueeze(-1), torch::rand_like(s.image), s.image);
  }
  out.require(touched > 0, "occluders present");
  Stage1Trainer tr(c);
  Discriminator disc(c.render_resolution, c.discriminator_channels);
  PatchFeatureL2 perceptual;
  auto a = stage1_forward(tr.model, samples, 5, &disc, &perceptual);
  auto b = stage1_forward(tr.model, perturbed, 5, &disc, &perceptual);
  const std::map<std::string, std::pair<torch::Tensor, torch::Tensor>> terms{
      {"rgb", {a.rgb, b.rgb}},   {"perceptual", {a.perceptual, b.perceptual}}, {"alpha", {a.alpha, b.alpha}},
      {"vq", {a.vq, b.vq}},      {"depth", {a.depth, b.depth}},                {"gan", {a.gan_g, b.gan_g}},
      {"tokens", {a.tokens, b.tokens}}};
  for (const auto& [name, pair] : terms) out.require(torch::equal(pair.first, pair.second), name + " unchanged");
  out.detail << touched << " occluder pixels perturbed, " << terms.size() << " terms compared";
}

double overfit_run(const std::vector<ObjectSample>& samples, const PipelineConfig& c, std::vector<double>& losses) {
  Stage1Trainer tr(c);
  tr.fit(samples, 200, [&](std::int64_t, const LossReport& r) { losses.push_back(r.total); });
  torch::NoGradGuard g;
  auto te = stage1_forward(tr.ema, samples, std::nullopt, nullptr, nullptr);
  return masked_psnr(te.x_hat, te.target, te.mask);
}

// 6. Single-sample overfit, EMA weights.
void overfit_regression(Outcome& out) {
  const auto t0 = std::chrono::steady_clock::now();
  auto c = desk_preset();
  c.weight_gan = 0.0;
  auto opts = synthetic::generator_options_for(c);
  opts.occlusion_probability = 0.0;
  auto samples = synthetic::generate_samples(1, 7, opts);
  std::vector<double> la, lb;
  const double psnr = overfit_run(samples, c, la);
  const double t = seconds_since(t0);
  const double again = overfit_run(samples, c, lb);
  out.require(psnr > 25.0, "masked PSNR > 25 dB");
  out.require(psnr == again && la == lb, "deterministic rerun");
  out.require(t < 300.0, "runtime < 5 min");
  out.detail << "EMA masked PSNR " << psnr << " dB, " << t << " s per run";
}

// 7. MaskGIT schedule, sampling and toy tasks.
void maskgit_invariants(Outcome& out) {
  for (std::int64_t u : {1, 5, 48, 192}) {
    for (std::int64_t t : {1, 8, 12}) {
      auto counts = schedule_counts(u, t);
      bool mono = counts.back() == 0;
      for (std::size_t i = 1; i < counts.size(); ++i) mono = mono && counts[i] <= counts[i - 1];
      out.require(mono, "schedule nonincreasing and ends at 0");
    }
  }
  {
    torch::manual_seed(3);
    auto logits = torch::randn({3, 12, 16}, torch::kFloat64).requires_grad_();
    auto targets = torch::randint(16, {3, 12}, torch::kInt64);
    auto mask = torch::rand({3, 12}) < 0.5;
    mask[0][0] = true;
    masked_nll(logits, targets, mask, 0.1).backward();
    auto gsum = logits.grad().abs().sum(-1);
    out.require(gsum.masked_select(~mask).max().item<double>() == 0.0, "unmasked gradient exactly zero");
  }
  auto c = testing::tiny_config();
  c.stage2_dropout = 0.0;
  c.lr_stage2 = 2e-3;
  c.stage2_batch_size = 8;
  const auto l = c.sequence_length();
  SamplingPolicy sharp;
  sharp.token_temperature = 0.1;
  double acc = 0.0;
  {
    Stage2Trainer trainer(c, Stage2Options::from_config(c, Stage2Condition::from_name("none")));
    auto target = (torch::arange(l, torch::kInt64) * 7).remainder(c.codebook_size).unsqueeze(0);
    trainer.fit(target, {}, 800);
    auto model = trainer.model;
    model->eval();
    torch::NoGradGuard g;
    auto [masked, m] = mask_tokens(target.repeat({16, 1}), 0.5, 13, c.codebook_size);
    auto pred = model->forward(masked, {}).argmax(-1);
    acc = (pred == target).masked_select(m).to(torch::kFloat64).mean().item<double>();
    out.require(acc >= 0.99, "toy masked-token accuracy >= 99%");
    auto sample = maskgit_sample(model, 2, {}, sharp, 3);
    out.require((sample != c.codebook_size).all().item<bool>(), "no MASK left after sampling");
    out.require(torch::equal(sample, target.repeat({2, 1})), "sample reproduces the ground truth");
  }
  double worst_branch = 1.0;
  {
    Stage2Trainer trainer(c, Stage2Options::from_config(c, Stage2Condition::from_name("time")));
    auto a = (torch::arange(l, torch::kInt64) * 5).remainder(c.codebook_size);
    auto b = (torch::arange(l, torch::kInt64) * 3 + 11).remainder(c.codebook_size);
    auto data = torch::stack({a, b});
    ConditionBatch cb;
    cb.classes = torch::tensor({0, 1}, torch::kInt64);
    trainer.fit(data, cb, 400);
    auto model = trainer.model;
    model->eval();
    torch::NoGradGuard g;
    auto [masked, m] = mask_tokens(data.repeat({8, 1}), 0.5, 5, c.codebook_size);
    auto cls = cb.repeat(8);
    auto pred = model->forward(masked, cls).argmax(-1);
    for (std::int64_t k = 0; k < 2; ++k) {
      auto rows = cls.classes == k;
      auto hit = (pred == data.repeat({8, 1})).index({rows}).masked_select(m.index({rows}));
      worst_branch = std::min(worst_branch, hit.to(torch::kFloat64).mean().item<double>());
    }
    out.require(worst_branch >= 0.99, "per-branch accuracy >= 99%");
    auto sample = maskgit_sample(model, 2, cb, sharp, 17);
    out.require(torch::equal(sample[0], a) && torch::equal(sample[1], b), "conditional samples follow the class");
  }
  out.detail << "toy accuracy " << acc << ", worst branch " << worst_branch;
}

Mesh cube(const Vec3& lo, double side) {
  Mesh m;
  for (int c = 0; c < 8; ++c) {
    m.vertices.push_back({lo[0] + side * (c & 1), lo[1] + side * ((c >> 1) & 1), lo[2] + side * ((c >> 2) & 1)});
  }
  m.faces = {{0, 2, 1}, {1, 2, 3}, {4, 5, 6}, {5, 7, 6}, {0, 1, 4}, {1, 5, 4},
             {2, 6, 3}, {3, 6, 7}, {0, 4, 2}, {2, 4, 6}, {1, 3, 5}, {3, 7, 5}};
  return m;
}

FieldFn sphere(double radius, double sigma) {
  return [radius, sigma](const torch::Tensor& p) {
    FieldSample s;
    s.sigma = (p.norm(2, -1) < radius).to(p.scalar_type()) * sigma;
    s.rgb = torch::full({p.size(0), 3}, 0.5, p.options());
    return s;
  };
}

// 8. Metric oracles.
void metric_oracles(Outcome& out) {
  const double h = std::sqrt(0.5);
  auto g = torch::tensor({{-h}, {h}}, torch::kFloat64);
  auto v = torch::tensor({{1.0 - h}, {1.0 + h}}, torch::kFloat64);
  const double fid = frechet_distance(g, v);
  out.require(std::abs(fid - 1.0) <= 1e-6, "frechet closed form = 1");

  auto blob = torch::zeros({20, 20});
  blob.slice(0, 2, 10).slice(1, 2, 12) = 1.0;
  auto two = blob.clone();
  two.slice(0, 14, 18).slice(1, 14, 19) = 1.0;
  out.require(mask_fou_single(blob) == 0.0, "mask FOU 0%");
  out.require(std::abs(mask_fou_single(two) - 20.0) < 1e-9, "mask FOU 20%");
  out.require(mask_fou_single(torch::zeros({8, 8})) == 100.0, "mask FOU 100%");

  Mesh pair = cube({0, 0, 0}, 1.0);
  for (auto f : cube({3, 0, 0}, 1.0).faces) pair.faces.push_back({f[0] + 8, f[1] + 8, f[2] + 8});
  for (auto p : cube({3, 0, 0}, 1.0).vertices) pair.vertices.push_back(p);
  out.require(mesh_fou_single(pair) == 50.0, "mesh FOU two cubes = 50%");

  Mesh quad;
  quad.vertices = {{-2, -2, 0}, {2, -2, 0}, {2, 2, 0}, {-2, 2, 0}};
  quad.faces = {{0, 1, 2}, {0, 2, 3}};
  const double d = 0.5;
  const double ch = one_way_chamfer(torch::tensor({{0.1, -0.2, d}}, torch::kFloat64), quad, 10000, 2);
  out.require(std::abs(ch - d * d) <= 0.05 * d * d, "point-plane chamfer within 5% of d^2");

  std::vector<Mesh> shapes = {cube({0, 0, 0}, 1.0), cube({4, 0, 0}, 0.5), cube({0, 5, 0}, 2.0)};
  std::vector<torch::Tensor> clouds;
  for (std::size_t i = 0; i < shapes.size(); ++i) clouds.push_back(sample_surface(shapes[i], 2048, 100 + i));
  auto geo = geometry_cov_mmd(clouds, shapes, 10000, 3);
  out.require(geo.cov == 1.0 && geo.mmd < 1e-3, "geometry self-match COV=1, MMD<1e-3");

  ConsistencyOptions opt;
  opt.resolution = 64;
  opt.angle = 0.0;
  auto same = depth_consistency(sphere(0.3, 2000.0), {0.5, 0.5, 0.5}, Camera::orbit(0.3, 0.4, 2.0, 80.0, 64), opt);
  out.require(same.has_value() && *same == 0.0, "identical-view consistency = 0");
  out.detail << "FID " << std::setprecision(10) << fid << std::setprecision(6) << ", chamfer " << ch << ", geo MMD "
             << geo.mmd << ", consistency " << (same ? *same : -1.0);
}

double sphere_deviation(const Mesh& m, double r) {
  double worst = 0.0;
  for (const auto& p : m.vertices) worst = std::max(worst, std::abs(std::hypot(p[0], p[1], p[2]) - r));
  return worst;
}

bool watertight(const Mesh& m) {
  std::map<std::pair<std::int64_t, std::int64_t>, int> directed;
  for (const auto& f : m.faces) {
    for (int k = 0; k < 3; ++k) directed[{f[k], f[(k + 1) % 3]}] += 1;
  }
  for (const auto& [e, count] : directed) {
    auto it = directed.find({e.second, e.first});
    if (count != 1 || it == directed.end() || it->second != 1) return false;
  }
  return true;
}

// 9. Marching cubes on a sphere.
void marching_cubes_sphere(Outcome& out) {
  const double r = 0.3;
  const Vec3 half{0.5, 0.5, 0.5};
  // Density crossing the threshold exactly on the sphere; a step field biases the area.
  FieldFn smooth = [r](const torch::Tensor& p) {
    FieldSample s;
    s.sigma = (10.0 + 100.0 * (r - p.norm(2, -1))).clamp_min(0.0);
    s.rgb = torch::full({p.size(0), 3}, 0.5, p.options());
    return s;
  };
  auto m = extract_mesh(smooth, half, 64, 10.0);
  const double area = 4.0 * std::numbers::pi * r * r;
  const double area_err = std::abs(m.surface_area() - area) / area;
  out.require(area_err < 0.05, "area within 5%");
  const double voxel = 1.0 / 63.0;
  const double dev64 = sphere_deviation(m, r);
  out.require(dev64 <= voxel, "max deviation <= one voxel (smooth)");
  out.require(watertight(m), "watertight");
  auto step = [&](std::int64_t res) { return extract_mesh(sphere(r, 20.0), half, res, 10.0); };
  auto s64 = step(64);
  out.require(sphere_deviation(s64, r) <= voxel, "max deviation <= one voxel (step)");
  out.require(watertight(s64), "watertight (step)");
  const double d32 = sphere_deviation(step(32), r), d128 = sphere_deviation(step(128), r);
  out.require(d32 > sphere_deviation(s64, r) && sphere_deviation(s64, r) > d128, "deviation shrinks with refinement");
  out.detail << "area err " << 100.0 * area_err << "%, deviation 32/64/128 " << d32 << "/" << sphere_deviation(s64, r)
             << "/" << d128 << " (voxel@64 " << voxel << ")";
}

// 10. Full pipeline on the desk preset.
void end_to_end(Outcome& out, const fs::path& work) {
  const auto t0 = std::chrono::steady_clock::now();
  fs::remove_all(work);
  auto config = desk_preset();
  synthetic::generate_dataset(16, config, 1, work / "data");
  synthetic::generate_dataset(16, config, 2, work / "val");
  RunLayout run(work / "run");
  run.create();

  Stage1Job s1;
  s1.data = work / "data";
  s1.out = run.stage1_ckpt();
  s1.steps = 200;
  train_stage1(config, s1);

  Stage2Job s2;
  s2.data = work / "data";
  s2.stage1 = run.stage1_ckpt();
  s2.out = run.stage2_ckpt();
  s2.steps = 200;
  train_stage2(config, s2);

  SampleJob sj;
  sj.stage1 = run.stage1_ckpt();
  sj.stage2 = run.stage2_ckpt();
  sj.out = run.samples();
  sj.n = 4;
  sj.policy.steps = config.decode_steps;
  sj.seed = config.seed;
  sample_assets(sj);
  auto meshes = mesh_samples(run.stage1_ckpt(), run.samples(), run.meshes(), config.mesh_grid,
                             config.density_threshold, MeshFormat::obj);
  out.require(meshes.size() == 4, "4 meshes written");

  EvalJob ev;
  ev.generated = run.root;
  ev.validation = work / "val";
  auto report = evaluate_run(config, ev);
  const std::vector<std::string> fields{"fid", "mask_fou", "cov", "mmd", "consistency", "mesh_fou", "geometry_cov",
                                        "geometry_mmd"};
  int present = 0;
  for (const auto& f : fields) present += report["metrics"].contains(f) && report["metrics"][f].is_number();
  out.require(present == 8, "eval report has all eight metrics");

  EvalJob self;
  self.generated = work / "val";
  self.validation = work / "val";
  auto sr = evaluate_run(config, self);
  const double fid = sr["metrics"]["fid"].get<double>(), cov = sr["metrics"]["cov"].get<double>();
  out.require(fid < 1e-3, "self-eval FID < 1e-3");
  out.require(cov == 1.0, "self-eval COV = 1");
  const double t = seconds_since(t0);
  out.require(t < 900.0, "runtime < 15 min");
  out.detail << present << "/8 metrics, self FID " << fid << ", self COV " << cov << ", " << t << " s";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance checks"};
  std::vector<int> only;
  std::string work = (fs::temp_directory_path() / "gina_acceptance").string();
  app.add_option("--only", only, "Run only these criteria");
  app.add_option("--work", work, "Scratch directory for the end-to-end run");
  CLI11_PARSE(app, argc, argv);
  if (const char* w = std::getenv("GINA_NUM_WORKERS")) torch::set_num_threads(std::max(1, std::atoi(w)));

  const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> criteria{
      {"rendering oracle", rendering_oracle},
      {"gradient suite", gradient_suite},
      {"VQ contract", vq_contract},
      {"scaled-box identity", scaled_box_identity},
      {"occlusion insensitivity", occlusion_insensitivity},
      {"stage-1 overfit regression", overfit_regression},
      {"MaskGIT invariants", maskgit_invariants},
      {"metric oracles", metric_oracles},
      {"marching-cubes sphere oracle", marching_cubes_sphere},
      {"end-to-end smoke", [&](Outcome& o) { end_to_end(o, work); }},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = static_cast<int>(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Outcome o;
    try {
      criteria[i].second(o);
    } catch (const c10::Error& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what_without_backtrace() << "]";
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail << " [exception: " << e.what() << "]";
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << " " << id << " " << criteria[i].first << ": " << o.detail.str()
              << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
