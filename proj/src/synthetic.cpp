#include "gina/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <optional>
#include <stdexcept>

#include "gina/dataset.hpp"

namespace gina::synthetic {

namespace {

constexpr double kEps = 1e-9;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct V3 {
  double x = 0, y = 0, z = 0;
  V3() = default;
  V3(double x_, double y_, double z_) : x(x_), y(y_), z(z_) {}
  explicit V3(const Vec3& a) : x(a[0]), y(a[1]), z(a[2]) {}
  V3 operator+(const V3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  V3 operator-(const V3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  V3 operator*(double s) const { return {x * s, y * s, z * s}; }
  V3 operator*(const V3& o) const { return {x * o.x, y * o.y, z * o.z}; }
  V3 operator/(const V3& o) const { return {x / o.x, y / o.y, z / o.z}; }
  Vec3 arr() const { return {x, y, z}; }
};

double dot(const V3& a, const V3& b) { return a.x * b.x + a.y * b.y + a.z * b.z; }
double length(const V3& a) { return std::sqrt(dot(a, a)); }
V3 normalize(const V3& a) { return a * (1.0 / length(a)); }

struct Hit {
  double t = kInf;
  V3 normal;
};

Hit intersect_box(const V3& o, const V3& d, const V3& lo, const V3& hi) {
  double tmin = -kInf, tmax = kInf;
  int axis = -1;
  double sign = 0.0;
  const double os[3] = {o.x, o.y, o.z};
  const double ds[3] = {d.x, d.y, d.z};
  const double los[3] = {lo.x, lo.y, lo.z};
  const double his[3] = {hi.x, hi.y, hi.z};
  for (int a = 0; a < 3; ++a) {
    if (std::abs(ds[a]) < 1e-15) {
      if (os[a] < los[a] || os[a] > his[a]) return {};
      continue;
    }
    double t0 = (los[a] - os[a]) / ds[a];
    double t1 = (his[a] - os[a]) / ds[a];
    double s = -1.0;
    if (t0 > t1) {
      std::swap(t0, t1);
      s = 1.0;
    }
    if (t0 > tmin) {
      tmin = t0;
      axis = a;
      sign = s;
    }
    tmax = std::min(tmax, t1);
  }
  if (tmax < tmin || tmin <= kEps || axis < 0) return {};
  Hit h;
  h.t = tmin;
  double n[3] = {0, 0, 0};
  n[axis] = sign;
  h.normal = {n[0], n[1], n[2]};
  return h;
}

Hit intersect_ellipsoid(const V3& o, const V3& d, const V3& semi) {
  const V3 os = o / semi;
  const V3 ds = d / semi;
  const double a = dot(ds, ds);
  const double b = dot(os, ds);
  const double c = dot(os, os) - 1.0;
  const double disc = b * b - a * c;
  if (disc < 0.0) return {};
  const double t = (-b - std::sqrt(disc)) / a;
  if (t <= kEps) return {};
  const V3 p = o + d * t;
  Hit h;
  h.t = t;
  h.normal = normalize(p / (semi * semi));
  return h;
}

Hit intersect_sphere(const V3& o, const V3& d, const V3& c, double r) {
  const V3 oc = o - c;
  const double b = dot(oc, d);
  const double cc = dot(oc, oc) - r * r;
  const double disc = b * b - cc;
  if (disc < 0.0) return {};
  const double t = -b - std::sqrt(disc);
  if (t <= kEps) return {};
  Hit h;
  h.t = t;
  h.normal = normalize(o + d * t - c);
  return h;
}

// Capsule between pa and pb with radius r (ray direction must be unit).
Hit intersect_capsule(const V3& o, const V3& d, const V3& pa, const V3& pb, double r) {
  const V3 ba = pb - pa;
  const V3 oa = o - pa;
  const double baba = dot(ba, ba);
  const double bard = dot(ba, d);
  const double baoa = dot(ba, oa);
  const double rdoa = dot(d, oa);
  const double oaoa = dot(oa, oa);
  const double a = baba - bard * bard;
  double b = baba * rdoa - baoa * bard;
  double c = baba * oaoa - baoa * baoa - r * r * baba;
  double h = b * b - a * c;
  double t_hit = kInf;
  if (h >= 0.0 && a > 1e-12) {
    const double t = (-b - std::sqrt(h)) / a;
    const double y = baoa + t * bard;
    if (y > 0.0 && y < baba && t > kEps) t_hit = t;
  }
  if (t_hit == kInf) {
    for (const V3& cap : {pa, pb}) {
      const Hit s = intersect_sphere(o, d, cap, r);
      t_hit = std::min(t_hit, s.t);
    }
  }
  if (t_hit == kInf) return {};
  const V3 p = o + d * t_hit;
  const double k = std::clamp(dot(p - pa, ba) / baba, 0.0, 1.0);
  Hit hit;
  hit.t = t_hit;
  hit.normal = normalize(p - (pa + ba * k));
  return hit;
}

Hit intersect_disk(const V3& o, const V3& d, const V3& c, const V3& n, double r) {
  const double denom = dot(d, n);
  if (std::abs(denom) < 1e-12) return {};
  const double t = dot(c - o, n) / denom;
  if (t <= kEps) return {};
  const V3 p = o + d * t;
  if (length(p - c) > r) return {};
  Hit h;
  h.t = t;
  h.normal = denom < 0 ? n : n * -1.0;
  return h;
}

Hit intersect_object(const SceneSpec& spec, const V3& o, const V3& d) {
  const V3 s(spec.scale);
  const V3 half = s * 0.5;
  switch (spec.kind) {
    case ObjectKind::box:
      return intersect_box(o, d, half * -1.0, half);
    case ObjectKind::ellipsoid:
      return intersect_ellipsoid(o, d, half);
    case ObjectKind::capsule: {
      const double r = 0.5 * std::min(s.y, s.z);
      const double len = std::max(0.0, half.x - r);
      return intersect_capsule(o, d, {-len, 0, 0}, {len, 0, 0}, r);
    }
    case ObjectKind::truck: {
      // Cargo box over the rear 70% of the length, lower cab in front.
      const double split = -half.x + 0.7 * s.x;
      const Hit cargo = intersect_box(o, d, half * -1.0, {split, half.y, half.z});
      const Hit cab = intersect_box(o, d, {split, -half.y, -half.z},
                                    {half.x, half.y, -half.z + 0.7 * s.z});
      return cargo.t <= cab.t ? cargo : cab;
    }
  }
  return {};
}

Hit intersect_occluder(const Occluder& occ, const V3& o, const V3& d) {
  if (occ.shape == OccluderShape::sphere) return intersect_sphere(o, d, V3(occ.center), occ.radius);
  return intersect_disk(o, d, V3(occ.center), normalize(V3(occ.normal)), occ.radius);
}

struct Texture {
  V3 base;
  double frequency = 2.0;
};

Texture make_texture(std::uint64_t seed) {
  Rng rng(derive_seed(seed, 0x7e47));
  Texture t;
  t.base = {rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9), rng.uniform(0.15, 0.9)};
  t.frequency = rng.uniform(1.5, 4.0);
  return t;
}

V3 object_albedo(const SceneSpec& spec, const Texture& tex, const V3& p) {
  const V3 s(spec.scale);
  const auto stripe = static_cast<long long>(std::floor(tex.frequency * (p.x + 0.5 * s.x)));
  V3 a = (stripe % 2 == 0) ? tex.base : tex.base * 0.55;
  if (p.z > 0.15 * s.z) a = a * 0.8;
  return {std::clamp(a.x, 0.05, 0.95), std::clamp(a.y, 0.05, 0.95), std::clamp(a.z, 0.05, 0.95)};
}

const V3 kLight = normalize(V3(0.3, 0.5, 0.8));
const V3 kSky{0.55, 0.7, 0.9};
const V3 kGround{0.42, 0.42, 0.4};

double shade(const V3& n) { return 0.35 + 0.65 * std::max(0.0, dot(n, kLight)); }

enum class PixelClass : std::uint8_t { object, skyroad, occluder };

}  // namespace

const char* to_string(ObjectKind kind) {
  switch (kind) {
    case ObjectKind::box: return "box";
    case ObjectKind::capsule: return "capsule";
    case ObjectKind::truck: return "truck";
    case ObjectKind::ellipsoid: return "ellipsoid";
  }
  return "box";
}

const char* to_string(OccluderShape shape) {
  return shape == OccluderShape::disk ? "disk" : "sphere";
}

nlohmann::json Occluder::to_json() const {
  return {{"shape", synthetic::to_string(shape)},
          {"center", center},
          {"radius", radius},
          {"normal", normal}};
}

double SceneSpec::circumradius() const {
  return 0.5 * std::sqrt(scale[0] * scale[0] + scale[1] * scale[1] + scale[2] * scale[2]);
}

void SceneSpec::validate() const {
  for (double s : scale) {
    if (!(s >= 0.5 && s <= 6.0)) {
      throw std::invalid_argument("scene scale components must lie in [0.5, 6.0]");
    }
  }
  if (!(brightness >= 0.3 && brightness <= 1.0)) {
    throw std::invalid_argument("scene brightness must lie in [0.3, 1.0]");
  }
  if (orbit.radius_min <= 1.0 || orbit.radius_max < orbit.radius_min) {
    throw std::invalid_argument("orbit radius range must lie outside the circumsphere");
  }
  for (const auto& occ : occluders) {
    if (!(occ.radius > 0.0)) throw std::invalid_argument("occluder radius must be positive");
  }
}

bool SceneSpec::contains(const View& view) const {
  const double rc = circumradius();
  const double tol = 1e-9;
  return view.azimuth >= orbit.azimuth_min - tol && view.azimuth <= orbit.azimuth_max + tol &&
         view.elevation >= orbit.elevation_min - tol &&
         view.elevation <= orbit.elevation_max + tol &&
         view.radius >= orbit.radius_min * rc - tol && view.radius <= orbit.radius_max * rc + tol;
}

double fitting_focal(const SceneSpec& spec, double distance, std::int64_t resolution) {
  const double rc = spec.circumradius();
  if (!(distance > rc)) throw std::invalid_argument("camera inside the object circumsphere");
  const double tan_half = rc / std::sqrt(distance * distance - rc * rc);
  return 0.45 * static_cast<double>(resolution) / tan_half;
}

Camera view_camera(const SceneSpec& spec, const View& view, std::int64_t resolution) {
  if (!(view.radius > 0.0)) {
    throw std::invalid_argument("degenerate camera: orbit radius must be positive");
  }
  return Camera::orbit(view.azimuth, view.elevation, view.radius,
                       fitting_focal(spec, view.radius, resolution), resolution);
}

ObjectSample render_with_camera(const SceneSpec& spec, const Camera& camera,
                                const RenderOptions& options, std::uint64_t seed) {
  spec.validate();
  camera.validate();
  const auto h = camera.height;
  const auto w = camera.width;
  auto [origins, dirs] = camera.rays(torch::kFloat64);
  auto o_acc = origins.accessor<double, 2>();
  auto d_acc = dirs.accessor<double, 2>();

  auto image = torch::zeros({h, w, 3}, torch::kFloat32);
  auto object_mask = torch::zeros({h, w}, torch::kBool);
  auto skyroad_mask = torch::zeros({h, w}, torch::kBool);
  auto depth = torch::zeros({h, w}, torch::kFloat32);
  const auto sem_c = options.semantic ? options.semantic_channels : 0;
  auto semantic = torch::zeros({h, w, std::max<std::int64_t>(sem_c, 1)}, torch::kFloat32);
  auto img = image.accessor<float, 3>();
  auto om = object_mask.accessor<bool, 2>();
  auto sm = skyroad_mask.accessor<bool, 2>();
  auto dp = depth.accessor<float, 2>();
  auto se = semantic.accessor<float, 3>();

  const Texture tex = make_texture(spec.texture_seed);
  const V3 s(spec.scale);
  const double ground_z = -0.5 * s.z;
  Rng noise(derive_seed(seed, 0x5e45));

  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      const auto i = y * w + x;
      const V3 o(o_acc[i][0], o_acc[i][1], o_acc[i][2]);
      const V3 d(d_acc[i][0], d_acc[i][1], d_acc[i][2]);

      Hit best;
      PixelClass cls = PixelClass::skyroad;
      const Hit obj = intersect_object(spec, o, d);
      if (obj.t < best.t) {
        best = obj;
        cls = PixelClass::object;
      }
      for (const auto& occ : spec.occluders) {
        const Hit oh = intersect_occluder(occ, o, d);
        if (oh.t < best.t) {
          best = oh;
          cls = PixelClass::occluder;
        }
      }
      double ground_t = kInf;
      if (d.z < -1e-12) {
        const double t = (ground_z - o.z) / d.z;
        if (t > kEps) ground_t = t;
      }
      if (ground_t < best.t) {
        best.t = ground_t;
        best.normal = {0, 0, 1};
        cls = PixelClass::skyroad;
      }

      V3 color;
      switch (cls) {
        case PixelClass::object: {
          const V3 p = o + d * best.t;
          color = object_albedo(spec, tex, p) * (spec.brightness * shade(best.normal));
          om[y][x] = true;
          dp[y][x] = static_cast<float>(best.t);
          const V3 u = (p + s * 0.5) / s;
          const double uc[3] = {u.x, u.y, u.z};
          for (std::int64_t c = 0; c < sem_c; ++c) {
            se[y][x][c] = static_cast<float>(
                std::sin(std::numbers::pi * static_cast<double>(c / 3 + 1) * uc[c % 3]));
          }
          break;
        }
        case PixelClass::occluder:
          color = {kOccluderColor[0], kOccluderColor[1], kOccluderColor[2]};
          break;
        case PixelClass::skyroad:
          sm[y][x] = true;
          color = best.t < kInf ? kGround * (spec.brightness * shade(best.normal))
                                : kSky * spec.brightness;
          break;
      }
      if (options.sensor_noise > 0.0 && cls != PixelClass::occluder) {
        for (double* ch : {&color.x, &color.y, &color.z}) {
          const double u1 = std::max(noise.uniform(), 1e-300);
          const double u2 = noise.uniform();
          *ch += options.sensor_noise * std::sqrt(-2.0 * std::log(u1)) *
                 std::cos(2.0 * std::numbers::pi * u2);
        }
      }
      img[y][x][0] = static_cast<float>(std::clamp(color.x, 0.0, 1.0));
      img[y][x][1] = static_cast<float>(std::clamp(color.y, 0.0, 1.0));
      img[y][x][2] = static_cast<float>(std::clamp(color.z, 0.0, 1.0));
    }
  }

  ObjectSample out;
  out.image = image;
  out.object_mask = object_mask;
  out.skyroad_mask = skyroad_mask;
  out.camera = camera;
  out.scale = spec.scale;
  out.depth = depth;
  out.depth_valid = object_mask.clone();
  if (options.semantic) out.semantic = semantic;
  out.class_label = spec.class_label;
  out.time_of_day = spec.time_of_day;
  nlohmann::json occ = nlohmann::json::array();
  for (const auto& o : spec.occluders) occ.push_back(o.to_json());
  out.extra = {{"kind", to_string(spec.kind)},
               {"texture_seed", spec.texture_seed},
               {"brightness", spec.brightness},
               {"occluders", occ}};
  return out;
}

ObjectSample render_sample(const SceneSpec& spec, const View& view, const RenderOptions& options,
                           std::uint64_t seed) {
  if (!(view.radius > 0.0)) {
    throw std::invalid_argument("degenerate camera: orbit radius must be positive");
  }
  if (!spec.contains(view)) {
    throw std::invalid_argument("view lies outside the scene's camera orbit ranges");
  }
  auto sample = render_with_camera(spec, view_camera(spec, view, options.resolution), options, seed);
  sample.extra["view"] = {{"azimuth", view.azimuth},
                          {"elevation", view.elevation},
                          {"radius", view.radius}};
  return sample;
}

GeneratorOptions generator_options_for(const PipelineConfig& config) {
  GeneratorOptions g;
  g.render.resolution = config.image_resolution;
  g.render.semantic = config.semantic_field;
  g.render.semantic_channels = config.semantic_channels;
  return g;
}

std::vector<std::int64_t> stratified_labels(std::size_t n, const std::array<double, 4>& mixture,
                                            std::uint64_t seed) {
  const double total = std::accumulate(mixture.begin(), mixture.end(), 0.0);
  if (!(total > 0.0)) throw std::invalid_argument("class mixture must have positive mass");
  std::array<std::size_t, 4> counts{};
  std::array<double, 4> remainder{};
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < 4; ++k) {
    const double exact = static_cast<double>(n) * mixture[k] / total;
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    remainder[k] = exact - std::floor(exact);
    assigned += counts[k];
  }
  std::array<std::size_t, 4> order{0, 1, 2, 3};
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
  for (std::size_t i = 0; assigned < n; ++i, ++assigned) ++counts[order[i % 4]];

  std::vector<std::int64_t> labels;
  labels.reserve(n);
  for (std::size_t k = 0; k < 4; ++k) labels.insert(labels.end(), counts[k], static_cast<std::int64_t>(k));
  Rng rng(seed);
  for (std::size_t i = labels.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(i)));
    std::swap(labels[i - 1], labels[j]);
  }
  return labels;
}

SceneSpec draw_scene(std::int64_t class_label, Rng& rng, const GeneratorOptions& options) {
  (void)options;
  SceneSpec spec;
  spec.class_label = class_label;
  spec.texture_seed = rng.next_u64();
  switch (class_label) {
    case 0:  // car
      if (rng.bernoulli(0.5)) {
        spec.kind = ObjectKind::box;
        spec.scale = {rng.uniform(3.8, 5.0), rng.uniform(1.7, 2.0), rng.uniform(1.3, 1.7)};
      } else {
        spec.kind = ObjectKind::capsule;
        const double r = rng.uniform(0.75, 0.95);
        spec.scale = {rng.uniform(3.8, 5.0), 2.0 * r, 2.0 * r};
      }
      break;
    case 1:  // truck
      spec.kind = ObjectKind::truck;
      spec.scale = {rng.uniform(5.0, 6.0), rng.uniform(2.2, 2.6), rng.uniform(2.4, 3.2)};
      break;
    case 2:  // bus
      spec.kind = ObjectKind::box;
      spec.scale = {rng.uniform(5.5, 6.0), rng.uniform(2.4, 2.6), rng.uniform(2.8, 3.2)};
      break;
    default:  // other
      spec.kind = ObjectKind::ellipsoid;
      spec.scale = {rng.uniform(0.6, 2.0), rng.uniform(0.5, 1.5), rng.uniform(0.8, 1.8)};
      break;
  }
  spec.time_of_day = rng.bernoulli(options.night_probability) ? 1 : 0;
  spec.brightness = spec.time_of_day == 1 ? rng.uniform(0.3, 0.5) : rng.uniform(0.7, 1.0);
  return spec;
}

View draw_view(const SceneSpec& spec, Rng& rng) {
  const double rc = spec.circumradius();
  View v;
  v.azimuth = rng.uniform(spec.orbit.azimuth_min, spec.orbit.azimuth_max);
  v.elevation = rng.uniform(spec.orbit.elevation_min, spec.orbit.elevation_max);
  v.radius = rng.uniform(spec.orbit.radius_min, spec.orbit.radius_max) * rc;
  return v;
}

void place_occluders(SceneSpec& spec, const View& view, Rng& rng,
                     const GeneratorOptions& options) {
  RenderOptions probe = options.render;
  probe.semantic = false;
  const Camera cam = view_camera(spec, view, probe.resolution);
  SceneSpec clear = spec;
  clear.occluders.clear();
  const auto full = render_with_camera(clear, cam, probe).object_mask.sum().item<std::int64_t>();
  const V3 c(cam.position);
  const V3 s(spec.scale);
  const double rc = spec.circumradius();
  for (int attempt = 0; attempt < 64; ++attempt) {
    const double shrink = attempt < 32 ? 1.0 : 0.5;
    const V3 target{rng.uniform(-0.35, 0.35) * s.x, rng.uniform(-0.35, 0.35) * s.y,
                    rng.uniform(-0.35, 0.35) * s.z};
    const double f = rng.uniform(0.3, 0.55);
    Occluder occ;
    occ.shape = rng.bernoulli(0.5) ? OccluderShape::disk : OccluderShape::sphere;
    occ.center = (c + (target - c) * f).arr();
    occ.radius = shrink * rng.uniform(0.25, 0.6) * rc * f;
    occ.normal = normalize(c - target).arr();
    SceneSpec trial = spec;
    trial.occluders = {occ};
    const auto visible =
        render_with_camera(trial, cam, probe).object_mask.sum().item<std::int64_t>();
    const double fraction = full > 0 ? static_cast<double>(visible) / static_cast<double>(full) : 0.0;
    if (visible < full && fraction >= options.min_visible_fraction) {
      spec.occluders = trial.occluders;
      return;
    }
  }
  throw std::runtime_error("could not place an occluder satisfying the visibility rule");
}

std::vector<ObjectSample> generate_samples(std::size_t n, std::uint64_t seed,
                                           const GeneratorOptions& options) {
  const auto labels = stratified_labels(n, options.class_mixture, derive_seed(seed, 1));
  std::vector<ObjectSample> out;
  out.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, 2, i));
    SceneSpec spec = draw_scene(labels[i], rng, options);
    const View view = draw_view(spec, rng);
    if (rng.bernoulli(options.occlusion_probability)) place_occluders(spec, view, rng, options);
    auto sample = render_sample(spec, view, options.render, derive_seed(seed, 3, i));

    SceneSpec clear = spec;
    clear.occluders.clear();
    RenderOptions probe = options.render;
    probe.semantic = false;
    const auto silhouette =
        render_with_camera(clear, sample.camera, probe).object_mask.sum().item<std::int64_t>();
    const auto visible = sample.object_mask.sum().item<std::int64_t>();
    sample.extra["silhouette_pixels"] = silhouette;
    sample.extra["visible_fraction"] =
        silhouette > 0 ? static_cast<double>(visible) / static_cast<double>(silhouette) : 0.0;
    sample.id = sample_folder_name(i);
    out.push_back(std::move(sample));
  }
  return out;
}

void generate_dataset(std::size_t n, const PipelineConfig& config, std::uint64_t seed,
                      const std::filesystem::path& out_dir, const GeneratorOptions& options) {
  if (n < 1) throw std::invalid_argument("generate_dataset needs n >= 1");
  const auto samples = generate_samples(n, seed, options);
  nlohmann::json meta{{"generator", "synthetic"},
                      {"seed", seed},
                      {"preset", config.preset},
                      {"resolution", options.render.resolution},
                      {"class_mixture", options.class_mixture},
                      {"class_names", {"car", "truck", "bus", "other"}},
                      {"occlusion_probability", options.occlusion_probability},
                      {"min_visible_fraction", options.min_visible_fraction}};
  save_dataset(samples, out_dir, meta);
}

void generate_dataset(std::size_t n, const PipelineConfig& config, std::uint64_t seed,
                      const std::filesystem::path& out_dir) {
  generate_dataset(n, config, seed, out_dir, generator_options_for(config));
}

}  // namespace gina::synthetic
