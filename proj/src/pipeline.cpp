#include "gina/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "gina/checkpoint.hpp"
#include "gina/image_io.hpp"
#include "gina/rng.hpp"
#include "gina/synthetic.hpp"

namespace gina {

namespace {

nlohmann::json read_json(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw std::runtime_error("cannot open " + p.string());
  return nlohmann::json::parse(in);
}

void write_json(const fs::path& p, const nlohmann::json& j) {
  std::ofstream out(p);
  if (!out) throw std::runtime_error("cannot write " + p.string());
  out << j.dump(2) << "\n";
}

void emit(const Logger& log, nlohmann::json j) {
  if (log) log(j);
}

nlohmann::json vec3_json(const Vec3& v) { return {v[0], v[1], v[2]}; }

Vec3 vec3_from(const nlohmann::json& j) { return {j.at(0).get<double>(), j.at(1).get<double>(), j.at(2).get<double>()}; }

ConditionBatch stack_conditions(const std::vector<ConditionBatch>& parts) {
  ConditionBatch out;
  if (parts.empty()) return out;
  std::vector<torch::Tensor> cls, cont;
  for (const auto& p : parts) {
    if (p.classes.defined()) cls.push_back(p.classes);
    if (p.continuous.defined()) cont.push_back(p.continuous);
  }
  if (!cls.empty()) out.classes = torch::cat(cls);
  if (!cont.empty()) out.continuous = torch::cat(cont);
  return out;
}

Vec3 mean_scale(const std::vector<ObjectSample>& samples) {
  Vec3 m{0, 0, 0};
  for (const auto& s : samples) {
    for (int a = 0; a < 3; ++a) m[a] += s.scale[a] / static_cast<double>(samples.size());
  }
  return m;
}

std::vector<ObjectSample> load_samples(const fs::path& data, const Logger& log) {
  auto ds = load_dataset(data);
  for (const auto& r : ds.rejected) emit(log, {{"event", "sample_rejected"}, {"id", r.id}, {"reason", r.reason}});
  if (ds.samples.empty()) throw std::runtime_error("dataset " + data.string() + " has no usable samples");
  return std::move(ds.samples);
}

RenderOutput render_asset(Stage1Model& model, const torch::Tensor& planes, const Vec3& scale,
                          double azimuth, double elevation) {
  const auto r = model->config.render_resolution;
  return model->render_planes(planes, asset_camera(scale, azimuth, elevation, r), scale, r,
                              RenderOptions::from_config(model->config));
}

torch::Tensor on_white(const RenderOutput& out) {
  return (out.rgb + (1.0 - out.alpha).unsqueeze(-1)).clamp(0.0, 1.0);
}

torch::Tensor decode_planes(Stage1Model& model, const Asset& asset) {
  return model->decode_tokens(asset.tokens.unsqueeze(0))[0];
}

}  // namespace

void RunLayout::create() const {
  for (const auto& d : {ckpt(), samples(), meshes(), reports()}) fs::create_directories(d);
}

void record_run(const fs::path& dir, const std::string& command, const nlohmann::json& args,
                const PipelineConfig& config) {
  fs::create_directories(dir);
  const auto path = dir / "run.json";
  nlohmann::json run = fs::exists(path) ? read_json(path) : nlohmann::json::object();
  run["config"] = config;
  run["seed"] = config.seed;
  if (!run.contains("commands") || !run["commands"].is_object()) run["commands"] = nlohmann::json::object();
  run["commands"][command] = args;
  write_json(path, run);
}

Stage1Trainer train_stage1(const PipelineConfig& config, const Stage1Job& job, const Logger& log) {
  auto samples = load_samples(job.data, log);
  Stage1Trainer trainer = job.resume ? Stage1Trainer::load(*job.resume, config) : Stage1Trainer(config);
  emit(log, {{"event", "stage1_start"}, {"samples", samples.size()}, {"steps", job.steps}, {"from_step", trainer.step}});
  trainer.fit(samples, job.steps, [&](std::int64_t step, const LossReport& r) {
    if (job.log_every > 0 && (step % job.log_every == 0 || step == trainer.step)) {
      auto j = r.to_json();
      j["event"] = "stage1_step";
      j["step"] = step;
      emit(log, j);
    }
  });
  fs::create_directories(job.out.parent_path().empty() ? fs::path(".") : job.out.parent_path());
  trainer.save(job.out);
  emit(log, {{"event", "checkpoint"}, {"path", job.out.string()}, {"step", trainer.step}});
  return trainer;
}

torch::Tensor encode_samples(Stage1Model& model, const std::vector<ObjectSample>& samples, std::int64_t batch) {
  torch::NoGradGuard guard;
  model->eval();
  std::vector<torch::Tensor> out;
  for (std::size_t i = 0; i < samples.size(); i += static_cast<std::size_t>(batch)) {
    std::vector<torch::Tensor> imgs;
    for (std::size_t j = i; j < std::min(samples.size(), i + static_cast<std::size_t>(batch)); ++j) {
      imgs.push_back(model->encoder_input(samples[j]));
    }
    out.push_back(model->codebook->quantize(model->encode(torch::stack(imgs))).indices);
  }
  return torch::cat(out);
}

Stage2Trainer train_stage2(const PipelineConfig& config, const Stage2Job& job, const Logger& log) {
  auto samples = load_samples(job.data, log);
  auto stage1 = load_stage1_model(job.stage1);
  check_config_compatible(stage1->config, config);
  const auto cond = Stage2Condition::from_name(job.condition);
  auto trainer = job.resume ? Stage2Trainer::load(*job.resume)
                            : Stage2Trainer(config, Stage2Options::from_config(config, cond));
  if (trainer.options.condition.name != cond.name) {
    throw std::runtime_error("resumed stage-2 checkpoint is conditioned on '" + trainer.options.condition.name +
                             "', not '" + cond.name + "'");
  }
  auto seqs = flatten_tokens(encode_samples(stage1, samples));
  std::vector<ConditionBatch> parts;
  for (const auto& s : samples) parts.push_back(encode_condition(condition_for_sample(s, cond, config), cond));
  auto cb = stack_conditions(parts);
  const auto ms = mean_scale(samples);
  trainer.metadata = {{"mean_scale", vec3_json(ms)}, {"samples", samples.size()}, {"stage1", job.stage1.string()}};
  emit(log, {{"event", "stage2_start"}, {"sequences", seqs.size(0)}, {"length", seqs.size(1)}, {"condition", cond.name}});
  trainer.fit(seqs, cb, job.steps, [&](std::int64_t step, double loss) {
    if (job.log_every > 0 && step % job.log_every == 0) emit(log, {{"event", "stage2_step"}, {"step", step}, {"loss", loss}});
  });
  fs::create_directories(job.out.parent_path().empty() ? fs::path(".") : job.out.parent_path());
  trainer.save(job.out);
  emit(log, {{"event", "checkpoint"}, {"path", job.out.string()}, {"step", trainer.step}});
  return trainer;
}

nlohmann::json Asset::to_json() const {
  auto t = tokens.to(torch::kInt64).contiguous();
  std::vector<std::int64_t> flat(t.data_ptr<std::int64_t>(), t.data_ptr<std::int64_t>() + t.numel());
  return {{"latent_grid", tokens.size(1)}, {"tokens", flat}, {"scale", vec3_json(scale)}, {"info", info}};
}

Asset Asset::from_json(const nlohmann::json& j) {
  Asset a;
  const auto n = j.at("latent_grid").get<std::int64_t>();
  auto flat = j.at("tokens").get<std::vector<std::int64_t>>();
  if (static_cast<std::int64_t>(flat.size()) != 3 * n * n) {
    throw std::runtime_error("asset has " + std::to_string(flat.size()) + " tokens, expected " + std::to_string(3 * n * n));
  }
  a.tokens = torch::tensor(flat, torch::kInt64).view({3, n, n});
  a.scale = vec3_from(j.at("scale"));
  a.info = j.value("info", nlohmann::json::object());
  return a;
}

Asset read_asset(const fs::path& path) {
  return Asset::from_json(read_json(fs::is_directory(path) ? path / "meta.json" : path));
}

Camera asset_camera(const Vec3& scale, double azimuth, double elevation, std::int64_t resolution) {
  synthetic::SceneSpec spec;
  spec.scale = scale;
  const double radius = 2.5 * spec.circumradius();
  return Camera::orbit(azimuth, elevation, radius, synthetic::fitting_focal(spec, radius, resolution), resolution);
}

void write_asset(Stage1Model& model, const Asset& asset, const fs::path& folder) {
  torch::NoGradGuard guard;
  fs::create_directories(folder);
  auto planes = decode_planes(model, asset);
  std::vector<torch::Tensor> strip;
  for (int k = 0; k < kTurntableViews; ++k) {
    const double az = std::numbers::pi / 4 + 2.0 * std::numbers::pi * k / kTurntableViews;
    auto out = render_asset(model, planes, asset.scale, az, kGalleryElevation);
    if (k == 0) {
      io::write_rgb_png(folder / "image.png", on_white(out));
      io::write_gray_png(folder / "alpha.png", out.alpha.clamp(0.0, 1.0));
    }
    strip.push_back(on_white(out));
  }
  io::write_rgb_png(folder / "turntable.png", torch::cat(strip, 1));
  write_json(folder / "meta.json", asset.to_json());
}

std::vector<Asset> sample_assets(const SampleJob& job, const Logger& log) {
  if (job.n < 1) throw std::invalid_argument("sample needs n >= 1");
  auto stage1 = load_stage1_model(job.stage1);
  auto [prior, config] = load_stage2_model(job.stage2);
  check_config_compatible(stage1->config, config);
  const auto meta = stage2_metadata(job.stage2);
  const Vec3 scale = job.scale ? *job.scale : (meta.contains("mean_scale") ? vec3_from(meta["mean_scale"]) : Vec3{4.5, 1.9, 1.5});
  const auto& cond = prior->options.condition;
  ConditionBatch cb;
  nlohmann::json cond_info{{"name", cond.name}};
  if (cond.name == "class" || cond.name == "time") {
    if (!job.class_value) throw std::invalid_argument("prior is conditioned on '" + cond.name + "'; pass a class value");
    cb = encode_condition(ConditionSpec::discrete(*job.class_value, cond.num_classes), cond).repeat(job.n);
    cond_info["value"] = *job.class_value;
  } else if (cond.name == "scale") {
    cb = encode_condition(ConditionSpec::continuous(scale_encoding(scale, config.world_extent)), cond).repeat(job.n);
    cond_info["value"] = vec3_json(scale);
  } else if (cond.kind != ConditionKind::none) {
    throw std::invalid_argument("prior conditioned on '" + cond.name + "' needs a source image; use vary");
  }
  auto seqs = maskgit_sample(prior, job.n, cb, job.policy, job.seed);
  auto tokens = unflatten_tokens(seqs, config.latent_grid, config.codebook_size);
  std::vector<Asset> out;
  for (std::int64_t i = 0; i < job.n; ++i) {
    Asset a;
    a.tokens = tokens[i].clone();
    a.scale = scale;
    a.info = {{"source", "prior"}, {"seed", job.seed}, {"index", i}, {"condition", cond_info}};
    write_asset(stage1, a, job.out / sample_folder_name(static_cast<std::size_t>(i)));
    emit(log, {{"event", "sample"}, {"index", i}, {"path", (job.out / sample_folder_name(static_cast<std::size_t>(i))).string()}});
    out.push_back(std::move(a));
  }
  return out;
}

nlohmann::json reconstruct(const ReconstructJob& job, const Logger& log) {
  auto model = load_stage1_model(job.stage1);
  auto samples = load_samples(job.data, log);
  torch::NoGradGuard guard;
  nlohmann::json report = nlohmann::json::array();
  for (auto idx : job.indices) {
    if (idx < 0 || idx >= static_cast<std::int64_t>(samples.size())) {
      throw std::invalid_argument("sample index " + std::to_string(idx) + " out of range");
    }
    const auto& s = samples[static_cast<std::size_t>(idx)];
    auto terms = stage1_forward(model, {s}, std::nullopt, nullptr, nullptr);
    const double psnr = masked_psnr(terms.x_hat, terms.target, terms.mask);
    Asset a;
    a.tokens = terms.tokens[0].clone();
    a.scale = s.scale;
    a.info = {{"source", "reconstruction"}, {"sample", s.id}, {"psnr", psnr}};
    const auto folder = job.out / sample_folder_name(static_cast<std::size_t>(idx));
    write_asset(model, a, folder);
    auto mf = terms.mask[0].unsqueeze(-1);
    io::write_rgb_png(folder / "input_view.png", terms.x_hat[0].clamp(0.0, 1.0));
    io::write_rgb_png(folder / "target.png", (terms.target[0] * mf + (1.0 - mf)).clamp(0.0, 1.0));
    report.push_back({{"index", idx}, {"id", s.id}, {"psnr", psnr}});
    emit(log, {{"event", "reconstruct"}, {"index", idx}, {"psnr", psnr}});
  }
  return report;
}

std::vector<Asset> vary(const VaryJob& job, const Logger& log) {
  if (job.mask_ratio < 0.0 || job.mask_ratio > 1.0) throw std::invalid_argument("mask_ratio must lie in [0, 1]");
  auto stage1 = load_stage1_model(job.stage1);
  auto [prior, config] = load_stage2_model(job.stage2);
  check_config_compatible(stage1->config, config);
  auto samples = load_samples(job.data, log);
  if (job.index < 0 || job.index >= static_cast<std::int64_t>(samples.size())) {
    throw std::invalid_argument("sample index " + std::to_string(job.index) + " out of range");
  }
  const auto& src = samples[static_cast<std::size_t>(job.index)];
  auto spec = ConditionSpec::image(std::make_shared<ObjectSample>(src), job.mask_ratio);
  spec.validate();
  const auto& cond = prior->options.condition;
  auto cb = encode_condition(condition_for_sample(src, cond, config), cond).repeat(job.n);
  auto source = flatten_tokens(encode_samples(stage1, {src}))[0];
  std::vector<torch::Tensor> starts;
  for (std::int64_t i = 0; i < job.n; ++i) {
    if (job.mask_ratio == 0.0) {
      starts.push_back(source.clone());
    } else {
      starts.push_back(mask_tokens(source, job.mask_ratio, derive_seed(job.seed, 31, i), prior->options.mask_id()).first);
    }
  }
  auto seqs = maskgit_sample(prior, job.n, cb, job.policy, job.seed, torch::stack(starts));
  auto tokens = unflatten_tokens(seqs, config.latent_grid, config.codebook_size);
  std::vector<Asset> out;
  for (std::int64_t i = 0; i < job.n; ++i) {
    Asset a;
    a.tokens = tokens[i].clone();
    a.scale = src.scale;
    a.info = {{"source", "variation"}, {"sample", src.id}, {"mask_ratio", job.mask_ratio}, {"seed", job.seed}, {"index", i}};
    write_asset(stage1, a, job.out / sample_folder_name(static_cast<std::size_t>(i)));
    emit(log, {{"event", "variation"}, {"index", i}});
    out.push_back(std::move(a));
  }
  return out;
}

Mesh asset_mesh(Stage1Model& model, const Asset& asset, std::int64_t grid_res, double threshold, bool with_color) {
  torch::NoGradGuard guard;
  auto planes = decode_planes(model, asset);
  const auto box = FieldBox::for_object(model->config, asset.scale);
  return extract_mesh(model->field_fn(planes, asset.scale), box.half, grid_res, threshold, with_color);
}

std::vector<fs::path> asset_folders(const fs::path& samples) {
  std::vector<fs::path> out;
  if (!fs::is_directory(samples)) return out;
  for (const auto& e : fs::directory_iterator(samples)) {
    if (e.is_directory() && fs::exists(e.path() / "meta.json")) out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<fs::path> mesh_samples(const fs::path& stage1, const fs::path& samples, const fs::path& out,
                                   std::int64_t grid_res, double threshold, MeshFormat format, const Logger& log) {
  auto folders = asset_folders(samples);
  if (folders.empty()) throw std::runtime_error("no assets under " + samples.string());
  auto model = load_stage1_model(stage1);
  fs::create_directories(out);
  std::vector<fs::path> paths;
  for (const auto& f : folders) {
    auto mesh = asset_mesh(model, read_asset(f), grid_res, threshold);
    auto path = out / (f.filename().string() + (format == MeshFormat::obj ? ".obj" : ".ply"));
    export_mesh(mesh, path, format);
    emit(log, {{"event", "mesh"}, {"path", path.string()}, {"faces", mesh.faces.size()}, {"empty", mesh.empty()}});
    paths.push_back(path);
  }
  return paths;
}

nlohmann::json evaluate_run(const PipelineConfig& config, const EvalJob& job, const Logger& log) {
  auto backend = make_embedding_backend(job.backend);
  EvalInputs in;
  auto validation = load_samples(job.validation, log);

  fs::path samples_dir = job.generated;
  std::optional<fs::path> stage1 = job.stage1;
  fs::path meshes_dir;
  if (fs::exists(job.generated / "manifest.json")) {
    // A dataset standing in for generated output.
    auto gen = load_samples(job.generated, log);
    const auto r = gen.front().height();
    in.generated = validation_images(gen, r, job.min_visible);
    in.missing = {"meshes", "consistency"};
  } else {
    if (fs::is_directory(job.generated / "samples")) {
      RunLayout run(job.generated);
      samples_dir = run.samples();
      meshes_dir = run.meshes();
      if (!stage1 && fs::exists(run.stage1_ckpt())) stage1 = run.stage1_ckpt();
    } else if (fs::is_directory(job.generated.parent_path() / "meshes")) {
      meshes_dir = job.generated.parent_path() / "meshes";
    }
    auto folders = asset_folders(samples_dir);
    std::vector<torch::Tensor> imgs, alphas;
    for (const auto& f : folders) {
      if (!fs::exists(f / "image.png") || !fs::exists(f / "alpha.png")) continue;
      imgs.push_back(io::read_rgb_png(f / "image.png"));
      alphas.push_back(io::read_gray_png(f / "alpha.png"));
    }
    if (!imgs.empty()) {
      in.generated.images = torch::stack(imgs);
      in.generated.alpha = torch::stack(alphas);
    }
    if (!meshes_dir.empty() && fs::is_directory(meshes_dir)) {
      std::vector<fs::path> files;
      for (const auto& e : fs::directory_iterator(meshes_dir)) {
        const auto ext = e.path().extension();
        if (ext == ".obj" || ext == ".ply") files.push_back(e.path());
      }
      std::sort(files.begin(), files.end());
      for (const auto& p : files) in.generated_meshes.push_back(import_mesh(p));
    }
    if (in.generated_meshes.empty()) in.missing.push_back("meshes");
    if (stage1 && !folders.empty()) {
      auto model = load_stage1_model(*stage1);
      torch::NoGradGuard guard;
      ConsistencyOptions opt;
      opt.resolution = model->config.render_resolution;
      opt.render = RenderOptions::from_config(model->config);
      for (const auto& f : folders) {
        auto a = read_asset(f);
        auto planes = decode_planes(model, a);
        const auto box = FieldBox::for_object(model->config, a.scale);
        auto cam = asset_camera(a.scale, std::numbers::pi / 4, kGalleryElevation, opt.resolution);
        in.consistency.push_back(depth_consistency(model->field_fn(planes, a.scale), box.half, cam, opt));
      }
    } else {
      in.missing.push_back("consistency");
    }
  }
  if (in.generated.size() == 0) throw std::runtime_error("no generated images under " + job.generated.string());
  const auto r = in.generated.images.size(1);
  in.validation = validation_images(validation, r, job.min_visible);
  in.validation_clouds = validation_clouds(validation, job.cloud_points, job.seed, job.min_visible);
  emit(log, {{"event", "eval_inputs"},
             {"generated", in.generated.size()},
             {"validation", in.validation.size()},
             {"meshes", in.generated_meshes.size()},
             {"clouds", in.validation_clouds.size()}});
  auto report = evaluate(in, *backend, job.chamfer_samples, job.seed);
  report["config_preset"] = config.preset;
  report["generated_path"] = job.generated.string();
  report["validation_path"] = job.validation.string();
  validate_report(report);
  return report;
}

GalleryResult gallery(const fs::path& samples, const fs::path& out) {
  auto folders = asset_folders(samples);
  std::vector<torch::Tensor> imgs, strips;
  for (const auto& f : folders) {
    if (fs::exists(f / "image.png")) imgs.push_back(io::read_rgb_png(f / "image.png"));
    if (fs::exists(f / "turntable.png")) strips.push_back(io::read_rgb_png(f / "turntable.png"));
  }
  if (imgs.empty()) throw std::runtime_error("no rendered samples under " + samples.string());
  const auto n = static_cast<std::int64_t>(imgs.size());
  GalleryResult g;
  g.cols = static_cast<std::int64_t>(std::ceil(std::sqrt(static_cast<double>(n)) - 1e-9));
  g.rows = (n + g.cols - 1) / g.cols;
  const auto h = imgs[0].size(0), w = imgs[0].size(1);
  auto grid = torch::ones({g.rows * h, g.cols * w, 3});
  for (std::int64_t i = 0; i < n; ++i) {
    if (imgs[i].size(0) != h || imgs[i].size(1) != w) throw std::runtime_error("gallery images differ in size");
    grid.slice(0, (i / g.cols) * h, (i / g.cols + 1) * h).slice(1, (i % g.cols) * w, (i % g.cols + 1) * w).copy_(imgs[i]);
  }
  fs::create_directories(out);
  g.grid = out / "grid.png";
  io::write_rgb_png(g.grid, grid);
  if (!strips.empty()) {
    g.strip_width = strips[0].size(1);
    g.turntables = out / "turntables.png";
    io::write_rgb_png(g.turntables, torch::cat(strips, 0));
  }
  return g;
}

}  // namespace gina
