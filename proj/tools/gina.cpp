#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "gina/pipeline.hpp"
#include "gina/synthetic.hpp"

using namespace gina;
namespace fs = std::filesystem;

namespace {

void log_line(const nlohmann::json& j) {
  nlohmann::json line = j;
  if (!line.contains("level")) line["level"] = "info";
  std::cerr << line.dump() << std::endl;
}

struct Globals {
  std::uint64_t seed = 0;
  bool seed_given = false;
  std::string preset = "desk";
  std::string config_file;
};

PipelineConfig resolve_config(const Globals& g) {
  PipelineConfig c = preset_by_name(g.preset);
  if (!g.config_file.empty()) {
    std::ifstream in(g.config_file);
    if (!in) throw std::runtime_error("cannot open config " + g.config_file);
    auto j = nlohmann::json::parse(in);
    // A recorded run.json carries the resolved config under "config".
    c = apply_overrides(c, j.contains("config") && j["config"].is_object() ? j["config"] : j);
  }
  if (g.seed_given) c.seed = g.seed;
  c.validate();
  return c;
}

// run.json lives at the run root: the parent of ckpt/, samples/, meshes/ or reports/.
fs::path run_root_for(const fs::path& out, bool is_file) {
  fs::path dir = is_file ? out.parent_path() : out;
  if (dir.empty()) dir = ".";
  const auto name = dir.filename().string();
  if (name == "ckpt" || name == "samples" || name == "meshes" || name == "reports") dir = dir.parent_path();
  return dir.empty() ? fs::path(".") : dir;
}

void set_workers() {
  if (const char* w = std::getenv("GINA_NUM_WORKERS")) {
    const int n = std::atoi(w);
    if (n > 0) torch::set_num_threads(n);
  }
}

SamplingPolicy policy_for(const PipelineConfig& c, double temperature, double gumbel) {
  SamplingPolicy p;
  p.steps = c.decode_steps;
  p.token_temperature = temperature;
  p.gumbel_start = gumbel;
  return p;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"gina: tri-plane latent 3D asset generation"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--seed", g.seed, "Global seed")->each([&](const std::string&) { g.seed_given = true; });
  app.add_option("--preset", g.preset, "Config preset")->check(CLI::IsMember({"desk", "paper"}));
  app.add_option("--config", g.config_file, "JSON file overriding preset fields (or a run.json)")->check(CLI::ExistingFile);

  // data gen
  auto* data = app.add_subcommand("data", "Synthetic dataset tools")->require_subcommand(1);
  auto* gen = data->add_subcommand("gen", "Generate a synthetic dataset");
  std::int64_t gen_n = 8;
  std::string gen_out;
  double gen_occ = -1.0;
  gen->add_option("--n", gen_n, "Number of samples")->check(CLI::PositiveNumber);
  gen->add_option("--out", gen_out, "Output directory")->required();
  gen->add_option("--occlusion", gen_occ, "Occluder probability (default 0.5)")->check(CLI::Range(0.0, 1.0));

  // train stage1 / stage2
  auto* train = app.add_subcommand("train", "Training")->require_subcommand(1);
  auto* s1 = train->add_subcommand("stage1", "Train encoder, codebook and decoder");
  std::string s1_data, s1_out, s1_resume;
  std::int64_t s1_steps = 200, s1_log = 10;
  s1->add_option("--data", s1_data)->required()->check(CLI::ExistingDirectory);
  s1->add_option("--steps", s1_steps)->check(CLI::NonNegativeNumber);
  s1->add_option("--out", s1_out, "Checkpoint path")->required();
  s1->add_option("--resume", s1_resume)->check(CLI::ExistingFile);
  s1->add_option("--log-every", s1_log);

  auto* s2 = train->add_subcommand("stage2", "Train the masked token prior");
  std::string s2_data, s2_stage1, s2_out, s2_resume, s2_cond = "none";
  std::int64_t s2_steps = 200, s2_log = 10;
  s2->add_option("--data", s2_data)->required()->check(CLI::ExistingDirectory);
  s2->add_option("--stage1", s2_stage1, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  s2->add_option("--condition", s2_cond)->check(CLI::IsMember({"none", "class", "time", "scale", "semantic"}));
  s2->add_option("--steps", s2_steps)->check(CLI::NonNegativeNumber);
  s2->add_option("--out", s2_out, "Checkpoint path")->required();
  s2->add_option("--resume", s2_resume)->check(CLI::ExistingFile);
  s2->add_option("--log-every", s2_log);

  // sample
  auto* smp = app.add_subcommand("sample", "Sample assets from the prior");
  std::string smp_s1, smp_s2, smp_out;
  std::int64_t smp_n = 4;
  std::optional<std::int64_t> smp_class;
  std::vector<double> smp_scale;
  double smp_temp = 1.0, smp_gumbel = 1.0;
  smp->add_option("--stage1", smp_s1)->required()->check(CLI::ExistingFile);
  smp->add_option("--stage2", smp_s2)->required()->check(CLI::ExistingFile);
  smp->add_option("--n", smp_n)->check(CLI::PositiveNumber);
  smp->add_option("--class", smp_class, "Class or time-of-day value for discrete priors");
  smp->add_option("--scale", smp_scale, "Object size in meters (x y z)")->expected(3);
  smp->add_option("--temperature", smp_temp)->check(CLI::PositiveNumber);
  smp->add_option("--gumbel", smp_gumbel)->check(CLI::NonNegativeNumber);
  smp->add_option("--out", smp_out, "Samples directory")->required();

  // reconstruct
  auto* rec = app.add_subcommand("reconstruct", "Encode and re-render dataset samples");
  std::string rec_ckpt, rec_data, rec_out;
  std::vector<std::int64_t> rec_idx{0};
  rec->add_option("--ckpt", rec_ckpt, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  rec->add_option("--data", rec_data)->required()->check(CLI::ExistingDirectory);
  rec->add_option("--index", rec_idx, "Sample indices");
  rec->add_option("--out", rec_out)->required();

  // vary
  auto* var = app.add_subcommand("vary", "Image-conditioned variations of a dataset sample");
  std::string var_s1, var_s2, var_data, var_out;
  std::int64_t var_idx = 0, var_n = 4;
  double var_ratio = 0.5, var_temp = 1.0, var_gumbel = 1.0;
  var->add_option("--stage1", var_s1)->required()->check(CLI::ExistingFile);
  var->add_option("--stage2", var_s2)->required()->check(CLI::ExistingFile);
  var->add_option("--data", var_data)->required()->check(CLI::ExistingDirectory);
  var->add_option("--index", var_idx);
  var->add_option("--n", var_n)->check(CLI::PositiveNumber);
  var->add_option("--mask-ratio", var_ratio)->check(CLI::Range(0.0, 1.0));
  var->add_option("--temperature", var_temp)->check(CLI::PositiveNumber);
  var->add_option("--gumbel", var_gumbel)->check(CLI::NonNegativeNumber);
  var->add_option("--out", var_out)->required();

  // mesh
  auto* msh = app.add_subcommand("mesh", "Extract meshes with marching cubes");
  std::string msh_ckpt, msh_tokens, msh_samples, msh_out, msh_format;
  std::int64_t msh_res = 0;
  double msh_thr = -1.0;
  msh->add_option("--ckpt", msh_ckpt, "Stage-1 checkpoint")->required()->check(CLI::ExistingFile);
  auto* tok_opt = msh->add_option("--tokens", msh_tokens, "Asset meta.json or folder")->check(CLI::ExistingPath);
  auto* smp_opt = msh->add_option("--samples", msh_samples, "Mesh every asset in a samples directory")
                      ->check(CLI::ExistingDirectory);
  tok_opt->excludes(smp_opt);
  msh->add_option("--res", msh_res, "Grid resolution (default from config)");
  msh->add_option("--threshold", msh_thr, "Density threshold (default from config)");
  msh->add_option("--format", msh_format, "obj or ply (with --samples)")->check(CLI::IsMember({"obj", "ply"}));
  msh->add_option("--out", msh_out, "Mesh file, or directory with --samples")->required();

  // eval
  auto* ev = app.add_subcommand("eval", "Evaluate generated assets against a validation set");
  std::string ev_gen, ev_val, ev_report, ev_ckpt, ev_backend = "random_pyramid";
  ev->add_option("--generated", ev_gen, "Run, samples or dataset directory")->required()->check(CLI::ExistingDirectory);
  ev->add_option("--validation", ev_val)->required()->check(CLI::ExistingDirectory);
  ev->add_option("--report", ev_report)->required();
  ev->add_option("--ckpt", ev_ckpt, "Stage-1 checkpoint for the consistency score")->check(CLI::ExistingFile);
  ev->add_option("--backend", ev_backend);

  // gallery
  auto* gal = app.add_subcommand("gallery", "Tile rendered samples and turntables");
  std::string gal_samples, gal_out;
  gal->add_option("--samples", gal_samples)->required()->check(CLI::ExistingDirectory);
  gal->add_option("--out", gal_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    set_workers();
    const auto config = resolve_config(g);
    torch::manual_seed(config.seed);
    const nlohmann::json base_args{{"preset", config.preset}, {"seed", config.seed}};

    if (gen->parsed()) {
      auto opts = synthetic::generator_options_for(config);
      if (gen_occ >= 0.0) opts.occlusion_probability = gen_occ;
      synthetic::generate_dataset(static_cast<std::size_t>(gen_n), config, config.seed, gen_out, opts);
      record_run(gen_out, "data gen", {{"n", gen_n}, {"out", gen_out}, {"occlusion", opts.occlusion_probability}}, config);
      log_line({{"event", "dataset"}, {"path", gen_out}, {"n", gen_n}});
    } else if (s1->parsed()) {
      Stage1Job job;
      job.data = s1_data;
      job.out = s1_out;
      job.steps = s1_steps;
      job.log_every = s1_log;
      if (!s1_resume.empty()) job.resume = s1_resume;
      train_stage1(config, job, log_line);
      record_run(run_root_for(s1_out, true), "train stage1",
                 {{"data", s1_data}, {"steps", s1_steps}, {"out", s1_out}, {"resume", s1_resume}}, config);
    } else if (s2->parsed()) {
      Stage2Job job;
      job.data = s2_data;
      job.stage1 = s2_stage1;
      job.out = s2_out;
      job.condition = s2_cond;
      job.steps = s2_steps;
      job.log_every = s2_log;
      if (!s2_resume.empty()) job.resume = s2_resume;
      train_stage2(config, job, log_line);
      record_run(run_root_for(s2_out, true), "train stage2",
                 {{"data", s2_data}, {"stage1", s2_stage1}, {"condition", s2_cond}, {"steps", s2_steps}, {"out", s2_out}},
                 config);
    } else if (smp->parsed()) {
      SampleJob job;
      job.stage1 = smp_s1;
      job.stage2 = smp_s2;
      job.out = smp_out;
      job.n = smp_n;
      job.class_value = smp_class;
      if (!smp_scale.empty()) job.scale = Vec3{smp_scale[0], smp_scale[1], smp_scale[2]};
      job.policy = policy_for(config, smp_temp, smp_gumbel);
      job.seed = config.seed;
      sample_assets(job, log_line);
      nlohmann::json args{{"stage1", smp_s1}, {"stage2", smp_s2}, {"n", smp_n}, {"out", smp_out},
                          {"temperature", smp_temp}, {"gumbel", smp_gumbel}};
      if (smp_class) args["class"] = *smp_class;
      if (!smp_scale.empty()) args["scale"] = smp_scale;
      record_run(run_root_for(smp_out, false), "sample", args, config);
    } else if (rec->parsed()) {
      ReconstructJob job{rec_ckpt, rec_data, rec_out, rec_idx};
      auto report = reconstruct(job, log_line);
      record_run(run_root_for(rec_out, false), "reconstruct",
                 {{"ckpt", rec_ckpt}, {"data", rec_data}, {"index", rec_idx}, {"out", rec_out}}, config);
      std::cout << report.dump(2) << "\n";
    } else if (var->parsed()) {
      VaryJob job;
      job.stage1 = var_s1;
      job.stage2 = var_s2;
      job.data = var_data;
      job.out = var_out;
      job.index = var_idx;
      job.n = var_n;
      job.mask_ratio = var_ratio;
      job.policy = policy_for(config, var_temp, var_gumbel);
      job.seed = config.seed;
      vary(job, log_line);
      record_run(run_root_for(var_out, false), "vary",
                 {{"stage1", var_s1}, {"stage2", var_s2}, {"data", var_data}, {"index", var_idx}, {"n", var_n},
                  {"mask_ratio", var_ratio}, {"out", var_out}},
                 config);
    } else if (msh->parsed()) {
      const auto res = msh_res > 0 ? msh_res : config.mesh_grid;
      const auto thr = msh_thr >= 0.0 ? msh_thr : config.density_threshold;
      if (!msh_samples.empty()) {
        const auto fmt = mesh_format_from_string(msh_format.empty() ? "obj" : msh_format);
        mesh_samples(msh_ckpt, msh_samples, msh_out, res, thr, fmt, log_line);
        record_run(run_root_for(msh_out, false), "mesh",
                   {{"ckpt", msh_ckpt}, {"samples", msh_samples}, {"res", res}, {"threshold", thr}, {"out", msh_out}},
                   config);
      } else {
        if (msh_tokens.empty()) throw CLI::RequiredError("--tokens or --samples");
        auto model = load_stage1_model(msh_ckpt);
        auto mesh = asset_mesh(model, read_asset(msh_tokens), res, thr);
        if (!fs::path(msh_out).parent_path().empty()) fs::create_directories(fs::path(msh_out).parent_path());
        export_mesh(mesh, msh_out);
        log_line({{"event", "mesh"}, {"path", msh_out}, {"faces", mesh.faces.size()}, {"empty", mesh.empty()}});
        record_run(run_root_for(msh_out, true), "mesh",
                   {{"ckpt", msh_ckpt}, {"tokens", msh_tokens}, {"res", res}, {"threshold", thr}, {"out", msh_out}},
                   config);
      }
    } else if (ev->parsed()) {
      EvalJob job;
      job.generated = ev_gen;
      job.validation = ev_val;
      job.backend = ev_backend;
      job.seed = config.seed;
      if (!ev_ckpt.empty()) job.stage1 = ev_ckpt;
      auto report = evaluate_run(config, job, log_line);
      const fs::path out(ev_report);
      if (!out.parent_path().empty()) fs::create_directories(out.parent_path());
      std::ofstream(out) << report.dump(2) << "\n";
      std::ofstream(fs::path(out).replace_extension(".txt")) << report_table(report);
      std::cout << report_table(report);
      record_run(run_root_for(out, true), "eval",
                 {{"generated", ev_gen}, {"validation", ev_val}, {"report", ev_report}, {"ckpt", ev_ckpt}}, config);
    } else if (gal->parsed()) {
      auto r = gallery(gal_samples, gal_out);
      log_line({{"event", "gallery"}, {"grid", r.grid.string()}, {"rows", r.rows}, {"cols", r.cols},
                {"turntables", r.turntables.string()}, {"strip_width", r.strip_width}});
      record_run(run_root_for(gal_out, false), "gallery", {{"samples", gal_samples}, {"out", gal_out}}, config);
    }
  } catch (const CLI::Error& e) {
    log_line({{"level", "error"}, {"error", e.what()}});
    return 1;
  } catch (const c10::Error& e) {
    log_line({{"level", "error"}, {"error", e.what_without_backtrace()}});
    return 2;
  } catch (const std::exception& e) {
    log_line({{"level", "error"}, {"error", e.what()}});
    return 2;
  }
  return 0;
}
