#include "gina/stage1.hpp"

#include <cmath>
#include <sstream>

#include "gina/checkpoint.hpp"
#include "gina/image_io.hpp"
#include "gina/rng.hpp"

namespace gina {

namespace F = torch::nn::functional;

Stage1ModelImpl::Stage1ModelImpl(const PipelineConfig& c) : config(c) {
  encoder = register_module("encoder", TriPlaneEncoder(c));
  codebook = register_module("codebook", Codebook(c));
  decoder = register_module("decoder", TriPlaneDecoder(c));
  field = register_module("field", TriPlaneField(c));
}

namespace {

torch::Tensor resize_mask(const torch::Tensor& m, std::int64_t r) {
  if (m.size(0) == r && m.size(1) == r) return m.to(torch::kBool);
  return io::area_resize(m.to(torch::kFloat32).unsqueeze(-1), r).squeeze(-1) > 0.5;
}

}  // namespace

torch::Tensor Stage1ModelImpl::encoder_input(const ObjectSample& sample) const {
  auto img = config.premask_input ? sample.whitened() : sample.image;
  return io::area_resize(img.to(torch::kFloat32), config.image_resolution);
}

torch::Tensor Stage1ModelImpl::encode(const torch::Tensor& images) {
  return codebook->normalize(encoder(images));
}

torch::Tensor Stage1ModelImpl::decode_tokens(const torch::Tensor& tokens) {
  return decoder(codebook->lookup(tokens));
}

FieldFn Stage1ModelImpl::field_fn(const torch::Tensor& planes, const Vec3& scale) {
  return triplane_field_fn(field, planes, FieldBox::for_object(config, scale));
}

RenderOutput Stage1ModelImpl::render_planes(const torch::Tensor& planes, const Camera& camera,
                                            const Vec3& scale, std::int64_t resolution,
                                            const RenderOptions& options) {
  const auto box = FieldBox::for_object(config, scale);
  return render(triplane_field_fn(field, planes, box), camera, box.half, resolution, options);
}

bool LossReport::finite() const {
  auto ok = [](double v) { return std::isfinite(v); };
  return ok(rgb) && ok(perceptual) && ok(gan_g) && ok(gan_d) && ok(vq) && ok(alpha) &&
         (!depth || ok(*depth)) && (!semantic || ok(*semantic)) && ok(total);
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j{{"rgb", rgb},   {"perceptual", perceptual}, {"gan_g", gan_g}, {"gan_d", gan_d},
                   {"vq", vq},     {"alpha", alpha},           {"total", total}};
  if (depth) j["depth"] = *depth;
  if (semantic) j["semantic"] = *semantic;
  return j;
}

NonFiniteLoss::NonFiniteLoss(const LossReport& r)
    : std::runtime_error("non-finite stage-1 loss: " + r.to_json().dump()), report(r) {}

RenderTargets render_targets(const ObjectSample& s, std::int64_t r) {
  RenderTargets t;
  t.image = io::area_resize(s.image.to(torch::kFloat32), r);
  t.mask = resize_mask(s.object_mask, r);
  t.skyroad = resize_mask(s.skyroad_mask, r) & ~t.mask;
  if (s.depth) {
    auto valid = s.depth_valid ? s.depth_valid->to(torch::kFloat32) : (*s.depth > 0).to(torch::kFloat32);
    auto num = io::area_resize((*s.depth * valid).unsqueeze(-1), r).squeeze(-1);
    auto frac = io::area_resize(valid.unsqueeze(-1), r).squeeze(-1);
    t.depth_valid = frac > 0.5;
    t.depth = torch::where(t.depth_valid, num / frac.clamp_min(1e-12), torch::zeros_like(num));
  }
  if (s.semantic) t.semantic = io::area_resize(*s.semantic, r);
  return t;
}

Stage1Terms stage1_forward(Stage1Model& model, const std::vector<ObjectSample>& batch,
                           std::optional<std::uint64_t> step_seed, Discriminator* disc,
                           const PerceptualBackend* perceptual) {
  const auto& c = model->config;
  if (batch.empty()) throw std::invalid_argument("stage-1 batch is empty");
  std::vector<torch::Tensor> inputs;
  for (const auto& s : batch) inputs.push_back(model->encoder_input(s));
  auto e = model->encode(torch::stack(inputs));
  auto q = model->codebook->quantize(e);
  auto z = straight_through(e, q.vectors);
  auto planes = model->decoder(z);

  const auto r = c.render_resolution;
  std::vector<torch::Tensor> x_hat, target, mask, sky, alpha, depth_r, depth_t, depth_v, sem_r, sem_t;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    auto opts = RenderOptions::from_config(c);
    if (step_seed) opts.generator = make_generator(derive_seed(*step_seed, 5, b));
    auto out = model->render_planes(planes[b], batch[b].camera, batch[b].scale, r, opts);
    auto tg = render_targets(batch[b], r);
    x_hat.push_back(out.rgb + (1.0 - out.alpha).unsqueeze(-1));
    alpha.push_back(out.alpha);
    target.push_back(tg.image);
    mask.push_back(tg.mask);
    sky.push_back(tg.skyroad);
    if (c.depth_loss) {
      if (!tg.depth.defined()) throw std::invalid_argument("depth loss enabled but sample " + batch[b].id + " has no depth");
      depth_r.push_back(out.depth);
      depth_t.push_back(tg.depth);
      depth_v.push_back(tg.depth_valid);
    }
    if (c.semantic_field) {
      if (!tg.semantic.defined()) {
        throw std::invalid_argument("semantic field enabled but sample " + batch[b].id + " has no features");
      }
      sem_r.push_back(out.semantic.defined() ? out.semantic
                                             : torch::zeros({r, r, c.semantic_channels}));
      sem_t.push_back(tg.semantic);
    }
  }

  Stage1Terms t;
  t.tokens = q.indices;
  t.embedding = e;
  t.x_hat = torch::stack(x_hat);
  t.target = torch::stack(target);
  auto m = torch::stack(mask);
  t.mask = m.to(torch::kFloat32);
  t.rgb = loss_rgb(t.x_hat, t.target, m, perceptual, &t.perceptual);
  t.alpha = loss_alpha(torch::stack(alpha), m, torch::stack(sky));
  t.vq = vq_loss(e, q.vectors, c.commitment_weight);
  if (c.depth_loss) t.depth = loss_depth(torch::stack(depth_r), torch::stack(depth_t), torch::stack(depth_v), m);
  if (c.semantic_field) t.semantic = loss_semantic(torch::stack(sem_r), torch::stack(sem_t), m);
  if (disc) {
    auto mf = t.mask.unsqueeze(-1);
    t.gan_g = gan_generator_loss((*disc)(t.x_hat * mf + (1.0 - mf)));
  } else {
    t.gan_g = torch::zeros({});
  }
  return t;
}

double masked_psnr(const torch::Tensor& x_hat, const torch::Tensor& x, const torch::Tensor& m) {
  auto mf = m.to(torch::kFloat64).unsqueeze(-1);
  const double count = mf.sum().item<double>() * 3.0;
  if (count == 0.0) throw std::invalid_argument("masked_psnr: empty mask");
  const double mse = ((x_hat.to(torch::kFloat64) - x.to(torch::kFloat64)).pow(2) * mf).sum().item<double>() / count;
  return 10.0 * std::log10(1.0 / std::max(mse, 1e-20));
}

void copy_weights(torch::nn::Module& dst, const torch::nn::Module& src) {
  torch::NoGradGuard guard;
  auto dp = dst.parameters();
  auto sp = src.parameters();
  for (std::size_t i = 0; i < dp.size(); ++i) dp[i].copy_(sp[i]);
  auto db = dst.buffers();
  auto sb = src.buffers();
  for (std::size_t i = 0; i < db.size(); ++i) db[i].copy_(sb[i]);
}

Stage1Trainer::Stage1Trainer(const PipelineConfig& c) : config(c) {
  config.validate();
  torch::manual_seed(derive_seed(c.seed, 11));
  model = Stage1Model(config);
  ema = Stage1Model(config);
  copy_weights(*ema, *model);
  for (auto& p : ema->parameters()) p.set_requires_grad(false);
  ema->eval();
  discriminator = Discriminator(config.render_resolution, config.discriminator_channels);
  opt_g = std::make_unique<torch::optim::Adam>(
      model->parameters(),
      torch::optim::AdamOptions(config.lr_generator).betas({config.adam_beta1, config.adam_beta2}));
  opt_d = std::make_unique<torch::optim::Adam>(
      discriminator->parameters(),
      torch::optim::AdamOptions(config.lr_discriminator).betas({config.adam_beta1, config.adam_beta2}));
  if (config.weight_perceptual > 0.0) {
    perceptual = std::make_shared<PatchFeatureL2>();
  } else {
    perceptual = std::make_shared<NoPerceptual>();
  }
}

bool Stage1Trainer::gan_active() const {
  return config.weight_gan > 0.0 && step >= config.gan_warmup_steps;
}

namespace {

double value(const torch::Tensor& t) { return t.defined() ? t.item<double>() : 0.0; }

}  // namespace

LossReport Stage1Trainer::train_step(const std::vector<ObjectSample>& batch) {
  const bool gan = gan_active();
  const auto step_seed = derive_seed(config.seed, 7, static_cast<std::uint64_t>(step));
  model->train();

  auto terms = stage1_forward(model, batch, step_seed, nullptr, perceptual.get());
  LossReport report;

  if (gan) {
    auto mf = terms.mask.unsqueeze(-1);
    auto real = (terms.target * mf + (1.0 - mf)).detach().requires_grad_(true);
    auto fake = (terms.x_hat * mf + (1.0 - mf)).detach();
    auto real_logits = discriminator(real);
    auto d_loss = gan_discriminator_loss(real_logits, discriminator(fake));
    if (config.r1_gamma > 0.0) d_loss = d_loss + r1_penalty(real_logits, real, config.r1_gamma);
    report.gan_d = d_loss.item<double>();
    if (!std::isfinite(report.gan_d)) throw NonFiniteLoss(report);
    opt_d->zero_grad();
    d_loss.backward();
    opt_d->step();
    terms.gan_g = gan_generator_loss(discriminator(terms.x_hat * mf + (1.0 - mf)));
  } else {
    terms.gan_g = torch::zeros({});
  }

  auto total = config.weight_rgb * terms.rgb + config.weight_perceptual * terms.perceptual +
               config.weight_vq * terms.vq + config.weight_alpha * terms.alpha;
  if (gan) total = total + config.weight_gan * terms.gan_g;
  if (terms.depth.defined()) total = total + config.weight_depth * terms.depth;
  if (terms.semantic.defined()) total = total + config.weight_semantic * terms.semantic;

  report.rgb = value(terms.rgb);
  report.perceptual = value(terms.perceptual);
  report.gan_g = value(terms.gan_g);
  report.vq = value(terms.vq);
  report.alpha = value(terms.alpha);
  if (terms.depth.defined()) report.depth = value(terms.depth);
  if (terms.semantic.defined()) report.semantic = value(terms.semantic);
  report.total = value(total);
  if (!report.finite()) throw NonFiniteLoss(report);

  opt_g->zero_grad();
  total.backward();
  opt_g->step();
  model->codebook->renormalize();
  ++step;
  restart_codes(terms);
  update_ema();
  return report;
}

void Stage1Trainer::restart_codes(const Stage1Terms& terms) {
  if (config.codebook_restart_interval <= 0) return;
  auto usage = code_usage(terms.tokens, config.codebook_size);
  code_usage_window = code_usage_window.defined() ? code_usage_window + usage : usage;
  if (step % config.codebook_restart_interval != 0) return;
  auto gen = make_generator(derive_seed(config.seed, 13, static_cast<std::uint64_t>(step)));
  model->codebook->restart_dead(code_usage_window, terms.embedding, gen);
  code_usage_window = torch::zeros_like(code_usage_window);
}

void Stage1Trainer::update_ema() {
  // Short runs would otherwise leave the shadow at its initial weights.
  const double s = static_cast<double>(step);
  const double decay = std::min(config.ema_decay, (1.0 + s) / (10.0 + s));
  torch::NoGradGuard guard;
  auto ep = ema->parameters();
  auto mp = model->parameters();
  for (std::size_t i = 0; i < ep.size(); ++i) ep[i].lerp_(mp[i], 1.0 - decay);
  auto eb = ema->buffers();
  auto mb = model->buffers();
  for (std::size_t i = 0; i < eb.size(); ++i) eb[i].copy_(mb[i]);
}

void Stage1Trainer::fit(const std::vector<ObjectSample>& samples, std::int64_t steps,
                        const std::function<void(std::int64_t, const LossReport&)>& on_step) {
  if (samples.empty()) throw std::invalid_argument("stage-1 training needs at least one sample");
  for (std::int64_t i = 0; i < steps; ++i) {
    Rng rng(derive_seed(config.seed, 3, static_cast<std::uint64_t>(step)));
    std::vector<ObjectSample> batch;
    for (std::int64_t b = 0; b < config.batch_size; ++b) {
      batch.push_back(samples[static_cast<std::size_t>(rng.index(static_cast<std::int64_t>(samples.size())))]);
    }
    auto report = train_step(batch);
    if (on_step) on_step(step, report);
  }
}

void Stage1Trainer::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.set_config(config);
  ck.header["stage"] = "stage1";
  ck.header["step"] = step;
  ck.put_module("model.", *model);
  ck.put_module("ema.", *ema);
  ck.put_module("disc.", *discriminator);
  ck.put_adam("opt_g.", *opt_g);
  ck.put_adam("opt_d.", *opt_d);
  if (code_usage_window.defined()) ck.put("code_usage_window", code_usage_window);
  save_checkpoint(ck, path);
}

Stage1Trainer Stage1Trainer::load(const std::filesystem::path& path,
                                  const std::optional<PipelineConfig>& expected) {
  auto ck = load_checkpoint(path);
  if (ck.header.value("stage", "") != "stage1") {
    throw std::runtime_error(path.string() + " is not a stage-1 checkpoint");
  }
  auto stored = ck.config();
  if (expected) check_config_compatible(stored, *expected);
  Stage1Trainer t(expected ? *expected : stored);
  ck.load_module("model.", *t.model);
  ck.load_module("ema.", *t.ema);
  ck.load_module("disc.", *t.discriminator);
  ck.load_adam("opt_g.", *t.opt_g);
  ck.load_adam("opt_d.", *t.opt_d);
  t.step = ck.header.at("step").get<std::int64_t>();
  if (ck.has("code_usage_window")) t.code_usage_window = ck.get("code_usage_window").clone();
  return t;
}

Stage1Model load_stage1_model(const std::filesystem::path& path, bool use_ema) {
  auto ck = load_checkpoint(path);
  if (ck.header.value("stage", "") != "stage1") {
    throw std::runtime_error(path.string() + " is not a stage-1 checkpoint");
  }
  Stage1Model m(ck.config());
  ck.load_module(use_ema ? "ema." : "model.", *m);
  m->eval();
  for (auto& p : m->parameters()) p.set_requires_grad(false);
  return m;
}

}  // namespace gina
