#include "gina/stage2.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "gina/checkpoint.hpp"
#include "gina/losses.hpp"
#include "gina/rng.hpp"

namespace gina {

torch::Tensor flatten_tokens(const torch::Tensor& indices) {
  if (indices.dim() < 3 || indices.size(-3) != 3 || indices.size(-1) != indices.size(-2)) {
    throw std::invalid_argument("flatten_tokens expects [..., 3, N_Z, N_Z]");
  }
  auto shape = indices.sizes().vec();
  shape.resize(shape.size() - 3);
  shape.push_back(-1);
  return indices.reshape(shape);
}

torch::Tensor unflatten_tokens(const torch::Tensor& seq, std::int64_t n, std::int64_t k) {
  if (seq.size(-1) != 3 * n * n) {
    throw std::invalid_argument("sequence length " + std::to_string(seq.size(-1)) +
                                " does not match 3 * " + std::to_string(n) + "^2");
  }
  if (seq.numel() > 0 && (seq.max().item<std::int64_t>() >= k || seq.min().item<std::int64_t>() < 0)) {
    throw std::invalid_argument("cannot unflatten a sequence containing MASK or condition tokens");
  }
  auto shape = seq.sizes().vec();
  shape.pop_back();
  shape.insert(shape.end(), {3, n, n});
  return seq.reshape(shape);
}

std::pair<torch::Tensor, torch::Tensor> mask_tokens(const torch::Tensor& seq, double ratio,
                                                    std::uint64_t seed, std::int64_t mask_id) {
  if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("mask ratio must lie in (0, 1]");
  const bool single = seq.dim() == 1;
  auto s = single ? seq.unsqueeze(0) : seq;
  const auto b = s.size(0);
  const auto l = s.size(1);
  const auto n = std::clamp<std::int64_t>(
      static_cast<std::int64_t>(std::ceil(ratio * static_cast<double>(l) - 1e-9)), 1, l);
  auto mask = torch::zeros({b, l}, torch::kBool);
  auto gen = make_generator(seed);
  for (std::int64_t i = 0; i < b; ++i) {
    auto pos = torch::randperm(l, gen).slice(0, 0, n);
    mask[i].index_fill_(0, pos, true);
  }
  auto out = s.masked_fill(mask, mask_id);
  if (single) return {out.squeeze(0), mask.squeeze(0)};
  return {out, mask};
}

std::vector<std::int64_t> schedule_counts(std::int64_t masked, std::int64_t steps) {
  if (steps < 1) throw std::invalid_argument("decoding needs at least one step");
  std::vector<std::int64_t> c(static_cast<std::size_t>(steps + 1));
  c[0] = masked;
  for (std::int64_t t = 1; t <= steps; ++t) {
    const double r = std::cos(std::numbers::pi * static_cast<double>(t) / (2.0 * static_cast<double>(steps)));
    auto v = static_cast<std::int64_t>(std::floor(static_cast<double>(masked) * r));
    const auto prev = c[static_cast<std::size_t>(t - 1)];
    if (masked >= steps) {
      // Leave room for one commit per remaining step.
      v = std::clamp<std::int64_t>(v, steps - t, prev - 1);
    } else {
      v = std::min(v, prev);
    }
    c[static_cast<std::size_t>(t)] = t == steps ? 0 : v;
  }
  return c;
}

torch::Tensor masked_nll(const torch::Tensor& logits, const torch::Tensor& targets,
                         const torch::Tensor& mask, double eps) {
  auto logp = torch::log_softmax(logits, -1);
  auto nll = -logp.gather(-1, targets.unsqueeze(-1)).squeeze(-1);
  auto loss = eps > 0.0 ? (1.0 - eps) * nll - eps * logp.mean(-1) : nll;
  auto mf = mask.to(loss.scalar_type());
  const auto count = mf.sum();
  if (count.item<double>() == 0.0) throw std::invalid_argument("masked_nll: no masked positions");
  return (loss * mf).sum() / count;
}

std::vector<double> scale_encoding(const Vec3& scale, double extent) {
  std::vector<double> out;
  for (int a = 0; a < 3; ++a) {
    for (int d = 0; d < 6; ++d) {
      const double x = std::ldexp(1.0, d) * std::numbers::pi * scale[a] / extent;
      out.push_back(std::sin(x));
      out.push_back(std::cos(x));
    }
  }
  return out;
}

namespace {

constexpr std::int64_t kSemanticDim = 64;
constexpr std::uint64_t kSemanticSeed = 4321;

}  // namespace

Stage2Condition Stage2Condition::from_name(const std::string& name) {
  Stage2Condition c;
  c.name = name;
  if (name == "none") return c;
  if (name == "class") {
    c.kind = ConditionKind::discrete;
    c.num_classes = 4;
  } else if (name == "time") {
    c.kind = ConditionKind::discrete;
    c.num_classes = 2;
  } else if (name == "scale") {
    c.kind = ConditionKind::continuous;
    c.continuous_dim = 36;
  } else if (name == "semantic") {
    c.kind = ConditionKind::continuous;
    c.continuous_dim = kSemanticDim;
  } else {
    throw std::invalid_argument("unknown condition '" + name +
                                "' (expected none, class, time, scale or semantic)");
  }
  return c;
}

nlohmann::json Stage2Condition::to_json() const {
  return {{"name", name}, {"kind", gina::to_string(kind)}, {"num_classes", num_classes},
          {"continuous_dim", continuous_dim}};
}

Stage2Condition Stage2Condition::from_json(const nlohmann::json& j) {
  Stage2Condition c;
  c.name = j.at("name").get<std::string>();
  c.kind = condition_kind_from_string(j.at("kind").get<std::string>());
  c.num_classes = j.at("num_classes").get<std::int64_t>();
  c.continuous_dim = j.at("continuous_dim").get<std::int64_t>();
  return c;
}

std::int64_t ConditionBatch::size() const {
  if (classes.defined()) return classes.size(0);
  if (continuous.defined()) return continuous.size(0);
  return -1;
}

ConditionBatch ConditionBatch::index(const torch::Tensor& idx) const {
  ConditionBatch out;
  if (classes.defined()) out.classes = classes.index_select(0, idx);
  if (continuous.defined()) out.continuous = continuous.index_select(0, idx);
  return out;
}

ConditionBatch ConditionBatch::repeat(std::int64_t n) const {
  ConditionBatch out;
  if (classes.defined()) out.classes = classes.repeat({n});
  if (continuous.defined()) out.continuous = continuous.repeat({n, 1});
  return out;
}

ConditionBatch encode_condition(const ConditionSpec& spec, const Stage2Condition& cond) {
  spec.validate();
  ConditionBatch out;
  switch (cond.kind) {
    case ConditionKind::none:
      return out;
    case ConditionKind::discrete: {
      if (spec.kind != ConditionKind::discrete || !spec.discrete_value) {
        throw std::invalid_argument("model expects a discrete '" + cond.name + "' condition");
      }
      const auto v = *spec.discrete_value;
      if (v < 0 || v >= cond.num_classes) {
        throw std::invalid_argument("discrete condition " + std::to_string(v) + " outside [0, " +
                                    std::to_string(cond.num_classes) + ")");
      }
      out.classes = torch::tensor({v}, torch::kInt64);
      return out;
    }
    case ConditionKind::continuous: {
      if (spec.kind != ConditionKind::continuous ||
          static_cast<std::int64_t>(spec.continuous_vector.size()) != cond.continuous_dim) {
        throw std::invalid_argument("model expects a continuous '" + cond.name + "' condition of dim " +
                                    std::to_string(cond.continuous_dim));
      }
      out.continuous = torch::tensor(spec.continuous_vector, torch::kFloat64).to(torch::kFloat32).unsqueeze(0);
      return out;
    }
    case ConditionKind::image:
      throw std::invalid_argument("image conditions are handled by vary, not by the prior");
  }
  return out;
}

ConditionSpec condition_for_sample(const ObjectSample& s, const Stage2Condition& cond,
                                   const PipelineConfig& config) {
  if (cond.name == "none") return ConditionSpec::none();
  if (cond.name == "class") return ConditionSpec::discrete(s.class_label, 4);
  if (cond.name == "time") return ConditionSpec::discrete(s.time_of_day, 2);
  if (cond.name == "scale") return ConditionSpec::continuous(scale_encoding(s.scale, config.world_extent));
  if (cond.name == "semantic") {
    static const FeaturePyramid pyramid(kSemanticSeed, {16, 32, kSemanticDim});
    torch::NoGradGuard guard;
    auto emb = pyramid.embed(s.whitened().to(torch::kFloat32).unsqueeze(0))[0];
    std::vector<double> v(emb.data_ptr<double>(), emb.data_ptr<double>() + emb.numel());
    return ConditionSpec::continuous(std::move(v));
  }
  throw std::invalid_argument("unknown condition '" + cond.name + "'");
}

Stage2Options Stage2Options::from_config(const PipelineConfig& c, const Stage2Condition& cond) {
  Stage2Options o;
  o.codebook_size = c.codebook_size;
  o.length = c.sequence_length();
  o.width = c.stage2_width;
  o.hidden = c.stage2_hidden;
  o.heads = c.stage2_heads;
  o.layers = c.stage2_layers;
  o.dropout = c.stage2_dropout;
  o.condition = cond;
  return o;
}

MaskGitImpl::MaskGitImpl(const Stage2Options& o) : options(o) {
  const auto extra = o.condition.kind == ConditionKind::discrete ? 1 : 0;
  token_embedding = register_module("token_embedding", torch::nn::Embedding(o.vocab_size(), o.width));
  pos = register_parameter("pos", torch::zeros({1, o.length + extra, o.width}));
  if (o.condition.kind == ConditionKind::continuous) {
    cond_fc = register_module("cond_fc", torch::nn::Linear(o.condition.continuous_dim, o.width));
    cond_merge = register_module("cond_merge", torch::nn::Linear(2 * o.width, o.width));
  }
  for (std::int64_t i = 0; i < o.layers; ++i) {
    blocks->push_back(nn::TransformerBlock(o.width, o.heads, o.hidden, o.dropout));
  }
  register_module("blocks", blocks);
  norm = register_module("norm", torch::nn::LayerNorm(torch::nn::LayerNormOptions({o.width})));
  head = register_module("head", torch::nn::Linear(o.width, o.codebook_size));

  torch::NoGradGuard guard;
  for (auto& p : named_parameters()) {
    const auto& name = p.key();
    auto t = p.value();
    if (name.find("norm") != std::string::npos) continue;
    if (name.ends_with("bias")) {
      t.zero_();
    } else {
      nn::trunc_normal_(t, 0.02);
    }
  }
}

torch::Tensor MaskGitImpl::input_sequence(const torch::Tensor& tokens, const ConditionBatch& cond) const {
  if (options.condition.kind != ConditionKind::discrete) return tokens;
  if (!cond.classes.defined()) throw std::invalid_argument("discrete condition missing");
  auto cls = cond.classes.to(torch::kInt64);
  if (cls.min().item<std::int64_t>() < 0 || cls.max().item<std::int64_t>() >= options.condition.num_classes) {
    throw std::invalid_argument("discrete condition outside the configured vocabulary");
  }
  auto extra = (cls + options.codebook_size + 1).unsqueeze(1);
  return torch::cat({tokens, extra}, 1);
}

torch::Tensor MaskGitImpl::forward(const torch::Tensor& tokens, const ConditionBatch& cond) {
  if (tokens.dim() != 2 || tokens.size(1) != options.length) {
    throw std::invalid_argument("MaskGit expects tokens [B, " + std::to_string(options.length) + "]");
  }
  auto seq = input_sequence(tokens, cond);
  auto x = token_embedding(seq);
  if (options.condition.kind == ConditionKind::continuous) {
    if (!cond.continuous.defined()) throw std::invalid_argument("continuous condition missing");
    auto c = cond_fc(cond.continuous.to(x.scalar_type())).unsqueeze(1).expand({-1, x.size(1), -1});
    x = cond_merge(torch::cat({x, c}, -1));
  }
  x = x + pos;
  for (auto& blk : *blocks) x = blk->as<nn::TransformerBlock>()->forward(x);
  return head(norm(x.slice(1, 0, options.length)));
}

torch::Tensor maskgit_sample(MaskGit& model, std::int64_t n, const ConditionBatch& cond,
                             const SamplingPolicy& policy, std::uint64_t seed,
                             const std::optional<torch::Tensor>& initial,
                             std::vector<torch::Tensor>* trace) {
  const auto& o = model->options;
  const auto mask_id = o.mask_id();
  torch::NoGradGuard guard;
  model->eval();
  torch::Tensor seq = initial ? initial->clone().to(torch::kInt64) : torch::full({n, o.length}, mask_id, torch::kInt64);
  if (seq.size(0) != n || seq.size(1) != o.length) throw std::invalid_argument("initial sequence has the wrong shape");
  auto gen = make_generator(seed);
  auto unknown0 = (seq == mask_id);
  const auto counts_unknown = unknown0.sum(1);
  // Every row follows its own schedule over its own number of unknowns.
  std::vector<std::vector<std::int64_t>> sched;
  for (std::int64_t b = 0; b < n; ++b) sched.push_back(schedule_counts(counts_unknown[b].item<std::int64_t>(), policy.steps));
  if (trace) trace->push_back(seq.clone());

  for (std::int64_t t = 1; t <= policy.steps; ++t) {
    auto known = seq != mask_id;
    if (known.all().item<bool>()) break;
    auto logits = model(seq, cond).to(torch::kFloat64);
    if (!torch::isfinite(logits).all().item<bool>()) throw std::runtime_error("stage-2 logits are not finite");
    auto logp = torch::log_softmax(logits / std::max(policy.token_temperature, 1e-6), -1);
    auto cand = torch::multinomial(logp.exp().reshape({-1, o.codebook_size}), 1, true, gen).view({n, o.length});
    auto cand_logp = torch::log_softmax(logits, -1).gather(-1, cand.unsqueeze(-1)).squeeze(-1);
    const double g = policy.gumbel_start * (1.0 - static_cast<double>(t) / static_cast<double>(policy.steps));
    auto u = torch::rand({n, o.length}, gen, torch::kFloat64).clamp(1e-20, 1.0 - 1e-16);
    auto conf = cand_logp + g * (-torch::log(-torch::log(u)));
    conf = conf.masked_fill(known, std::numeric_limits<double>::infinity());
    cand = torch::where(known, seq, cand);
    auto order = std::get<1>(conf.sort(1, true));
    auto next = seq.clone();
    for (std::int64_t b = 0; b < n; ++b) {
      const auto remain = sched[static_cast<std::size_t>(b)][static_cast<std::size_t>(t)];
      const auto keep = o.length - remain;
      auto idx = order[b].slice(0, 0, keep);
      next[b].index_copy_(0, idx, cand[b].index_select(0, idx));
    }
    seq = next;
    if (trace) trace->push_back(seq.clone());
  }
  if ((seq == mask_id).any().item<bool>()) throw std::logic_error("sampling left MASK tokens");
  return seq;
}

Stage2Trainer::Stage2Trainer(const PipelineConfig& c, const Stage2Options& o) : config(c), options(o) {
  torch::manual_seed(derive_seed(c.seed, 19));
  model = MaskGit(o);
  opt = std::make_unique<torch::optim::Adam>(
      model->parameters(),
      torch::optim::AdamOptions(c.lr_stage2).betas({c.stage2_beta1, c.stage2_beta2}));
}

double Stage2Trainer::train_step(const torch::Tensor& sequences, const ConditionBatch& cond) {
  const auto k = options.codebook_size;
  if (sequences.dim() != 2 || sequences.size(1) != options.length) {
    throw std::invalid_argument("stage-2 batch must be [B, " + std::to_string(options.length) + "]");
  }
  if (sequences.max().item<std::int64_t>() >= k || sequences.min().item<std::int64_t>() < 0) {
    throw std::invalid_argument("token ids exceed the stage-1 codebook size " + std::to_string(k));
  }
  const auto step_seed = derive_seed(config.seed, 21, static_cast<std::uint64_t>(step));
  torch::manual_seed(derive_seed(step_seed, 1));  // dropout
  auto gen = make_generator(derive_seed(step_seed, 2));
  const auto b = sequences.size(0);
  auto r = torch::rand({b}, gen, torch::kFloat64);
  std::vector<torch::Tensor> masked, masks;
  for (std::int64_t i = 0; i < b; ++i) {
    const double ratio = std::cos(std::numbers::pi * r[i].item<double>() / 2.0);
    auto [m_seq, m] = mask_tokens(sequences[i], std::max(ratio, 1e-12), derive_seed(step_seed, 3, i),
                                  options.mask_id());
    masked.push_back(m_seq);
    masks.push_back(m);
  }
  model->train();
  auto logits = model(torch::stack(masked), cond);
  auto loss = masked_nll(logits, sequences, torch::stack(masks), config.label_smoothing);
  const double value = loss.item<double>();
  if (!std::isfinite(value)) throw std::runtime_error("non-finite stage-2 loss");
  opt->zero_grad();
  loss.backward();
  opt->step();
  ++step;
  return value;
}

void Stage2Trainer::fit(const torch::Tensor& data, const ConditionBatch& cond, std::int64_t steps,
                        const std::function<void(std::int64_t, double)>& on_step) {
  const auto n = data.size(0);
  if (n == 0) throw std::invalid_argument("stage-2 training needs at least one sequence");
  for (std::int64_t i = 0; i < steps; ++i) {
    auto gen = make_generator(derive_seed(config.seed, 23, static_cast<std::uint64_t>(step)));
    const auto bs = config.stage2_batch_size;
    auto idx = n >= bs ? torch::randperm(n, gen).slice(0, 0, bs) : torch::randint(n, {bs}, gen, torch::kInt64);
    const double loss = train_step(data.index_select(0, idx), cond.size() < 0 ? cond : cond.index(idx));
    if (on_step) on_step(step, loss);
  }
}

void Stage2Trainer::save(const std::filesystem::path& path) const {
  Checkpoint ck;
  ck.set_config(config);
  ck.header["stage"] = "stage2";
  ck.header["step"] = step;
  ck.header["condition"] = options.condition.to_json();
  ck.header["metadata"] = metadata;
  ck.put_module("model.", *model);
  ck.put_adam("opt.", *opt);
  save_checkpoint(ck, path);
}

Stage2Trainer Stage2Trainer::load(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  if (ck.header.value("stage", "") != "stage2") throw std::runtime_error(path.string() + " is not a stage-2 checkpoint");
  auto config = ck.config();
  auto cond = Stage2Condition::from_json(ck.header.at("condition"));
  Stage2Trainer t(config, Stage2Options::from_config(config, cond));
  ck.load_module("model.", *t.model);
  ck.load_adam("opt.", *t.opt);
  t.step = ck.header.at("step").get<std::int64_t>();
  t.metadata = ck.header.value("metadata", nlohmann::json::object());
  return t;
}

nlohmann::json stage2_metadata(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  return ck.header.value("metadata", nlohmann::json::object());
}

std::pair<MaskGit, PipelineConfig> load_stage2_model(const std::filesystem::path& path) {
  auto ck = load_checkpoint(path);
  if (ck.header.value("stage", "") != "stage2") throw std::runtime_error(path.string() + " is not a stage-2 checkpoint");
  auto config = ck.config();
  auto cond = Stage2Condition::from_json(ck.header.at("condition"));
  MaskGit m(Stage2Options::from_config(config, cond));
  ck.load_module("model.", *m);
  m->eval();
  for (auto& p : m->parameters()) p.set_requires_grad(false);
  return {m, config};
}

}  // namespace gina
