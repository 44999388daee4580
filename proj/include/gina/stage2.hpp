#pragma once

#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "gina/config.hpp"
#include "gina/nn.hpp"
#include "gina/types.hpp"

namespace gina {

/// Cells [..., 3, N_Z, N_Z] -> sequence [..., 3 N_Z^2]; position = plane N_Z^2 + i N_Z + j.
torch::Tensor flatten_tokens(const torch::Tensor& indices);

/// Inverse of flatten_tokens. Throws when any id is >= `codebook_size` (MASK or condition ids).
torch::Tensor unflatten_tokens(const torch::Tensor& seq, std::int64_t latent_grid,
                               std::int64_t codebook_size);

/// Sets ceil(ratio * L) uniformly chosen positions of each row of `seq` [B, L] (or [L])
/// to `mask_id`. Returns (masked sequence, bool mask of replaced positions).
std::pair<torch::Tensor, torch::Tensor> mask_tokens(const torch::Tensor& seq, double ratio,
                                                    std::uint64_t seed, std::int64_t mask_id);

/// Tokens still masked after each of the T decoding steps, starting from `masked`
/// unknowns: counts[0] = masked, counts[T] = 0, derived from cos(pi t / 2T) and
/// strictly decreasing whenever masked >= T.
std::vector<std::int64_t> schedule_counts(std::int64_t masked, std::int64_t steps);

/// Label-smoothed cross entropy averaged over positions where `mask` is true.
/// logits [B, L, K], targets [B, L], mask [B, L].
torch::Tensor masked_nll(const torch::Tensor& logits, const torch::Tensor& targets,
                         const torch::Tensor& mask, double label_smoothing);

/// 3 axes x 6 degrees x (sin, cos) of 2^d * pi * s / extent.
std::vector<double> scale_encoding(const Vec3& scale, double extent);

/// What the stage-2 prior is conditioned on.
struct Stage2Condition {
  std::string name = "none";  // none, class, time, scale, semantic
  ConditionKind kind = ConditionKind::none;
  std::int64_t num_classes = 0;     // discrete
  std::int64_t continuous_dim = 0;  // continuous

  static Stage2Condition from_name(const std::string& name);
  nlohmann::json to_json() const;
  static Stage2Condition from_json(const nlohmann::json& j);
};

/// Per-example conditioning payload for a batch.
struct ConditionBatch {
  torch::Tensor classes;     // [B] int64 or undefined
  torch::Tensor continuous;  // [B, D] float or undefined

  std::int64_t size() const;
  ConditionBatch index(const torch::Tensor& idx) const;
  ConditionBatch repeat(std::int64_t n) const;
};

/// Payload of one ConditionSpec for a model conditioned on `cond`; validates ranges.
ConditionBatch encode_condition(const ConditionSpec& spec, const Stage2Condition& cond);

/// The condition a dataset sample carries under `cond` (class label, time of day,
/// scale encoding or image embedding).
ConditionSpec condition_for_sample(const ObjectSample& sample, const Stage2Condition& cond,
                                   const PipelineConfig& config);

struct Stage2Options {
  std::int64_t codebook_size = 512;
  std::int64_t length = 192;
  std::int64_t width = 128;
  std::int64_t hidden = 512;
  std::int64_t heads = 8;
  std::int64_t layers = 4;
  double dropout = 0.1;
  Stage2Condition condition;

  static Stage2Options from_config(const PipelineConfig& c, const Stage2Condition& cond);
  std::int64_t mask_id() const { return codebook_size; }
  std::int64_t vocab_size() const {
    return codebook_size + 1 + (condition.kind == ConditionKind::discrete ? condition.num_classes : 0);
  }
};

/// Bidirectional masked-token transformer. Discrete conditions append one token
/// with id K + 1 + class; continuous ones are projected and concatenated to every
/// token embedding.
struct MaskGitImpl : torch::nn::Module {
  explicit MaskGitImpl(const Stage2Options& options);

  /// tokens [B, L] in [0, K] -> logits [B, L, K]
  torch::Tensor forward(const torch::Tensor& tokens, const ConditionBatch& cond);

  /// The full input sequence fed to the transformer (with the appended class token).
  torch::Tensor input_sequence(const torch::Tensor& tokens, const ConditionBatch& cond) const;

  Stage2Options options;
  torch::nn::Embedding token_embedding{nullptr};
  torch::Tensor pos;
  torch::nn::Linear cond_fc{nullptr};
  torch::nn::Linear cond_merge{nullptr};
  torch::nn::ModuleList blocks;
  torch::nn::LayerNorm norm{nullptr};
  torch::nn::Linear head{nullptr};
};
TORCH_MODULE(MaskGit);

struct SamplingPolicy {
  std::int64_t steps = 8;
  double token_temperature = 1.0;  // softmax temperature for candidate tokens
  double gumbel_start = 1.0;       // confidence noise scale, annealed linearly to 0
};

/// Iterative confidence decoding. Starts from `initial` [B, L] (MASK where unknown)
/// or all-MASK rows; returns [B, L] with no MASK. Known tokens are never changed.
torch::Tensor maskgit_sample(MaskGit& model, std::int64_t n, const ConditionBatch& cond,
                             const SamplingPolicy& policy, std::uint64_t seed,
                             const std::optional<torch::Tensor>& initial = std::nullopt,
                             std::vector<torch::Tensor>* trace = nullptr);

class Stage2Trainer {
 public:
  Stage2Trainer(const PipelineConfig& config, const Stage2Options& options);

  /// One masked-NLL update on sequences [B, L]. Returns the loss.
  double train_step(const torch::Tensor& sequences, const ConditionBatch& cond);

  /// `steps` updates on random mini-batches of `data` [N, L].
  void fit(const torch::Tensor& data, const ConditionBatch& cond, std::int64_t steps,
           const std::function<void(std::int64_t, double)>& on_step = {});

  void save(const std::filesystem::path& path) const;
  static Stage2Trainer load(const std::filesystem::path& path);

  PipelineConfig config;
  Stage2Options options;
  MaskGit model{nullptr};
  std::unique_ptr<torch::optim::Adam> opt;
  std::int64_t step = 0;
  /// Free-form data stored alongside the weights (training scale statistics, data source).
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json stage2_metadata(const std::filesystem::path& path);

/// Trained stage-2 model from a checkpoint, in eval mode.
std::pair<MaskGit, PipelineConfig> load_stage2_model(const std::filesystem::path& path);

}  // namespace gina
