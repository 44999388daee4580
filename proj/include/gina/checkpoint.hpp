#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include <json.hpp>
#include <torch/torch.h>

#include "gina/config.hpp"

namespace gina {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Single-file container: magic `GINA`, format version, a JSON header and a
/// self-describing table of named tensors (name, dtype, shape, raw bytes).
struct Checkpoint {
  nlohmann::json header = nlohmann::json::object();
  std::map<std::string, torch::Tensor> tensors;

  void put(const std::string& name, const torch::Tensor& t);
  const torch::Tensor& get(const std::string& name) const;
  bool has(const std::string& name) const { return tensors.count(name) != 0; }

  void put_module(const std::string& prefix, const torch::nn::Module& module);
  /// Copies every parameter and buffer of `module` from the table; shapes must match.
  void load_module(const std::string& prefix, torch::nn::Module& module) const;

  void put_adam(const std::string& prefix, torch::optim::Adam& optimizer);
  void load_adam(const std::string& prefix, torch::optim::Adam& optimizer) const;

  void set_config(const PipelineConfig& config);
  PipelineConfig config() const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Throws on bad magic, version mismatch (both versions in the message) or truncation.
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Throws std::runtime_error naming every shape-relevant field that differs.
void check_config_compatible(const PipelineConfig& stored, const PipelineConfig& expected);

}  // namespace gina
