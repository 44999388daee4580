#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "gina/types.hpp"

namespace gina {

struct RejectedSample {
  std::string id;
  std::string reason;
};

struct Dataset {
  std::vector<ObjectSample> samples;
  std::vector<RejectedSample> rejected;
  nlohmann::json metadata = nlohmann::json::object();
};

/// Reads `dir/manifest.json` and every listed sample folder, in manifest order.
/// A missing manifest throws; samples that fail validation are skipped and
/// reported in `rejected`.
Dataset load_dataset(const std::filesystem::path& dir);

/// Writes the manifest plus one `NNNNNN/` folder per sample. Sample ids must be unique.
void save_dataset(const std::vector<ObjectSample>& samples, const std::filesystem::path& dir,
                  const nlohmann::json& metadata = nlohmann::json::object());

/// Writes a single sample folder (image.png, mask.png, skyroad.png, meta.json, *.bin).
void write_sample(const ObjectSample& sample, const std::filesystem::path& folder);
ObjectSample read_sample(const std::filesystem::path& folder, const std::string& id);

/// Zero-padded six digit folder name.
std::string sample_folder_name(std::size_t index);

}  // namespace gina
