#include "gina/dataset.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <stdexcept>

#include "gina/image_io.hpp"

namespace fs = std::filesystem;

namespace gina {

namespace {

constexpr int kManifestVersion = 1;

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return nlohmann::json::parse(in);
}

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace

std::string sample_folder_name(std::size_t index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%06zu", index);
  return buf;
}

void write_sample(const ObjectSample& sample, const fs::path& folder) {
  fs::create_directories(folder);
  io::write_rgb_png(folder / "image.png", sample.image);
  io::write_gray_png(folder / "mask.png", sample.object_mask);
  io::write_gray_png(folder / "skyroad.png", sample.skyroad_mask);
  nlohmann::json meta{{"id", sample.id},
                      {"camera", sample.camera.to_json()},
                      {"scale", sample.scale},
                      {"class_label", sample.class_label},
                      {"time_of_day", sample.time_of_day},
                      {"extra", sample.extra}};
  write_json(folder / "meta.json", meta);
  const auto h = static_cast<std::int32_t>(sample.height());
  const auto w = static_cast<std::int32_t>(sample.width());
  if (sample.depth) {
    // Invalid pixels are stored as 0; validity is recovered as depth > 0.
    auto d = torch::where(*sample.depth_valid, *sample.depth, torch::zeros_like(*sample.depth));
    io::write_float_grid(folder / "depth.bin", d, h, w);
  }
  if (sample.semantic) {
    io::write_float_grid(folder / "semantic.bin", *sample.semantic, h, w);
  }
}

ObjectSample read_sample(const fs::path& folder, const std::string& id) {
  ObjectSample s;
  s.id = id;
  const auto meta = read_json(folder / "meta.json");
  s.camera = Camera::from_json(meta.at("camera"));
  meta.at("scale").get_to(s.scale);
  s.class_label = meta.value("class_label", std::int64_t{0});
  s.time_of_day = meta.value("time_of_day", std::int64_t{0});
  s.extra = meta.value("extra", nlohmann::json::object());
  s.image = io::read_rgb_png(folder / "image.png");
  s.object_mask = io::read_mask_png(folder / "mask.png");
  s.skyroad_mask = io::read_mask_png(folder / "skyroad.png");
  const auto h = s.image.size(0);
  const auto w = s.image.size(1);
  if (fs::exists(folder / "depth.bin")) {
    auto [flat, d0, d1] = io::read_float_grid(folder / "depth.bin");
    if (d0 != h || d1 != w || flat.numel() != h * w) {
      throw std::invalid_argument("sample '" + id + "': depth shape does not match image");
    }
    auto d = flat.view({h, w});
    s.depth_valid = (d > 0) & torch::isfinite(d);
    s.depth = d;
  }
  if (fs::exists(folder / "semantic.bin")) {
    auto [flat, d0, d1] = io::read_float_grid(folder / "semantic.bin");
    if (d0 != h || d1 != w || flat.numel() % (h * w) != 0) {
      throw std::invalid_argument("sample '" + id + "': semantic shape does not match image");
    }
    s.semantic = flat.view({h, w, flat.numel() / (h * w)});
  }
  return s;
}

Dataset load_dataset(const fs::path& dir) {
  const auto manifest_path = dir / "manifest.json";
  if (!fs::exists(manifest_path)) {
    throw std::runtime_error("missing manifest: " + manifest_path.string());
  }
  const auto manifest = read_json(manifest_path);
  Dataset ds;
  ds.metadata = manifest.value("metadata", nlohmann::json::object());
  for (const auto& entry : manifest.at("samples")) {
    const auto id = entry.get<std::string>();
    try {
      auto sample = read_sample(dir / id, id);
      sample.validate();
      ds.samples.push_back(std::move(sample));
    } catch (const std::exception& e) {
      ds.rejected.push_back({id, e.what()});
    }
  }
  return ds;
}

void save_dataset(const std::vector<ObjectSample>& samples, const fs::path& dir,
                  const nlohmann::json& metadata) {
  fs::create_directories(dir);
  std::set<std::string> seen;
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& s : samples) {
    if (!seen.insert(s.id).second) {
      throw std::invalid_argument("duplicate sample id '" + s.id + "'");
    }
    write_sample(s, dir / s.id);
    ids.push_back(s.id);
  }
  write_json(dir / "manifest.json",
             {{"version", kManifestVersion}, {"samples", ids}, {"metadata", metadata}});
}

}  // namespace gina
