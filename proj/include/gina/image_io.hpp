#pragma once

#include <filesystem>

#include <torch/torch.h>

namespace gina::io {

/// [H, W, 3] float in [0, 1] <-> 8-bit lossless RGB PNG.
void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image);
torch::Tensor read_rgb_png(const std::filesystem::path& path);

/// [H, W] bool or float in [0, 1] <-> 8-bit gray PNG. Masks are written as 0/255.
void write_gray_png(const std::filesystem::path& path, const torch::Tensor& image);
torch::Tensor read_gray_png(const std::filesystem::path& path);
torch::Tensor read_mask_png(const std::filesystem::path& path);

/// [H, W, C] -> [R, R, C] by area averaging (identity at the same size).
torch::Tensor area_resize(const torch::Tensor& img, std::int64_t resolution);

/// Raw little-endian float32 payload preceded by two int32 dimensions.
void write_float_grid(const std::filesystem::path& path, const torch::Tensor& values,
                      std::int32_t dim0, std::int32_t dim1);
/// Returns the flat payload and the two header dimensions.
std::tuple<torch::Tensor, std::int32_t, std::int32_t> read_float_grid(
    const std::filesystem::path& path);

}  // namespace gina::io
