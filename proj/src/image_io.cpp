#include "gina/image_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

namespace gina::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume little endian");

namespace {

const std::vector<int> kPngParams{cv::IMWRITE_PNG_COMPRESSION, 3};

torch::Tensor to_bytes(const torch::Tensor& t) {
  return (t.detach().to(torch::kFloat32).clamp(0.0, 1.0) * 255.0).round().to(torch::kUInt8).contiguous();
}

}  // namespace

void write_rgb_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 3 || image.size(2) != 3) {
    throw std::invalid_argument("write_rgb_png expects [H, W, 3]");
  }
  auto bytes = to_bytes(image);
  cv::Mat rgb(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC3,
              bytes.data_ptr<std::uint8_t>());
  cv::Mat bgr;
  cv::cvtColor(rgb, bgr, cv::COLOR_RGB2BGR);
  if (!cv::imwrite(path.string(), bgr, kPngParams)) {
    throw std::runtime_error("failed to write " + path.string());
  }
}

torch::Tensor read_rgb_png(const std::filesystem::path& path) {
  cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty()) throw std::runtime_error("failed to read " + path.string());
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  auto t = torch::from_blob(rgb.data, {rgb.rows, rgb.cols, 3}, torch::kUInt8).clone();
  return t.to(torch::kFloat32) / 255.0;
}

void write_gray_png(const std::filesystem::path& path, const torch::Tensor& image) {
  if (image.dim() != 2) throw std::invalid_argument("write_gray_png expects [H, W]");
  auto bytes = to_bytes(image);
  cv::Mat gray(static_cast<int>(bytes.size(0)), static_cast<int>(bytes.size(1)), CV_8UC1,
               bytes.data_ptr<std::uint8_t>());
  if (!cv::imwrite(path.string(), gray, kPngParams)) {
    throw std::runtime_error("failed to write " + path.string());
  }
}

torch::Tensor read_gray_png(const std::filesystem::path& path) {
  cv::Mat gray = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
  if (gray.empty()) throw std::runtime_error("failed to read " + path.string());
  auto t = torch::from_blob(gray.data, {gray.rows, gray.cols}, torch::kUInt8).clone();
  return t.to(torch::kFloat32) / 255.0;
}

torch::Tensor read_mask_png(const std::filesystem::path& path) {
  return read_gray_png(path) >= 0.5;
}

void write_float_grid(const std::filesystem::path& path, const torch::Tensor& values,
                      std::int32_t dim0, std::int32_t dim1) {
  auto flat = values.detach().to(torch::kFloat32).contiguous().view(-1);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("failed to open " + path.string());
  out.write(reinterpret_cast<const char*>(&dim0), sizeof(dim0));
  out.write(reinterpret_cast<const char*>(&dim1), sizeof(dim1));
  out.write(reinterpret_cast<const char*>(flat.data_ptr<float>()),
            static_cast<std::streamsize>(flat.numel() * sizeof(float)));
  if (!out) throw std::runtime_error("failed to write " + path.string());
}

std::tuple<torch::Tensor, std::int32_t, std::int32_t> read_float_grid(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw std::runtime_error("failed to open " + path.string());
  const auto size = static_cast<std::int64_t>(in.tellg());
  in.seekg(0);
  std::int32_t d0 = 0, d1 = 0;
  in.read(reinterpret_cast<char*>(&d0), sizeof(d0));
  in.read(reinterpret_cast<char*>(&d1), sizeof(d1));
  if (!in || d0 < 0 || d1 < 0) throw std::runtime_error("truncated header in " + path.string());
  const std::int64_t payload = size - 8;
  if (payload % 4 != 0 || (d0 * std::int64_t{d1} > 0 && payload / 4 % (d0 * std::int64_t{d1}) != 0)) {
    throw std::runtime_error("payload size does not match header in " + path.string());
  }
  auto t = torch::empty({payload / 4}, torch::kFloat32);
  in.read(reinterpret_cast<char*>(t.data_ptr<float>()), payload);
  if (!in) throw std::runtime_error("truncated payload in " + path.string());
  return {t, d0, d1};
}

torch::Tensor area_resize(const torch::Tensor& img, std::int64_t r) {
  if (img.size(0) == r && img.size(1) == r) return img;
  namespace F = torch::nn::functional;
  auto x = img.permute({2, 0, 1}).unsqueeze(0);
  auto y = F::interpolate(x, F::InterpolateFuncOptions()
                                 .size(std::vector<std::int64_t>{r, r})
                                 .mode(torch::kArea));
  return y.squeeze(0).permute({1, 2, 0}).contiguous();
}

}  // namespace gina::io
