#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cgiqa/tensor.hpp"

namespace cgiqa {

// 8-bit interleaved RGB raster.
struct Image {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> rgb;

  Image() = default;
  Image(std::size_t w, std::size_t h) : width(w), height(h), rgb(w * h * 3, 0) {}

  std::uint8_t* pixel(std::size_t x, std::size_t y) { return &rgb[(y * width + x) * 3]; }
  const std::uint8_t* pixel(std::size_t x, std::size_t y) const {
    return &rgb[(y * width + x) * 3];
  }
  bool operator==(const Image&) const = default;
};

// Dispatches on the file extension: .png, .jpg/.jpeg, .ppm.
Image load_image(const std::filesystem::path& path);
void save_image(const std::filesystem::path& path, const Image& image);
// MIME type for the supported extensions, empty when unknown.
std::string image_content_type(const std::filesystem::path& path);

Image decode_ppm(const std::string& bytes);
std::string encode_ppm(const Image& image);

// [3, H, W] tensor with values in [0, 1].
Tensor image_to_tensor(const Image& image);
// Bilinear resize of a [3, H, W] tensor (half-pixel centres, edge clamp).
Tensor resize_bilinear(const Tensor& chw, std::size_t out_h, std::size_t out_w);
Tensor crop(const Tensor& chw, std::size_t top, std::size_t left, std::size_t size);
Tensor center_crop(const Tensor& chw, std::size_t size);

// Separable Gaussian blur with replicated borders; sigma <= 0 is a copy.
Image gaussian_blur(const Image& image, double sigma);
// 3x3 box filter with replicated borders.
Image box_filter3(const Image& image);
Image flip_horizontal(const Image& image);

}  // namespace cgiqa
