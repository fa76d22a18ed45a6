#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "eve/numerics/tensor.hpp"

namespace eve::data {

class InputError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// 8-bit interleaved RGB raster.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> rgb;  // height * width * 3

  Image() = default;
  Image(std::size_t h, std::size_t w, std::uint8_t r = 0, std::uint8_t g = 0, std::uint8_t b = 0);

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) { return rgb[(y * width + x) * 3 + c]; }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return rgb[(y * width + x) * 3 + c];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

// Binary PPM (P6, maxval 255). Throws InputError on unreadable input.
Image read_ppm(const std::filesystem::path& path);
Image decode_ppm(const std::vector<std::uint8_t>& bytes);
void write_ppm(const std::filesystem::path& path, const Image& image);
std::vector<std::uint8_t> encode_ppm(const Image& image);

// Bilinear resample with half-pixel centres, then maps [0, 255] -> [-1, 1].
// Returns a 3 x out_h x out_w tensor.
num::Tensor<float> resize_to_tensor(const Image& image, std::size_t out_h, std::size_t out_w);

}  // namespace eve::data
