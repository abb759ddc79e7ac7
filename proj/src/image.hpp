#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace mvs {

// RGB image, row-major, channels interleaved, values in [0,1].
struct Image {
  int width = 0;
  int height = 0;
  std::vector<float> rgb;

  Image() = default;
  Image(int w, int h) : width(w), height(h), rgb(static_cast<std::size_t>(w) * h * 3, 0.0f) {}

  float* pixel(int x, int y) { return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const float* pixel(int x, int y) const {
    return rgb.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  void fill(float r, float g, float b);
};

// Binary PPM (P6), 8-bit, round(v*255) quantization.
void write_ppm(const std::string& path, const Image& img);
std::vector<std::uint8_t> encode_ppm(const Image& img);
Image read_ppm(const std::string& path);

// max |a-b| over all channels, after 8-bit quantization of both
int max_byte_diff(const Image& a, const Image& b);

}  // namespace mvs
