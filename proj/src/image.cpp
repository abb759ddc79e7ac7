#include "image.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace mvs {

void Image::fill(float r, float g, float b) {
  for (std::size_t i = 0; i < rgb.size(); i += 3) {
    rgb[i] = r;
    rgb[i + 1] = g;
    rgb[i + 2] = b;
  }
}

static std::uint8_t quantize(float v) {
  v = std::clamp(v, 0.0f, 1.0f);
  return static_cast<std::uint8_t>(std::lround(v * 255.0f));
}

std::vector<std::uint8_t> encode_ppm(const Image& img) {
  char header[64];
  int n = std::snprintf(header, sizeof(header), "P6\n%d %d\n255\n", img.width, img.height);
  std::vector<std::uint8_t> out;
  out.reserve(static_cast<std::size_t>(n) + img.rgb.size());
  out.insert(out.end(), header, header + n);
  for (float v : img.rgb) out.push_back(quantize(v));
  return out;
}

void write_ppm(const std::string& path, const Image& img) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("ppm: cannot open for write: " + path);
  auto bytes = encode_ppm(img);
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw std::runtime_error("ppm: write failed: " + path);
}

Image read_ppm(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("ppm: cannot open: " + path);
  std::string magic;
  is >> magic;
  if (magic != "P6") throw std::runtime_error("ppm: not a P6 file: " + path);
  int w = 0, h = 0, maxval = 0;
  is >> w >> h >> maxval;
  if (!is || w <= 0 || h <= 0 || maxval != 255)
    throw std::runtime_error("ppm: bad header in " + path);
  is.get();  // single whitespace after maxval
  Image img(w, h);
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(w) * h * 3);
  is.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!is) throw std::runtime_error("ppm: truncated pixel data in " + path);
  for (std::size_t i = 0; i < buf.size(); ++i) img.rgb[i] = static_cast<float>(buf[i]) / 255.0f;
  return img;
}

int max_byte_diff(const Image& a, const Image& b) {
  if (a.width != b.width || a.height != b.height)
    throw std::invalid_argument("max_byte_diff: size mismatch");
  int worst = 0;
  for (std::size_t i = 0; i < a.rgb.size(); ++i) {
    int d = std::abs(int(quantize(a.rgb[i])) - int(quantize(b.rgb[i])));
    worst = std::max(worst, d);
  }
  return worst;
}

}  // namespace mvs
