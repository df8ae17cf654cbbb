#pragma once

#include "splatlab/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

namespace splatlab {

/// Interleaved RGB float image, row-major.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<double> data;

  Image() = default;
  Image(int w, int h, double fill = 0.0)
      : width(w), height(h), data(static_cast<std::size_t>(w) * h * 3, fill) {}

  std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
  std::size_t index(int x, int y) const {
    return (static_cast<std::size_t>(y) * width + x) * 3;
  }
  double& at(int x, int y, int c) { return data[index(x, y) + c]; }
  double at(int x, int y, int c) const { return data[index(x, y) + c]; }

  bool same_shape(const Image& other) const {
    return width == other.width && height == other.height;
  }

  static Image constant(int w, int h, const Vec3& rgb) {
    Image img(w, h);
    for (std::size_t p = 0; p < img.pixel_count(); ++p) {
      for (int c = 0; c < 3; ++c) img.data[p * 3 + c] = rgb[c];
    }
    return img;
  }
};

/// Round-trips values through 8-bit storage (v -> round(255 v) / 255).
inline Image quantize8(const Image& img) {
  Image out = img;
  for (auto& v : out.data) {
    v = std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0;
  }
  return out;
}

inline std::vector<std::uint8_t> to_bytes(const Image& img) {
  std::vector<std::uint8_t> bytes(img.data.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) {
    bytes[i] = static_cast<std::uint8_t>(std::lround(std::clamp(img.data[i], 0.0, 1.0) * 255.0));
  }
  return bytes;
}

}  // namespace splatlab
