#pragma once

#include <string>
#include <vector>

#include "vpl/common.hpp"

namespace vpl {

// 8-bit image, row-major, channels interleaved (1 = gray, 3 = RGB, 4 = RGBA).
struct ImageU8 {
  int width = 0, height = 0, channels = 0;
  std::vector<unsigned char> pixels;

  ImageU8() = default;
  ImageU8(int w, int h, int c)
      : width(w), height(h), channels(c), pixels(std::size_t(w) * h * c, 0) {}

  unsigned char& at(int x, int y, int c) {
    return pixels[(std::size_t(y) * width + x) * channels + c];
  }
  unsigned char at(int x, int y, int c) const {
    return pixels[(std::size_t(y) * width + x) * channels + c];
  }
};

void write_png(const std::string& path, const ImageU8& img);
ImageU8 read_png(const std::string& path);

inline unsigned char to_u8(double v) {
  double c = v < 0 ? 0 : (v > 1 ? 1 : v);
  return (unsigned char)(c * 255.0 + 0.5);
}
inline double from_u8(unsigned char v) { return double(v) / 255.0; }

}  // namespace vpl
