#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

namespace attflow {

// Planar (channel-major) image of doubles. Pixel values are nominally in [0,1].
struct Image {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t c, std::size_t h, std::size_t w, double fill = 0.0)
      : channels(c), height(h), width(w), pixels(c * h * w, fill) {}

  double& at(std::size_t c, std::size_t y, std::size_t x) { return pixels[(c * height + y) * width + x]; }
  double at(std::size_t c, std::size_t y, std::size_t x) const {
    return pixels[(c * height + y) * width + x];
  }
  std::span<double> plane(std::size_t c) { return {pixels.data() + c * height * width, height * width}; }
  std::span<const double> plane(std::size_t c) const {
    return {pixels.data() + c * height * width, height * width};
  }
  bool empty() const { return pixels.empty(); }
  bool operator==(const Image&) const = default;
};

struct Point {
  double x = 0.0, y = 0.0;
  bool operator==(const Point&) const = default;
};

// Binary PNM (P5 grayscale / P6 RGB, maxval 255). Writing maps [0,1] to
// round(clamp(v,0,1)*255); reading maps byte b to b/255.
void write_pgm(const std::filesystem::path& path, const Image& gray, std::size_t channel = 0);
void write_ppm(const std::filesystem::path& path, const Image& rgb);
Image read_pnm(const std::filesystem::path& path);

// Quantizes values onto the 8-bit grid used by the PNM writers.
void quantize_8bit(Image& img);

}  // namespace attflow
