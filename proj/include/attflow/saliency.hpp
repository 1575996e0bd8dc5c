#pragma once

#include <cstddef>
#include <vector>

#include "attflow/box.hpp"
#include "attflow/image.hpp"

namespace attflow::saliency {

// Single-channel bottom-up saliency in [0,1], same size as the source image.
struct SaliencyMap {
  Image values;             // 1 channel
  bool degenerate = false;  // source had no contrast; values are all zero

  std::size_t width() const { return values.width; }
  std::size_t height() const { return values.height; }
  double at(std::size_t y, std::size_t x) const { return values.at(0, y, x); }
};

struct GaussianPyramid {
  std::vector<Image> levels;  // single-channel; level k is the source halved k times
};

// Level 0 is the 5-tap binomial smoothed source; level k+1 smooths level k and
// keeps every second sample. Requires min(h, w) >= 2^(levels-1).
GaussianPyramid build_pyramid(const Image& gray, std::size_t levels);

// Pyramid depth used by compute_saliency: 7 for inputs with a side of at least
// 128 px, otherwise the deepest pyramid the smaller side allows.
std::size_t default_levels(std::size_t height, std::size_t width);

// |level_c - resize(level_s -> size of level_c)|, evaluated at level c.
Image center_surround(const GaussianPyramid& pyr, std::size_t c, std::size_t s);

// Itti's N(.) operator: min-max rescale to [0,1], then multiply by
// (1 - m)^2 where m is the mean of the local maxima (>= 0.1, 8-neighbourhood,
// plateaus counted once) other than the global maximum. Uniform maps become zero.
Image normalize_iterative(const Image& map);

// Intensity, R-G / B-Y opponency and four oriented-derivative channels combined
// across scales c in {2,3,4}, s = c + {3,4} (pairs beyond the pyramid are
// skipped), summed as normalized conspicuity maps and resized to the source.
// Requires a 3-channel image of at least 32x32.
SaliencyMap compute_saliency(const Image& rgb);

// Mean of map values inside the box after clipping to the image.
double mean_in_box(const SaliencyMap& map, const BoundingBox& box);
double mean_value(const SaliencyMap& map);

}  // namespace attflow::saliency
