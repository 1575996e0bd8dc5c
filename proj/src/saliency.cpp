#include "attflow/saliency.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "attflow/errors.hpp"
#include "attflow/kernels/resample.hpp"

namespace attflow::saliency {

namespace {

constexpr std::size_t kOutputLevel = 2;
constexpr double kLocalMaxFloor = 0.1;

Image resized(const Image& map, std::size_t h, std::size_t w) {
  if (map.height == h && map.width == w) return map;
  Image out(map.channels, h, w);
  kernels::resize_bilinear(map.pixels, map.channels, map.height, map.width, h, w, out.pixels);
  return out;
}

void add_into(Image& acc, const Image& term) {
  for (std::size_t i = 0; i < acc.pixels.size(); ++i) acc.pixels[i] += term.pixels[i];
}

Image blurred(const Image& src) {
  Image out(1, src.height, src.width);
  kernels::binomial_blur(src.pixels, 1, src.height, src.width, out.pixels);
  return out;
}

// |derivative| along one of four directions, replicated borders.
Image oriented_response(const Image& level, int orientation) {
  static constexpr std::array<std::array<int, 2>, 4> kStep{{{1, 0}, {1, -1}, {0, 1}, {1, 1}}};
  const auto [dx, dy] = kStep[std::size_t(orientation)];
  const auto H = std::ptrdiff_t(level.height), W = std::ptrdiff_t(level.width);
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) {
    y = std::clamp<std::ptrdiff_t>(y, 0, H - 1);
    x = std::clamp<std::ptrdiff_t>(x, 0, W - 1);
    return level.at(0, std::size_t(y), std::size_t(x));
  };
  Image out(1, level.height, level.width);
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x)
      out.at(0, std::size_t(y), std::size_t(x)) = 0.5 * std::abs(px(y + dy, x + dx) - px(y - dy, x - dx));
  return out;
}

std::vector<std::pair<std::size_t, std::size_t>> scale_pairs(std::size_t levels) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t c = 2; c <= 4; ++c)
    for (std::size_t delta = 3; delta <= 4; ++delta)
      if (c + delta < levels) pairs.emplace_back(c, c + delta);
  return pairs;
}

// N(.)-normalized center-surround maps summed at the output level.
Image across_scale_sum(const GaussianPyramid& pyr,
                       const std::vector<std::pair<std::size_t, std::size_t>>& pairs) {
  const Image& out_level = pyr.levels[kOutputLevel];
  Image acc(1, out_level.height, out_level.width);
  for (const auto& [c, s] : pairs) {
    add_into(acc, resized(normalize_iterative(center_surround(pyr, c, s)), out_level.height,
                          out_level.width));
  }
  return acc;
}

}  // namespace

GaussianPyramid build_pyramid(const Image& gray, std::size_t levels) {
  if (gray.channels != 1) throw ParameterError("build_pyramid: expected a single-channel image");
  if (levels < 1) throw ParameterError("build_pyramid: levels must be >= 1");
  const std::size_t need = std::size_t{1} << (levels - 1);
  if (gray.height < need || gray.width < need) {
    throw ParameterError("build_pyramid: image " + std::to_string(gray.height) + "x" +
                         std::to_string(gray.width) + " too small for " + std::to_string(levels) +
                         " levels");
  }
  GaussianPyramid pyr;
  pyr.levels.push_back(blurred(gray));
  for (std::size_t k = 1; k < levels; ++k) {
    const Image smooth = blurred(pyr.levels.back());
    Image next(1, std::max<std::size_t>(1, smooth.height / 2), std::max<std::size_t>(1, smooth.width / 2));
    kernels::decimate2(smooth.pixels, 1, smooth.height, smooth.width, next.pixels);
    pyr.levels.push_back(std::move(next));
  }
  return pyr;
}

std::size_t default_levels(std::size_t height, std::size_t width) {
  const std::size_t side = std::min(height, width);
  std::size_t levels = 1;
  while (levels < 7 && (std::size_t{1} << levels) <= side) ++levels;
  return levels;
}

Image center_surround(const GaussianPyramid& pyr, std::size_t c, std::size_t s) {
  if (s <= c || s >= pyr.levels.size()) {
    throw ParameterError("center_surround: need c < s < " + std::to_string(pyr.levels.size()) +
                         ", got c=" + std::to_string(c) + " s=" + std::to_string(s));
  }
  const Image& center = pyr.levels[c];
  const Image surround = resized(pyr.levels[s], center.height, center.width);
  Image out(1, center.height, center.width);
  for (std::size_t i = 0; i < out.pixels.size(); ++i)
    out.pixels[i] = std::abs(center.pixels[i] - surround.pixels[i]);
  return out;
}

Image normalize_iterative(const Image& map) {
  Image out = map;
  if (map.pixels.empty()) return out;
  const auto [mn_it, mx_it] = std::minmax_element(map.pixels.begin(), map.pixels.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx - mn > 1e-12 * std::max(1.0, std::abs(mx)))) {
    std::fill(out.pixels.begin(), out.pixels.end(), 0.0);
    return out;
  }
  for (auto& v : out.pixels) v = (v - mn) / (mx - mn);

  const auto H = std::ptrdiff_t(out.height), W = std::ptrdiff_t(out.width);
  const auto global = std::size_t(std::distance(out.pixels.begin(),
                                                 std::max_element(out.pixels.begin(), out.pixels.end())));
  double sum = 0.0;
  std::size_t count = 0;
  for (std::ptrdiff_t y = 0; y < H; ++y)
    for (std::ptrdiff_t x = 0; x < W; ++x) {
      const std::size_t idx = std::size_t(y * W + x);
      const double v = out.pixels[idx];
      if (v < kLocalMaxFloor || idx == global) continue;
      bool is_max = true;
      for (std::ptrdiff_t dy = -1; dy <= 1 && is_max; ++dy)
        for (std::ptrdiff_t dx = -1; dx <= 1; ++dx) {
          if (!dy && !dx) continue;
          const std::ptrdiff_t ny = y + dy, nx = x + dx;
          if (ny < 0 || nx < 0 || ny >= H || nx >= W) continue;
          const double nv = out.pixels[std::size_t(ny * W + nx)];
          // Earlier neighbours (row-major) must be strictly lower so a plateau counts once.
          const bool earlier = ny < y || (ny == y && nx < x);
          if (nv > v || (earlier && nv == v)) {
            is_max = false;
            break;
          }
        }
      if (is_max) {
        sum += v;
        ++count;
      }
    }
  const double mean_other = count ? sum / double(count) : 0.0;
  const double factor = (1.0 - mean_other) * (1.0 - mean_other);
  for (auto& v : out.pixels) v *= factor;
  return out;
}

SaliencyMap compute_saliency(const Image& rgb) {
  if (rgb.channels != 3) throw ParameterError("compute_saliency: expected a 3-channel image");
  if (rgb.height < 32 || rgb.width < 32) {
    throw ParameterError("compute_saliency: image must be at least 32x32");
  }
  const std::size_t H = rgb.height, W = rgb.width, N = H * W;
  const auto r = rgb.plane(0), g = rgb.plane(1), b = rgb.plane(2);

  Image intensity(1, H, W), rg(1, H, W), by(1, H, W);
  double max_i = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    intensity.pixels[i] = (r[i] + g[i] + b[i]) / 3.0;
    max_i = std::max(max_i, intensity.pixels[i]);
  }
  for (std::size_t i = 0; i < N; ++i) {
    const double I = intensity.pixels[i];
    if (I <= 0.1 * max_i || I <= 0.0) continue;  // hue is unreliable at low luminance
    const double rn = r[i] / I, gn = g[i] / I, bn = b[i] / I;
    const double R = rn - (gn + bn) / 2, G = gn - (rn + bn) / 2, B = bn - (rn + gn) / 2;
    const double Y = (rn + gn) / 2 - std::abs(rn - gn) / 2 - bn;
    rg.pixels[i] = R - G;
    by.pixels[i] = B - Y;
  }

  const std::size_t levels = default_levels(H, W);
  const auto pairs = scale_pairs(levels);
  const GaussianPyramid pyr_i = build_pyramid(intensity, levels);
  const GaussianPyramid pyr_rg = build_pyramid(rg, levels);
  const GaussianPyramid pyr_by = build_pyramid(by, levels);

  const Image intensity_consp = normalize_iterative(across_scale_sum(pyr_i, pairs));

  Image color_sum = across_scale_sum(pyr_rg, pairs);
  add_into(color_sum, across_scale_sum(pyr_by, pairs));
  const Image color_consp = normalize_iterative(color_sum);

  const Image& out_level = pyr_i.levels[kOutputLevel];
  Image orient_sum(1, out_level.height, out_level.width);
  for (int theta = 0; theta < 4; ++theta) {
    GaussianPyramid pyr_o;
    for (const auto& level : pyr_i.levels) pyr_o.levels.push_back(oriented_response(level, theta));
    add_into(orient_sum, normalize_iterative(across_scale_sum(pyr_o, pairs)));
  }
  const Image orient_consp = normalize_iterative(orient_sum);

  Image combined(1, out_level.height, out_level.width);
  for (std::size_t i = 0; i < combined.pixels.size(); ++i)
    combined.pixels[i] =
        (intensity_consp.pixels[i] + color_consp.pixels[i] + orient_consp.pixels[i]) / 3.0;

  SaliencyMap result;
  result.values = resized(combined, H, W);
  const auto [mn_it, mx_it] = std::minmax_element(result.values.pixels.begin(), result.values.pixels.end());
  const double mn = *mn_it, mx = *mx_it;
  if (!(mx - mn > 1e-12)) {
    std::fill(result.values.pixels.begin(), result.values.pixels.end(), 0.0);
    result.degenerate = true;
  } else {
    for (auto& v : result.values.pixels) v = (v - mn) / (mx - mn);
  }
  return result;
}

double mean_in_box(const SaliencyMap& map, const BoundingBox& box) {
  const auto clip = box.clipped(int(map.width()), int(map.height()));
  if (!clip) throw ParameterError("mean_in_box: box does not intersect the map");
  double acc = 0.0;
  for (int y = clip->y; y < clip->y + clip->h; ++y)
    for (int x = clip->x; x < clip->x + clip->w; ++x) acc += map.at(std::size_t(y), std::size_t(x));
  return acc / double(clip->area());
}

double mean_value(const SaliencyMap& map) {
  double acc = 0.0;
  for (double v : map.values.pixels) acc += v;
  return map.values.pixels.empty() ? 0.0 : acc / double(map.values.pixels.size());
}

}  // namespace attflow::saliency
