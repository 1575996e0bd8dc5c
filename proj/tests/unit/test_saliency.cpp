#include <cmath>
#include <random>

#include "attflow/errors.hpp"
#include "attflow/saliency.hpp"
#include "doctest.h"

using namespace attflow;
using namespace attflow::saliency;

namespace {

// Direct 5-tap [1 4 6 4 1]/16 filter with replicated borders, rows then columns.
Image blur_oracle(const Image& src) {
  const double k[5] = {1 / 16.0, 4 / 16.0, 6 / 16.0, 4 / 16.0, 1 / 16.0};
  const long H = long(src.height), W = long(src.width);
  auto clampi = [](long v, long n) { return std::clamp(v, 0L, n - 1); };
  Image tmp(1, src.height, src.width), out(1, src.height, src.width);
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long t = -2; t <= 2; ++t) s += k[t + 2] * src.at(0, y, clampi(x + t, W));
      tmp.at(0, y, x) = s;
    }
  for (long y = 0; y < H; ++y)
    for (long x = 0; x < W; ++x) {
      double s = 0.0;
      for (long t = -2; t <= 2; ++t) s += k[t + 2] * tmp.at(0, clampi(y + t, H), x);
      out.at(0, y, x) = s;
    }
  return out;
}

double max_abs_diff(const Image& a, const Image& b) {
  REQUIRE(a.pixels.size() == b.pixels.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

Image rgb_fill(std::size_t h, std::size_t w, double r, double g, double b) {
  Image img(3, h, w);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
  return img;
}

void paint_disk(Image& img, double cx, double cy, double radius, double v) {
  for (std::size_t y = 0; y < img.height; ++y)
    for (std::size_t x = 0; x < img.width; ++x)
      if (std::hypot(double(x) - cx, double(y) - cy) <= radius)
        for (std::size_t c = 0; c < img.channels; ++c) img.at(c, y, x) = v;
}

void paint_square(Image& img, int x0, int y0, int side, double r, double g, double b) {
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) {
      img.at(0, y, x) = r;
      img.at(1, y, x) = g;
      img.at(2, y, x) = b;
    }
}

Point argmax_of(const SaliencyMap& m) {
  const auto it = std::max_element(m.values.pixels.begin(), m.values.pixels.end());
  const auto i = std::size_t(std::distance(m.values.pixels.begin(), it));
  return {double(i % m.width()), double(i / m.width())};
}

}  // namespace

TEST_CASE("pyramid of a constant image is constant") {
  const Image c(1, 64, 96, 0.37);
  const auto pyr = build_pyramid(c, 5);
  REQUIRE(pyr.levels.size() == 5);
  for (std::size_t k = 0; k < 5; ++k) {
    CHECK(pyr.levels[k].height == 64 >> k);
    CHECK(pyr.levels[k].width == 96 >> k);
    for (double v : pyr.levels[k].pixels) CHECK(std::abs(v - 0.37) <= 1e-15);
  }
}

TEST_CASE("single-level pyramid is the smoothed source") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(0, 1);
  Image src(1, 13, 17);
  for (auto& v : src.pixels) v = u(rng);
  const auto pyr = build_pyramid(src, 1);
  REQUIRE(pyr.levels.size() == 1);
  CHECK(max_abs_diff(pyr.levels[0], blur_oracle(src)) <= 1e-15);
}

TEST_CASE("impulse response of pyramid level 1") {
  Image src(1, 16, 16);
  src.at(0, 7, 9) = 1.0;
  const auto pyr = build_pyramid(src, 2);
  const Image twice = blur_oracle(blur_oracle(src));
  Image expect(1, 8, 8);
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) expect.at(0, y, x) = twice.at(0, 2 * y, 2 * x);
  CHECK(max_abs_diff(pyr.levels[1], expect) <= 1e-15);
  CHECK_THROWS_AS(build_pyramid(Image(1, 7, 64), 4), ParameterError);
}

TEST_CASE("center_surround") {
  const auto flat = build_pyramid(Image(1, 64, 64, 0.5), 7);
  for (double v : center_surround(flat, 2, 5).pixels) CHECK(v <= 1e-15);

  Image disk(1, 64, 64);
  paint_disk(disk, 32, 32, 6, 1.0);
  const auto pyr = build_pyramid(disk, 7);
  const Image cs = center_surround(pyr, 2, 5);
  // Level 2 is 16x16; the disk center maps to (8,8).
  double corner = cs.at(0, 0, 0), center = cs.at(0, 8, 8);
  CHECK(center > 0.1);
  CHECK(center > 10 * corner);

  CHECK_THROWS_AS(center_surround(pyr, 3, 3), ParameterError);
  CHECK_THROWS_AS(center_surround(pyr, 4, 2), ParameterError);
  CHECK_THROWS_AS(center_surround(pyr, 2, 7), ParameterError);
}

TEST_CASE("normalize_iterative") {
  Image single(1, 9, 9, 0.0);
  single.at(0, 4, 4) = 3.0;
  const Image a = normalize_iterative(single);
  CHECK(a.at(0, 4, 4) == 1.0);

  for (double v : normalize_iterative(Image(1, 5, 5, 0.8)).pixels) CHECK(v == 0.0);

  // Peaks 1 and 0.6 on zero ground: m = 0.6, factor 0.16.
  Image two(1, 9, 9, 0.0);
  two.at(0, 2, 2) = 1.0;
  two.at(0, 6, 6) = 0.6;
  const Image b = normalize_iterative(two);
  CHECK(std::abs(b.at(0, 2, 2) - 0.16) <= 1e-15);
  CHECK(std::abs(b.at(0, 6, 6) - 0.6 * 0.16) <= 1e-15);

  // Two equal peaks: the second one is a competing maximum of height 1, so both vanish.
  Image eq(1, 9, 9, 0.0);
  eq.at(0, 2, 2) = 1.0;
  eq.at(0, 6, 6) = 1.0;
  const Image c = normalize_iterative(eq);
  CHECK(c.at(0, 2, 2) < a.at(0, 4, 4));
  CHECK(c.at(0, 2, 2) == 0.0);

  // A plateau of equal values counts as one local maximum.
  Image plateau(1, 9, 9, 0.0);
  plateau.at(0, 1, 1) = 1.0;
  plateau.at(0, 6, 5) = 0.5;
  plateau.at(0, 6, 6) = 0.5;
  const Image d = normalize_iterative(plateau);
  CHECK(std::abs(d.at(0, 1, 1) - 0.25) <= 1e-15);
}

TEST_CASE("compute_saliency fixtures") {
  const SaliencyMap flat = compute_saliency(rgb_fill(64, 80, 0.4, 0.4, 0.4));
  CHECK(flat.degenerate);
  for (double v : flat.values.pixels) CHECK(v == 0.0);

  Image disk = rgb_fill(96, 144, 0.0, 0.0, 0.0);
  paint_disk(disk, 100, 40, 8, 1.0);
  const SaliencyMap s = compute_saliency(disk);
  CHECK_FALSE(s.degenerate);
  const Point p = argmax_of(s);
  CHECK(std::hypot(p.x - 100, p.y - 40) <= 8.0);

  Image squares = rgb_fill(96, 144, 0.2, 0.2, 0.2);
  paint_square(squares, 10, 10, 12, 0.6, 0.6, 0.6);
  paint_square(squares, 110, 15, 12, 0.6, 0.6, 0.6);
  paint_square(squares, 20, 70, 12, 0.6, 0.6, 0.6);
  paint_square(squares, 70, 50, 12, 0.8, 0.1, 0.1);
  const Point q = argmax_of(compute_saliency(squares));
  CHECK(q.x >= 70);
  CHECK(q.x <= 81);
  CHECK(q.y >= 50);
  CHECK(q.y <= 61);

  CHECK_THROWS_AS(compute_saliency(Image(3, 16, 64)), ParameterError);
  CHECK_THROWS_AS(compute_saliency(Image(1, 64, 64)), ParameterError);
}

TEST_CASE("compute_saliency range and determinism on random images") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-0.5, 1.5);
    Image img(3, 48, 72);
    for (auto& v : img.pixels) v = u(rng);
    const SaliencyMap a = compute_saliency(img), b = compute_saliency(img);
    CHECK(a.values == b.values);
    for (double v : a.values.pixels) {
      CHECK(v >= 0.0);
      CHECK(v <= 1.0);
    }
  }
}

TEST_CASE("saliency argmax follows a shifted stimulus") {
  int worst = 0;
  for (int dx = -12; dx <= 12; dx += 4)
    for (int dy = -8; dy <= 8; dy += 8) {
      Image a = rgb_fill(96, 144, 0.1, 0.1, 0.1), b = a;
      paint_disk(a, 60, 40, 5, 0.9);
      paint_disk(b, 60 + dx, 40 + dy, 5, 0.9);
      const Point pa = argmax_of(compute_saliency(a)), pb = argmax_of(compute_saliency(b));
      const int ex = int(std::abs(pb.x - pa.x - dx)), ey = int(std::abs(pb.y - pa.y - dy));
      worst = std::max({worst, ex, ey});
    }
  CHECK(worst <= 2);
}

TEST_CASE("mean_in_box") {
  SaliencyMap c;
  c.values = Image(1, 10, 12, 0.3);
  CHECK(mean_in_box(c, {2, 3, 4, 5}) == doctest::Approx(0.3).epsilon(1e-15));
  CHECK(mean_in_box(c, {-5, -5, 100, 100}) == doctest::Approx(0.3).epsilon(1e-15));

  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(0, 1);
  SaliencyMap r;
  r.values = Image(1, 20, 30);
  for (auto& v : r.values.pixels) v = u(rng);
  CHECK(std::abs(mean_in_box(r, {0, 0, 30, 20}) - mean_value(r)) <= 1e-12);
  std::uniform_int_distribution<int> pos(-5, 25), len(1, 12);
  for (int t = 0; t < 50; ++t) {
    const BoundingBox b{pos(rng), pos(rng), len(rng), len(rng)};
    const auto clip = b.clipped(30, 20);
    if (!clip) {
      CHECK_THROWS_AS(mean_in_box(r, b), ParameterError);
      continue;
    }
    double s = 0.0;
    int n = 0;
    for (int y = 0; y < 20; ++y)
      for (int x = 0; x < 30; ++x)
        if (b.contains(x, y)) {
          s += r.at(std::size_t(y), std::size_t(x));
          ++n;
        }
    CHECK(std::abs(mean_in_box(r, b) - s / n) <= 1e-12);
  }
  CHECK_THROWS_AS(mean_in_box(r, {40, 0, 3, 3}), ParameterError);
}
