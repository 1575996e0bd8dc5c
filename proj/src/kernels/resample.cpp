#include "attflow/kernels/resample.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>

namespace attflow::kernels {

namespace {

constexpr double kBinomial[5] = {1.0 / 16, 4.0 / 16, 6.0 / 16, 4.0 / 16, 1.0 / 16};

double source_coord(std::size_t dst, std::size_t in_len, std::size_t out_len) {
  const double src = (double(dst) + 0.5) * double(in_len) / double(out_len) - 0.5;
  return src < 0.0 ? 0.0 : src;
}

std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return 0;
  if (std::size_t(i) >= n) return n - 1;
  return std::size_t(i);
}

void blur_plane(const double* in, std::size_t h, std::size_t w, double* tmp, double* out) {
  for (std::size_t y = 0; y < h; ++y) {
    const double* row = in + y * w;
    double* trow = tmp + y * w;
    for (std::size_t x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = -2; k <= 2; ++k) acc += kBinomial[k + 2] * row[clamp_index(std::ptrdiff_t(x) + k, w)];
      trow[x] = acc;
    }
  }
  for (std::size_t y = 0; y < h; ++y) {
    double* orow = out + y * w;
    for (std::size_t x = 0; x < w; ++x) orow[x] = 0.0;
    for (int k = -2; k <= 2; ++k) {
      const double* trow = tmp + clamp_index(std::ptrdiff_t(y) + k, h) * w;
      const double c = kBinomial[k + 2];
      for (std::size_t x = 0; x < w; ++x) orow[x] += c * trow[x];
    }
  }
}

}  // namespace

AxisTaps bilinear_taps(std::size_t in_len, std::size_t out_len) {
  AxisTaps t;
  t.i0.resize(out_len);
  t.i1.resize(out_len);
  t.lambda.resize(out_len);
  for (std::size_t d = 0; d < out_len; ++d) {
    const double src = source_coord(d, in_len, out_len);
    std::size_t i0 = std::min(std::size_t(std::floor(src)), in_len - 1);
    t.i0[d] = i0;
    t.i1[d] = std::min(i0 + 1, in_len - 1);
    t.lambda[d] = src - double(i0);
  }
  return t;
}

void resize_bilinear(std::span<const double> input, std::size_t planes, std::size_t in_h,
                     std::size_t in_w, std::size_t out_h, std::size_t out_w,
                     std::span<double> output) {
  const AxisTaps ty = bilinear_taps(in_h, out_h);
  const AxisTaps tx = bilinear_taps(in_w, out_w);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < std::int64_t(planes); ++p) {
    const double* in = input.data() + std::size_t(p) * in_h * in_w;
    double* out = output.data() + std::size_t(p) * out_h * out_w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const double* r0 = in + ty.i0[y] * in_w;
      const double* r1 = in + ty.i1[y] * in_w;
      const double ly = ty.lambda[y];
      double* orow = out + y * out_w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double lx = tx.lambda[x];
        const double top = (1.0 - lx) * r0[tx.i0[x]] + lx * r0[tx.i1[x]];
        const double bot = (1.0 - lx) * r1[tx.i0[x]] + lx * r1[tx.i1[x]];
        orow[x] = (1.0 - ly) * top + ly * bot;
      }
    }
  }
}

void resize_bilinear_backward(std::span<const double> grad_output, std::size_t planes,
                              std::size_t in_h, std::size_t in_w, std::size_t out_h,
                              std::size_t out_w, std::span<double> grad_input) {
  const AxisTaps ty = bilinear_taps(in_h, out_h);
  const AxisTaps tx = bilinear_taps(in_w, out_w);
#pragma omp parallel for schedule(static)
  for (std::int64_t p = 0; p < std::int64_t(planes); ++p) {
    const double* go = grad_output.data() + std::size_t(p) * out_h * out_w;
    double* gi = grad_input.data() + std::size_t(p) * in_h * in_w;
    std::fill(gi, gi + in_h * in_w, 0.0);
    for (std::size_t y = 0; y < out_h; ++y) {
      double* r0 = gi + ty.i0[y] * in_w;
      double* r1 = gi + ty.i1[y] * in_w;
      const double ly = ty.lambda[y];
      for (std::size_t x = 0; x < out_w; ++x) {
        const double g = go[y * out_w + x];
        const double lx = tx.lambda[x];
        r0[tx.i0[x]] += (1.0 - ly) * (1.0 - lx) * g;
        r0[tx.i1[x]] += (1.0 - ly) * lx * g;
        r1[tx.i0[x]] += ly * (1.0 - lx) * g;
        r1[tx.i1[x]] += ly * lx * g;
      }
    }
  }
}

void binomial_blur(std::span<const double> input, std::size_t planes, std::size_t h,
                   std::size_t w, std::span<double> output) {
#pragma omp parallel
  {
    std::vector<double> tmp(h * w);
#pragma omp for schedule(static)
    for (std::int64_t p = 0; p < std::int64_t(planes); ++p) {
      blur_plane(input.data() + std::size_t(p) * h * w, h, w, tmp.data(),
                 output.data() + std::size_t(p) * h * w);
    }
  }
}

void decimate2(std::span<const double> input, std::size_t planes, std::size_t h, std::size_t w,
               std::span<double> output) {
  const std::size_t oh = std::max<std::size_t>(1, h / 2), ow = std::max<std::size_t>(1, w / 2);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t x = 0; x < ow; ++x)
        output[(p * oh + y) * ow + x] = input[(p * h + 2 * y) * w + 2 * x];
}

namespace serial {

void resize_bilinear(std::span<const double> input, std::size_t planes, std::size_t in_h,
                     std::size_t in_w, std::size_t out_h, std::size_t out_w,
                     std::span<double> output) {
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const double sy = source_coord(y, in_h, out_h), sx = source_coord(x, in_w, out_w);
        const std::size_t y0 = std::min(std::size_t(std::floor(sy)), in_h - 1);
        const std::size_t x0 = std::min(std::size_t(std::floor(sx)), in_w - 1);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1), x1 = std::min(x0 + 1, in_w - 1);
        const double ly = sy - double(y0), lx = sx - double(x0);
        auto at = [&](std::size_t yy, std::size_t xx) { return input[(p * in_h + yy) * in_w + xx]; };
        output[(p * out_h + y) * out_w + x] = (1 - ly) * (1 - lx) * at(y0, x0) +
                                              (1 - ly) * lx * at(y0, x1) +
                                              ly * (1 - lx) * at(y1, x0) + ly * lx * at(y1, x1);
      }
}

void resize_bilinear_backward(std::span<const double> grad_output, std::size_t planes,
                              std::size_t in_h, std::size_t in_w, std::size_t out_h,
                              std::size_t out_w, std::span<double> grad_input) {
  std::fill(grad_input.begin(), grad_input.end(), 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < out_h; ++y)
      for (std::size_t x = 0; x < out_w; ++x) {
        const double sy = source_coord(y, in_h, out_h), sx = source_coord(x, in_w, out_w);
        const std::size_t y0 = std::min(std::size_t(std::floor(sy)), in_h - 1);
        const std::size_t x0 = std::min(std::size_t(std::floor(sx)), in_w - 1);
        const std::size_t y1 = std::min(y0 + 1, in_h - 1), x1 = std::min(x0 + 1, in_w - 1);
        const double ly = sy - double(y0), lx = sx - double(x0);
        const double g = grad_output[(p * out_h + y) * out_w + x];
        auto at = [&](std::size_t yy, std::size_t xx) -> double& {
          return grad_input[(p * in_h + yy) * in_w + xx];
        };
        at(y0, x0) += (1 - ly) * (1 - lx) * g;
        at(y0, x1) += (1 - ly) * lx * g;
        at(y1, x0) += ly * (1 - lx) * g;
        at(y1, x1) += ly * lx * g;
      }
}

void binomial_blur(std::span<const double> input, std::size_t planes, std::size_t h,
                   std::size_t w, std::span<double> output) {
  // Direct 2-D 5x5 outer-product filter.
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        double acc = 0.0;
        for (int dy = -2; dy <= 2; ++dy)
          for (int dx = -2; dx <= 2; ++dx)
            acc += kBinomial[dy + 2] * kBinomial[dx + 2] *
                   input[(p * h + clamp_index(std::ptrdiff_t(y) + dy, h)) * w +
                         clamp_index(std::ptrdiff_t(x) + dx, w)];
        output[(p * h + y) * w + x] = acc;
      }
}

}  // namespace serial
}  // namespace attflow::kernels
