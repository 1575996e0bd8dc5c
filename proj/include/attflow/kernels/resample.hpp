#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace attflow::kernels {

// Bilinear resampling with half-pixel centers (align_corners=false):
//   src = (dst + 0.5) * in_len / out_len - 0.5, clamped below at 0;
//   i0 = floor(src), i1 = min(i0 + 1, in_len - 1), lambda = src - i0.
// Operates on `planes` independent row-major planes.
struct AxisTaps {
  std::vector<std::size_t> i0, i1;
  std::vector<double> lambda;
};

AxisTaps bilinear_taps(std::size_t in_len, std::size_t out_len);

void resize_bilinear(std::span<const double> input, std::size_t planes, std::size_t in_h,
                     std::size_t in_w, std::size_t out_h, std::size_t out_w,
                     std::span<double> output);

// Adjoint of resize_bilinear; overwrites grad_input.
void resize_bilinear_backward(std::span<const double> grad_output, std::size_t planes,
                              std::size_t in_h, std::size_t in_w, std::size_t out_h,
                              std::size_t out_w, std::span<double> grad_input);

// Separable 5-tap binomial [1 4 6 4 1]/16 smoothing with replicated borders.
void binomial_blur(std::span<const double> input, std::size_t planes, std::size_t h,
                   std::size_t w, std::span<double> output);

// Keeps every second sample in both axes: out is (h/2) x (w/2), at least 1x1.
void decimate2(std::span<const double> input, std::size_t planes, std::size_t h, std::size_t w,
               std::span<double> output);

namespace serial {

void resize_bilinear(std::span<const double> input, std::size_t planes, std::size_t in_h,
                     std::size_t in_w, std::size_t out_h, std::size_t out_w,
                     std::span<double> output);
void resize_bilinear_backward(std::span<const double> grad_output, std::size_t planes,
                              std::size_t in_h, std::size_t in_w, std::size_t out_h,
                              std::size_t out_w, std::span<double> grad_input);
void binomial_blur(std::span<const double> input, std::size_t planes, std::size_t h,
                   std::size_t w, std::span<double> output);

}  // namespace serial
}  // namespace attflow::kernels
