#pragma once

#include <cstddef>
#include <span>

namespace attflow::kernels {

struct Conv2dGeometry {
  std::size_t batch = 1, in_channels = 1, in_h = 1, in_w = 1;
  std::size_t out_channels = 1, kernel_h = 1, kernel_w = 1;
  std::size_t stride_h = 1, stride_w = 1;
  std::size_t pad_h = 0, pad_w = 0;
  std::size_t dil_h = 1, dil_w = 1;

  std::size_t out_h() const { return (in_h + 2 * pad_h - dil_h * (kernel_h - 1) - 1) / stride_h + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad_w - dil_w * (kernel_w - 1) - 1) / stride_w + 1; }
  // True when the dilated kernel fits inside the padded input.
  bool valid() const {
    return stride_h >= 1 && stride_w >= 1 && dil_h >= 1 && dil_w >= 1 && kernel_h >= 1 &&
           kernel_w >= 1 && in_h + 2 * pad_h >= dil_h * (kernel_h - 1) + 1 &&
           in_w + 2 * pad_w >= dil_w * (kernel_w - 1) + 1;
  }
};

// Cross-correlation. Layouts: input [B,Cin,H,W], weight [Cout,Cin,kh,kw],
// output [B,Cout,H',W']. An empty bias means no bias.
// The OpenMP kernels assign every output element to exactly one thread, so
// results do not depend on the thread count.
void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output);

// Overwrites grad_input with d(out)/d(input)^T * grad_output.
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);

// Overwrites grad_weight (and grad_bias when non-empty).
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_weight,
                            std::span<double> grad_bias);

namespace serial {

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output);
void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input);
void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_weight,
                            std::span<double> grad_bias);

}  // namespace serial
}  // namespace attflow::kernels
