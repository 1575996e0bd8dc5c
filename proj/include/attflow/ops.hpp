#pragma once

#include <cstddef>
#include <utility>

#include "attflow/tensor.hpp"

namespace attflow::ops {

using Pair = std::pair<std::size_t, std::size_t>;

struct Conv2dOptions {
  Pair stride{1, 1};
  Pair padding{0, 0};
  Pair dilation{1, 1};
};

// input [B,Cin,H,W], kernel [Cout,Cin,kh,kw], optional bias [Cout].
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Conv2dOptions& opt = {});
Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv2dOptions& opt = {});

Tensor avg_pool2d(const Tensor& input, Pair window, Pair stride);
// Average pooling onto a fixed output grid; bin i spans
// [floor(i*H/out), ceil((i+1)*H/out)). Reduces to avg_pool2d when H, W divide evenly.
Tensor adaptive_avg_pool2d(const Tensor& input, Pair output_size);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor add(const Tensor& a, const Tensor& b);
// Elementwise product. `b` may also be [B,C,1,1] (or [C,1,1] for 3-D a) and is
// broadcast over the spatial dimensions of `a`.
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

// Per (sample, channel) plane normalization with biased variance.
Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                     double eps = 1e-5);

enum class NormMode { Train, Eval };

struct RunningStats {
  Tensor mean;  // [C], initialized to 0
  Tensor var;   // [C], initialized to 1
  static RunningStats init(std::size_t channels);
};

// Per-channel normalization over (B,H,W). Train mode normalizes with batch
// statistics and updates `stats` as stats = (1-momentum)*stats + momentum*batch
// (biased batch variance); eval mode uses `stats`.
Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  RunningStats& stats, NormMode mode, double momentum = 0.1, double eps = 1e-5);

Tensor upsample_bilinear(const Tensor& input, std::size_t scale);

// Mean over all elements of (pred - target)^2; scalar tensor.
Tensor mse_loss(const Tensor& pred, const Tensor& target);

}  // namespace attflow::ops
