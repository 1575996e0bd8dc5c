#include "attflow/kernels/conv.hpp"

#include <algorithm>
#include <cstdint>

namespace attflow::kernels {

namespace {

using isize = std::ptrdiff_t;

// Range of output columns [lo, hi) whose tap at offset `off` lands inside [0, in_w).
struct Span1d {
  isize lo, hi;
};

Span1d valid_range(isize off, isize stride, isize in_len, isize out_len) {
  isize lo = 0;
  if (off < 0) lo = (-off + stride - 1) / stride;
  isize hi = 0;
  if (in_len - 1 - off >= 0) hi = (in_len - 1 - off) / stride + 1;
  hi = std::min(hi, out_len);
  return {lo, std::max(lo, hi)};
}

// One output plane (b, oc): accumulates all (ic, kh, kw) taps row by row.
void forward_plane(const Conv2dGeometry& g, const double* in_b, const double* w_oc, double bias,
                   double* out) {
  const isize H = g.in_h, W = g.in_w, OH = g.out_h(), OW = g.out_w();
  const isize sh = g.stride_h, sw = g.stride_w;
  std::fill(out, out + OH * OW, bias);
  for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
    const double* in_c = in_b + ic * H * W;
    for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
      const isize offh = isize(kh * g.dil_h) - isize(g.pad_h);
      const Span1d rows = valid_range(offh, sh, H, OH);
      for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
        const double wv = w_oc[(ic * g.kernel_h + kh) * g.kernel_w + kw];
        const isize offw = isize(kw * g.dil_w) - isize(g.pad_w);
        const Span1d cols = valid_range(offw, sw, W, OW);
        for (isize oh = rows.lo; oh < rows.hi; ++oh) {
          const double* in_row = in_c + (oh * sh + offh) * W + offw;
          double* out_row = out + oh * OW;
          if (sw == 1) {
            for (isize ow = cols.lo; ow < cols.hi; ++ow) out_row[ow] += wv * in_row[ow];
          } else {
            for (isize ow = cols.lo; ow < cols.hi; ++ow) out_row[ow] += wv * in_row[ow * sw];
          }
        }
      }
    }
  }
}

void backward_input_plane(const Conv2dGeometry& g, const double* gout_b, const double* weight,
                          std::size_t ic, double* gin) {
  const isize H = g.in_h, W = g.in_w, OH = g.out_h(), OW = g.out_w();
  const isize sh = g.stride_h, sw = g.stride_w;
  std::fill(gin, gin + H * W, 0.0);
  for (std::size_t oc = 0; oc < g.out_channels; ++oc) {
    const double* go = gout_b + oc * OH * OW;
    const double* w = weight + (oc * g.in_channels + ic) * g.kernel_h * g.kernel_w;
    for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
      const isize offh = isize(kh * g.dil_h) - isize(g.pad_h);
      const Span1d rows = valid_range(offh, sh, H, OH);
      for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
        const double wv = w[kh * g.kernel_w + kw];
        const isize offw = isize(kw * g.dil_w) - isize(g.pad_w);
        const Span1d cols = valid_range(offw, sw, W, OW);
        for (isize oh = rows.lo; oh < rows.hi; ++oh) {
          double* gin_row = gin + (oh * sh + offh) * W + offw;
          const double* go_row = go + oh * OW;
          if (sw == 1) {
            for (isize ow = cols.lo; ow < cols.hi; ++ow) gin_row[ow] += wv * go_row[ow];
          } else {
            for (isize ow = cols.lo; ow < cols.hi; ++ow) gin_row[ow * sw] += wv * go_row[ow];
          }
        }
      }
    }
  }
}

void backward_weight_channel(const Conv2dGeometry& g, const double* grad_output,
                             const double* input, std::size_t oc, double* gw, double* gb) {
  const isize H = g.in_h, W = g.in_w, OH = g.out_h(), OW = g.out_w();
  const isize sh = g.stride_h, sw = g.stride_w;
  const std::size_t out_plane = OH * OW, in_plane = H * W;
  for (std::size_t ic = 0; ic < g.in_channels; ++ic) {
    for (std::size_t kh = 0; kh < g.kernel_h; ++kh) {
      const isize offh = isize(kh * g.dil_h) - isize(g.pad_h);
      const Span1d rows = valid_range(offh, sh, H, OH);
      for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
        const isize offw = isize(kw * g.dil_w) - isize(g.pad_w);
        const Span1d cols = valid_range(offw, sw, W, OW);
        double acc = 0.0;
        for (std::size_t b = 0; b < g.batch; ++b) {
          const double* go = grad_output + (b * g.out_channels + oc) * out_plane;
          const double* in_c = input + (b * g.in_channels + ic) * in_plane;
          for (isize oh = rows.lo; oh < rows.hi; ++oh) {
            const double* in_row = in_c + (oh * sh + offh) * W + offw;
            const double* go_row = go + oh * OW;
            double row_acc = 0.0;
            if (sw == 1) {
              for (isize ow = cols.lo; ow < cols.hi; ++ow) row_acc += go_row[ow] * in_row[ow];
            } else {
              for (isize ow = cols.lo; ow < cols.hi; ++ow) row_acc += go_row[ow] * in_row[ow * sw];
            }
            acc += row_acc;
          }
        }
        gw[(ic * g.kernel_h + kh) * g.kernel_w + kw] = acc;
      }
    }
  }
  if (gb) {
    double acc = 0.0;
    for (std::size_t b = 0; b < g.batch; ++b) {
      const double* go = grad_output + (b * g.out_channels + oc) * out_plane;
      for (std::size_t i = 0; i < out_plane; ++i) acc += go[i];
    }
    *gb = acc;
  }
}

}  // namespace

void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output) {
  const std::size_t in_sample = g.in_channels * g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h() * g.out_w();
  const std::size_t kernel_size = g.in_channels * g.kernel_h * g.kernel_w;
  const std::int64_t jobs = std::int64_t(g.batch * g.out_channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t job = 0; job < jobs; ++job) {
    const std::size_t b = std::size_t(job) / g.out_channels;
    const std::size_t oc = std::size_t(job) % g.out_channels;
    forward_plane(g, input.data() + b * in_sample, weight.data() + oc * kernel_size,
                  bias.empty() ? 0.0 : bias[oc], output.data() + std::size_t(job) * out_plane);
  }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const std::size_t out_sample = g.out_channels * g.out_h() * g.out_w();
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::int64_t jobs = std::int64_t(g.batch * g.in_channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t job = 0; job < jobs; ++job) {
    const std::size_t b = std::size_t(job) / g.in_channels;
    const std::size_t ic = std::size_t(job) % g.in_channels;
    backward_input_plane(g, grad_output.data() + b * out_sample, weight.data(), ic,
                         grad_input.data() + std::size_t(job) * in_plane);
  }
}

void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t kernel_size = g.in_channels * g.kernel_h * g.kernel_w;
  const std::int64_t jobs = std::int64_t(g.out_channels);
#pragma omp parallel for schedule(static)
  for (std::int64_t oc = 0; oc < jobs; ++oc) {
    backward_weight_channel(g, grad_output.data(), input.data(), std::size_t(oc),
                            grad_weight.data() + std::size_t(oc) * kernel_size,
                            grad_bias.empty() ? nullptr : grad_bias.data() + oc);
  }
}

namespace serial {

// Straightforward gather formulation, one output element at a time.
void conv2d_forward(const Conv2dGeometry& g, std::span<const double> input,
                    std::span<const double> weight, std::span<const double> bias,
                    std::span<double> output) {
  const std::size_t OH = g.out_h(), OW = g.out_w();
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          double acc = bias.empty() ? 0.0 : bias[oc];
          for (std::size_t ic = 0; ic < g.in_channels; ++ic)
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::ptrdiff_t ih =
                    std::ptrdiff_t(oh * g.stride_h + kh * g.dil_h) - std::ptrdiff_t(g.pad_h);
                const std::ptrdiff_t iw =
                    std::ptrdiff_t(ow * g.stride_w + kw * g.dil_w) - std::ptrdiff_t(g.pad_w);
                if (ih < 0 || iw < 0 || ih >= std::ptrdiff_t(g.in_h) ||
                    iw >= std::ptrdiff_t(g.in_w))
                  continue;
                acc += weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw] *
                       input[((b * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw];
              }
          output[((b * g.out_channels + oc) * OH + oh) * OW + ow] = acc;
        }
}

void conv2d_backward_input(const Conv2dGeometry& g, std::span<const double> grad_output,
                           std::span<const double> weight, std::span<double> grad_input) {
  const std::size_t OH = g.out_h(), OW = g.out_w();
  std::fill(grad_input.begin(), grad_input.end(), 0.0);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          const double go = grad_output[((b * g.out_channels + oc) * OH + oh) * OW + ow];
          for (std::size_t ic = 0; ic < g.in_channels; ++ic)
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::ptrdiff_t ih =
                    std::ptrdiff_t(oh * g.stride_h + kh * g.dil_h) - std::ptrdiff_t(g.pad_h);
                const std::ptrdiff_t iw =
                    std::ptrdiff_t(ow * g.stride_w + kw * g.dil_w) - std::ptrdiff_t(g.pad_w);
                if (ih < 0 || iw < 0 || ih >= std::ptrdiff_t(g.in_h) ||
                    iw >= std::ptrdiff_t(g.in_w))
                  continue;
                grad_input[((b * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw] +=
                    go * weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw];
              }
        }
}

void conv2d_backward_weight(const Conv2dGeometry& g, std::span<const double> grad_output,
                            std::span<const double> input, std::span<double> grad_weight,
                            std::span<double> grad_bias) {
  const std::size_t OH = g.out_h(), OW = g.out_w();
  std::fill(grad_weight.begin(), grad_weight.end(), 0.0);
  std::fill(grad_bias.begin(), grad_bias.end(), 0.0);
  for (std::size_t b = 0; b < g.batch; ++b)
    for (std::size_t oc = 0; oc < g.out_channels; ++oc)
      for (std::size_t oh = 0; oh < OH; ++oh)
        for (std::size_t ow = 0; ow < OW; ++ow) {
          const double go = grad_output[((b * g.out_channels + oc) * OH + oh) * OW + ow];
          if (!grad_bias.empty()) grad_bias[oc] += go;
          for (std::size_t ic = 0; ic < g.in_channels; ++ic)
            for (std::size_t kh = 0; kh < g.kernel_h; ++kh)
              for (std::size_t kw = 0; kw < g.kernel_w; ++kw) {
                const std::ptrdiff_t ih =
                    std::ptrdiff_t(oh * g.stride_h + kh * g.dil_h) - std::ptrdiff_t(g.pad_h);
                const std::ptrdiff_t iw =
                    std::ptrdiff_t(ow * g.stride_w + kw * g.dil_w) - std::ptrdiff_t(g.pad_w);
                if (ih < 0 || iw < 0 || ih >= std::ptrdiff_t(g.in_h) ||
                    iw >= std::ptrdiff_t(g.in_w))
                  continue;
                grad_weight[((oc * g.in_channels + ic) * g.kernel_h + kh) * g.kernel_w + kw] +=
                    go * input[((b * g.in_channels + ic) * g.in_h + ih) * g.in_w + iw];
              }
        }
}

}  // namespace serial
}  // namespace attflow::kernels
