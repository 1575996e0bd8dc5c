#include "attflow/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>

#include "attflow/errors.hpp"
#include "attflow/kernels/conv.hpp"
#include "attflow/kernels/resample.hpp"
#include "attflow/tape.hpp"

namespace attflow::ops {

namespace {

bool tracking(std::initializer_list<const Tensor*> inputs) {
  if (!Tape::current().recording()) return false;
  for (const Tensor* t : inputs)
    if (t && t->defined() && t->requires_grad()) return true;
  return false;
}

void accumulate(const Tensor& target, std::span<const double> g) {
  if (!target.requires_grad()) return;
  auto dst = const_cast<Tensor&>(target).grad();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.ndim() != rank) {
    throw ParameterError(std::string(op) + ": expected rank-" + std::to_string(rank) +
                         " tensor, got " + shape_str(t.shape()));
  }
}

// Strides of `b` right-aligned against `a_shape`, with 0 on broadcast axes.
std::vector<std::size_t> broadcast_strides(const Shape& a_shape, const Shape& b_shape,
                                           const char* op) {
  if (b_shape.size() > a_shape.size()) {
    throw ParameterError(std::string(op) + ": cannot broadcast " + shape_str(b_shape) + " to " +
                         shape_str(a_shape));
  }
  const std::size_t lead = a_shape.size() - b_shape.size();
  std::vector<std::size_t> strides(a_shape.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = b_shape.size(); i-- > 0;) {
    const std::size_t ad = a_shape[lead + i], bd = b_shape[i];
    if (bd == ad) {
      strides[lead + i] = stride;
    } else if (bd != 1) {
      throw ParameterError(std::string(op) + ": cannot broadcast " + shape_str(b_shape) + " to " +
                           shape_str(a_shape));
    }
    stride *= bd;
  }
  return strides;
}

// Maps each flat index of a to the flat index of the broadcast operand b.
std::vector<std::size_t> broadcast_index(const Shape& a_shape, const std::vector<std::size_t>& bs) {
  const std::size_t n = shape_numel(a_shape);
  std::vector<std::size_t> idx(n);
  std::vector<std::size_t> coord(a_shape.size(), 0);
  std::size_t off = 0;
  for (std::size_t i = 0; i < n; ++i) {
    idx[i] = off;
    for (std::size_t d = a_shape.size(); d-- > 0;) {
      ++coord[d];
      off += bs[d];
      if (coord[d] < a_shape[d]) break;
      off -= bs[d] * coord[d];
      coord[d] = 0;
    }
  }
  return idx;
}

kernels::Conv2dGeometry conv_geometry(const Tensor& input, const Tensor& kernel,
                                      const Conv2dOptions& opt) {
  require_rank(input, 4, "conv2d");
  require_rank(kernel, 4, "conv2d");
  if (input.dim(1) != kernel.dim(1)) {
    throw ParameterError("conv2d: input channels " + std::to_string(input.dim(1)) +
                         " do not match kernel channels " + std::to_string(kernel.dim(1)));
  }
  kernels::Conv2dGeometry g;
  g.batch = input.dim(0);
  g.in_channels = input.dim(1);
  g.in_h = input.dim(2);
  g.in_w = input.dim(3);
  g.out_channels = kernel.dim(0);
  g.kernel_h = kernel.dim(2);
  g.kernel_w = kernel.dim(3);
  g.stride_h = opt.stride.first;
  g.stride_w = opt.stride.second;
  g.pad_h = opt.padding.first;
  g.pad_w = opt.padding.second;
  g.dil_h = opt.dilation.first;
  g.dil_w = opt.dilation.second;
  if (!g.valid()) {
    throw ParameterError("conv2d: kernel " + shape_str(kernel.shape()) +
                         " with given stride/padding/dilation does not fit input " +
                         shape_str(input.shape()));
  }
  return g;
}

Tensor conv2d_impl(const Tensor& input, const Tensor& kernel, const Tensor* bias,
                   const Conv2dOptions& opt) {
  const auto g = conv_geometry(input, kernel, opt);
  if (bias && (bias->ndim() != 1 || bias->dim(0) != g.out_channels)) {
    throw ParameterError("conv2d: bias shape " + shape_str(bias->shape()) + " does not match " +
                         std::to_string(g.out_channels) + " output channels");
  }
  Shape out_shape{g.batch, g.out_channels, g.out_h(), g.out_w()};
  std::vector<double> out(shape_numel(out_shape));
  kernels::conv2d_forward(g, input.data(), kernel.data(),
                          bias ? bias->data() : std::span<const double>{}, out);
  const bool track = tracking({&input, &kernel, bias});
  Tensor result = Tensor::make_result(std::move(out_shape), std::move(out), track);
  if (track) {
    std::vector<Tensor> inputs{input, kernel};
    if (bias) inputs.push_back(*bias);
    Tape::current().record("conv2d", std::move(inputs), result, [g](const Tape::Entry& e) {
      const auto go = e.output.grad();
      const Tensor& in = e.inputs[0];
      const Tensor& k = e.inputs[1];
      if (in.requires_grad()) {
        std::vector<double> gin(in.numel());
        kernels::conv2d_backward_input(g, go, k.data(), gin);
        accumulate(in, gin);
      }
      const bool want_bias = e.inputs.size() > 2 && e.inputs[2].requires_grad();
      if (k.requires_grad() || want_bias) {
        std::vector<double> gw(k.numel());
        std::vector<double> gb(want_bias ? g.out_channels : 0);
        kernels::conv2d_backward_weight(g, go, in.data(), gw, gb);
        accumulate(k, gw);
        if (want_bias) accumulate(e.inputs[2], gb);
      }
    });
  }
  return result;
}

struct PoolBins {
  std::vector<std::size_t> start, end;
};

Tensor pool_impl(const Tensor& input, const PoolBins& rows, const PoolBins& cols,
                 const char* name) {
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const std::size_t OH = rows.start.size(), OW = cols.start.size();
  Shape out_shape{B, C, OH, OW};
  std::vector<double> out(shape_numel(out_shape));
  const auto in = input.data();
  for (std::size_t p = 0; p < B * C; ++p)
    for (std::size_t oy = 0; oy < OH; ++oy)
      for (std::size_t ox = 0; ox < OW; ++ox) {
        double acc = 0.0;
        for (std::size_t y = rows.start[oy]; y < rows.end[oy]; ++y)
          for (std::size_t x = cols.start[ox]; x < cols.end[ox]; ++x) acc += in[(p * H + y) * W + x];
        const double count = double((rows.end[oy] - rows.start[oy]) * (cols.end[ox] - cols.start[ox]));
        out[(p * OH + oy) * OW + ox] = acc / count;
      }
  const bool track = tracking({&input});
  Tensor result = Tensor::make_result(std::move(out_shape), std::move(out), track);
  if (track) {
    Tape::current().record(name, {input}, result, [rows, cols, B, C, H, W](const Tape::Entry& e) {
      const auto go = e.output.grad();
      const std::size_t OH = rows.start.size(), OW = cols.start.size();
      std::vector<double> gin(B * C * H * W, 0.0);
      for (std::size_t p = 0; p < B * C; ++p)
        for (std::size_t oy = 0; oy < OH; ++oy)
          for (std::size_t ox = 0; ox < OW; ++ox) {
            const double count =
                double((rows.end[oy] - rows.start[oy]) * (cols.end[ox] - cols.start[ox]));
            const double g = go[(p * OH + oy) * OW + ox] / count;
            for (std::size_t y = rows.start[oy]; y < rows.end[oy]; ++y)
              for (std::size_t x = cols.start[ox]; x < cols.end[ox]; ++x) gin[(p * H + y) * W + x] += g;
          }
      accumulate(e.inputs[0], gin);
    });
  }
  return result;
}

template <typename Fwd, typename Deriv>
Tensor unary(const Tensor& x, const char* name, Fwd fwd, Deriv deriv) {
  const auto in = x.data();
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = fwd(in[i]);
  const bool track = tracking({&x});
  Tensor result = Tensor::make_result(x.shape(), std::move(out), track);
  if (track) {
    Tape::current().record(name, {x}, result, [deriv](const Tape::Entry& e) {
      const auto go = e.output.grad();
      const auto xin = e.inputs[0].data();
      const auto y = e.output.data();
      std::vector<double> gin(go.size());
      for (std::size_t i = 0; i < go.size(); ++i) gin[i] = go[i] * deriv(xin[i], y[i]);
      accumulate(e.inputs[0], gin);
    });
  }
  return result;
}

double stable_sigmoid(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  const double ev = std::exp(v);
  return ev / (1.0 + ev);
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Conv2dOptions& opt) {
  return conv2d_impl(input, kernel, nullptr, opt);
}

Tensor conv2d(const Tensor& input, const Tensor& kernel, const Tensor& bias,
              const Conv2dOptions& opt) {
  return conv2d_impl(input, kernel, &bias, opt);
}

Tensor avg_pool2d(const Tensor& input, Pair window, Pair stride) {
  require_rank(input, 4, "avg_pool2d");
  const std::size_t H = input.dim(2), W = input.dim(3);
  if (window.first == 0 || window.second == 0 || stride.first == 0 || stride.second == 0) {
    throw ParameterError("avg_pool2d: window and stride must be positive");
  }
  if (window.first > H || window.second > W) {
    throw ParameterError("avg_pool2d: window (" + std::to_string(window.first) + "," +
                         std::to_string(window.second) + ") larger than input " +
                         shape_str(input.shape()));
  }
  PoolBins rows, cols;
  for (std::size_t y = 0; y + window.first <= H; y += stride.first) {
    rows.start.push_back(y);
    rows.end.push_back(y + window.first);
  }
  for (std::size_t x = 0; x + window.second <= W; x += stride.second) {
    cols.start.push_back(x);
    cols.end.push_back(x + window.second);
  }
  return pool_impl(input, rows, cols, "avg_pool2d");
}

Tensor adaptive_avg_pool2d(const Tensor& input, Pair output_size) {
  require_rank(input, 4, "adaptive_avg_pool2d");
  if (output_size.first == 0 || output_size.second == 0) {
    throw ParameterError("adaptive_avg_pool2d: output size must be positive");
  }
  auto bins = [](std::size_t in, std::size_t out) {
    PoolBins b;
    for (std::size_t i = 0; i < out; ++i) {
      b.start.push_back(i * in / out);
      b.end.push_back(((i + 1) * in + out - 1) / out);
    }
    return b;
  };
  return pool_impl(input, bins(input.dim(2), output_size.first),
                   bins(input.dim(3), output_size.second), "adaptive_avg_pool2d");
}

Tensor relu(const Tensor& x) {
  return unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary(x, "sigmoid", stable_sigmoid, [](double, double y) { return y * (1.0 - y); });
}

Tensor scale(const Tensor& x, double factor) {
  return unary(
      x, "scale", [factor](double v) { return v * factor; },
      [factor](double, double) { return factor; });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const auto bs = broadcast_strides(a.shape(), b.shape(), "add");
  const auto idx = broadcast_index(a.shape(), bs);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] + bv[idx[i]];
  const bool track = tracking({&a, &b});
  Tensor result = Tensor::make_result(a.shape(), std::move(out), track);
  if (track) {
    Tape::current().record("add", {a, b}, result, [idx](const Tape::Entry& e) {
      const auto go = e.output.grad();
      accumulate(e.inputs[0], go);
      if (e.inputs[1].requires_grad()) {
        std::vector<double> gb(e.inputs[1].numel(), 0.0);
        for (std::size_t i = 0; i < go.size(); ++i) gb[idx[i]] += go[i];
        accumulate(e.inputs[1], gb);
      }
    });
  }
  return result;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const auto bs = broadcast_strides(a.shape(), b.shape(), "mul");
  const auto idx = broadcast_index(a.shape(), bs);
  const auto av = a.data();
  const auto bv = b.data();
  std::vector<double> out(av.size());
  for (std::size_t i = 0; i < av.size(); ++i) out[i] = av[i] * bv[idx[i]];
  const bool track = tracking({&a, &b});
  Tensor result = Tensor::make_result(a.shape(), std::move(out), track);
  if (track) {
    Tape::current().record("mul", {a, b}, result, [idx](const Tape::Entry& e) {
      const auto go = e.output.grad();
      const auto av = e.inputs[0].data();
      const auto bv = e.inputs[1].data();
      if (e.inputs[0].requires_grad()) {
        std::vector<double> ga(go.size());
        for (std::size_t i = 0; i < go.size(); ++i) ga[i] = go[i] * bv[idx[i]];
        accumulate(e.inputs[0], ga);
      }
      if (e.inputs[1].requires_grad()) {
        std::vector<double> gb(bv.size(), 0.0);
        for (std::size_t i = 0; i < go.size(); ++i) gb[idx[i]] += go[i] * av[i];
        accumulate(e.inputs[1], gb);
      }
    });
  }
  return result;
}

Tensor instance_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta, double eps) {
  require_rank(input, 4, "instance_norm");
  const std::size_t B = input.dim(0), C = input.dim(1), N = input.dim(2) * input.dim(3);
  if (gamma.numel() != C || beta.numel() != C) {
    throw ParameterError("instance_norm: gamma/beta must have " + std::to_string(C) + " entries");
  }
  if (!(eps > 0.0)) throw ParameterError("instance_norm: eps must be positive");
  const auto x = input.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<double> out(x.size()), xhat(x.size()), inv_std(B * C);
  for (std::size_t p = 0; p < B * C; ++p) {
    const double* xp = x.data() + p * N;
    double mean = 0.0;
    for (std::size_t i = 0; i < N; ++i) mean += xp[i];
    mean /= double(N);
    double var = 0.0;
    for (std::size_t i = 0; i < N; ++i) var += (xp[i] - mean) * (xp[i] - mean);
    var /= double(N);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[p] = is;
    const std::size_t c = p % C;
    for (std::size_t i = 0; i < N; ++i) {
      xhat[p * N + i] = (xp[i] - mean) * is;
      out[p * N + i] = xhat[p * N + i] * gm[c] + bt[c];
    }
  }
  const bool track = tracking({&input, &gamma, &beta});
  Tensor result = Tensor::make_result(input.shape(), std::move(out), track);
  if (track) {
    Tape::current().record(
        "instance_norm", {input, gamma, beta}, result,
        [xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, N](const Tape::Entry& e) {
          const auto go = e.output.grad();
          const auto gm = e.inputs[1].data();
          std::vector<double> gx(go.size()), gg(C, 0.0), gbeta(C, 0.0);
          for (std::size_t p = 0; p < B * C; ++p) {
            const std::size_t c = p % C;
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t i = 0; i < N; ++i) {
              sum_g += go[p * N + i];
              sum_gx += go[p * N + i] * xhat[p * N + i];
            }
            gg[c] += sum_gx;
            gbeta[c] += sum_g;
            const double mean_dx = sum_g * gm[c] / double(N);
            const double mean_dxx = sum_gx * gm[c] / double(N);
            for (std::size_t i = 0; i < N; ++i) {
              const double dxhat = go[p * N + i] * gm[c];
              gx[p * N + i] = inv_std[p] * (dxhat - mean_dx - xhat[p * N + i] * mean_dxx);
            }
          }
          accumulate(e.inputs[0], gx);
          accumulate(e.inputs[1], gg);
          accumulate(e.inputs[2], gbeta);
        });
  }
  return result;
}

RunningStats RunningStats::init(std::size_t channels) {
  return RunningStats{Tensor(Shape{channels}, 0.0), Tensor(Shape{channels}, 1.0)};
}

Tensor batch_norm(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                  RunningStats& stats, NormMode mode, double momentum, double eps) {
  require_rank(input, 4, "batch_norm");
  const std::size_t B = input.dim(0), C = input.dim(1), N = input.dim(2) * input.dim(3);
  if (gamma.numel() != C || beta.numel() != C || stats.mean.numel() != C ||
      stats.var.numel() != C) {
    throw ParameterError("batch_norm: per-channel parameters must have " + std::to_string(C) +
                         " entries");
  }
  if (!(eps > 0.0)) throw ParameterError("batch_norm: eps must be positive");
  const auto x = input.data();
  const auto gm = gamma.data();
  const auto bt = beta.data();
  std::vector<double> mean(C, 0.0), inv_std(C), out(x.size()), xhat(x.size());
  const double count = double(B * N);
  if (mode == NormMode::Train) {
    auto rm = stats.mean.data();
    auto rv = stats.var.data();
    for (std::size_t c = 0; c < C; ++c) {
      double m = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N; ++i) m += x[(b * C + c) * N + i];
      m /= count;
      double v = 0.0;
      for (std::size_t b = 0; b < B; ++b)
        for (std::size_t i = 0; i < N; ++i) {
          const double d = x[(b * C + c) * N + i] - m;
          v += d * d;
        }
      v /= count;
      mean[c] = m;
      inv_std[c] = 1.0 / std::sqrt(v + eps);
      rm[c] = (1.0 - momentum) * rm[c] + momentum * m;
      rv[c] = (1.0 - momentum) * rv[c] + momentum * v;
    }
  } else {
    const auto rm = stats.mean.data();
    const auto rv = stats.var.data();
    for (std::size_t c = 0; c < C; ++c) {
      mean[c] = rm[c];
      inv_std[c] = 1.0 / std::sqrt(rv[c] + eps);
    }
  }
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t i = 0; i < N; ++i) {
        const std::size_t k = (b * C + c) * N + i;
        xhat[k] = (x[k] - mean[c]) * inv_std[c];
        out[k] = xhat[k] * gm[c] + bt[c];
      }
  const bool track = tracking({&input, &gamma, &beta});
  Tensor result = Tensor::make_result(input.shape(), std::move(out), track);
  if (track) {
    const bool batch_stats = mode == NormMode::Train;
    Tape::current().record(
        "batch_norm", {input, gamma, beta}, result,
        [xhat = std::move(xhat), inv_std = std::move(inv_std), B, C, N,
         batch_stats](const Tape::Entry& e) {
          const auto go = e.output.grad();
          const auto gm = e.inputs[1].data();
          std::vector<double> gx(go.size()), gg(C, 0.0), gbeta(C, 0.0);
          const double count = double(B * N);
          for (std::size_t c = 0; c < C; ++c) {
            double sum_g = 0.0, sum_gx = 0.0;
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t i = 0; i < N; ++i) {
                const std::size_t k = (b * C + c) * N + i;
                sum_g += go[k];
                sum_gx += go[k] * xhat[k];
              }
            gg[c] = sum_gx;
            gbeta[c] = sum_g;
            const double mean_dx = batch_stats ? sum_g * gm[c] / count : 0.0;
            const double mean_dxx = batch_stats ? sum_gx * gm[c] / count : 0.0;
            for (std::size_t b = 0; b < B; ++b)
              for (std::size_t i = 0; i < N; ++i) {
                const std::size_t k = (b * C + c) * N + i;
                gx[k] = inv_std[c] * (go[k] * gm[c] - mean_dx - xhat[k] * mean_dxx);
              }
          }
          accumulate(e.inputs[0], gx);
          accumulate(e.inputs[1], gg);
          accumulate(e.inputs[2], gbeta);
        });
  }
  return result;
}

Tensor upsample_bilinear(const Tensor& input, std::size_t factor) {
  require_rank(input, 4, "upsample_bilinear");
  if (factor < 1) throw ParameterError("upsample_bilinear: scale must be >= 1");
  const std::size_t B = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  Shape out_shape{B, C, H * factor, W * factor};
  std::vector<double> out(shape_numel(out_shape));
  kernels::resize_bilinear(input.data(), B * C, H, W, H * factor, W * factor, out);
  const bool track = tracking({&input});
  Tensor result = Tensor::make_result(std::move(out_shape), std::move(out), track);
  if (track) {
    Tape::current().record("upsample_bilinear", {input}, result,
                           [B, C, H, W, factor](const Tape::Entry& e) {
                             std::vector<double> gin(B * C * H * W);
                             kernels::resize_bilinear_backward(e.output.grad(), B * C, H, W,
                                                               H * factor, W * factor, gin);
                             accumulate(e.inputs[0], gin);
                           });
  }
  return result;
}

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ParameterError("mse_loss: shape mismatch " + shape_str(pred.shape()) + " vs " +
                         shape_str(target.shape()));
  }
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) acc += (p[i] - t[i]) * (p[i] - t[i]);
  const double n = double(p.size());
  const bool track = tracking({&pred, &target});
  Tensor result = Tensor::make_result(Shape{1}, {acc / n}, track);
  if (track) {
    Tape::current().record("mse_loss", {pred, target}, result, [n](const Tape::Entry& e) {
      const double g = e.output.grad()[0];
      const auto p = e.inputs[0].data();
      const auto t = e.inputs[1].data();
      std::vector<double> gp(p.size());
      for (std::size_t i = 0; i < p.size(); ++i) gp[i] = 2.0 * (p[i] - t[i]) / n * g;
      accumulate(e.inputs[0], gp);
      if (e.inputs[1].requires_grad()) {
        for (auto& v : gp) v = -v;
        accumulate(e.inputs[1], gp);
      }
    });
  }
  return result;
}

}  // namespace attflow::ops
