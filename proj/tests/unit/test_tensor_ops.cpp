#include <cmath>
#include <random>

#include "attflow/errors.hpp"
#include "attflow/kernels/conv.hpp"
#include "attflow/kernels/resample.hpp"
#include "attflow/ops.hpp"
#include "attflow/tape.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace attflow;
using attflow::testing::random_tensor;

namespace {

// Six nested loops, written from the cross-correlation definition.
std::vector<double> conv_oracle(const Tensor& x, const Tensor& w, std::size_t stride, std::size_t pad,
                                std::size_t dil) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), KH = w.dim(2), KW = w.dim(3);
  const std::size_t OH = (H + 2 * pad - dil * (KH - 1) - 1) / stride + 1;
  const std::size_t OW = (W + 2 * pad - dil * (KW - 1) - 1) / stride + 1;
  std::vector<double> out(B * O * OH * OW, 0.0);
  const auto xd = x.data();
  const auto wd = w.data();
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox) {
          double s = 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t ky = 0; ky < KH; ++ky)
              for (std::size_t kx = 0; kx < KW; ++kx) {
                const long iy = long(oy * stride + ky * dil) - long(pad);
                const long ix = long(ox * stride + kx * dil) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(H) || ix >= long(W)) continue;
                s += xd[((b * C + c) * H + iy) * W + ix] * wd[((o * C + c) * KH + ky) * KW + kx];
              }
          out[((b * O + o) * OH + oy) * OW + ox] = s;
        }
  return out;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("conv2d examples") {
  NoGradGuard ng;
  Tensor ones({1, 1, 3, 3}, 1.0);
  const Tensor out = ops::conv2d(ones, Tensor({1, 1, 3, 3}, 1.0));
  CHECK(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out.item() == 9.0);

  std::mt19937_64 rng(3);
  const Tensor x = random_tensor({2, 1, 5, 4}, rng, -1, 1, false);
  const Tensor id = ops::conv2d(x, Tensor({1, 1, 1, 1}, 1.0));
  CHECK(id.shape() == x.shape());
  CHECK(max_abs_diff(id.data(), x.data()) == 0.0);
}

TEST_CASE("conv2d matches the loop oracle") {
  NoGradGuard ng;
  struct Case {
    std::size_t stride, pad, dil;
  };
  for (const Case c : {Case{1, 0, 1}, Case{1, 1, 1}, Case{2, 1, 1}, Case{1, 2, 2}, Case{2, 2, 2}}) {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      std::mt19937_64 rng(seed);
      const Tensor x = random_tensor({1, 2, 5, 5}, rng, -1, 1, false);
      const Tensor w = random_tensor({3, 2, 3, 3}, rng, -1, 1, false);
      const Tensor y = ops::conv2d(x, w, {{c.stride, c.stride}, {c.pad, c.pad}, {c.dil, c.dil}});
      const auto ref = conv_oracle(x, w, c.stride, c.pad, c.dil);
      CHECK(max_abs_diff(y.data(), ref) <= 1e-12);
    }
  }
}

TEST_CASE("conv2d is linear in its input") {
  NoGradGuard ng;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    const Tensor a = random_tensor({2, 3, 6, 7}, rng, -1, 1, false);
    const Tensor b = random_tensor({2, 3, 6, 7}, rng, -1, 1, false);
    const Tensor k = random_tensor({4, 3, 3, 3}, rng, -1, 1, false);
    const ops::Conv2dOptions opt{{1, 1}, {1, 1}, {1, 1}};
    const Tensor lhs = ops::conv2d(ops::add(a, b), k, opt);
    const Tensor rhs = ops::add(ops::conv2d(a, k, opt), ops::conv2d(b, k, opt));
    CHECK(max_abs_diff(lhs.data(), rhs.data()) <= 1e-10);
  }
}

TEST_CASE("serial and parallel conv kernels agree to 1e-12") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> d(1, 3);
    kernels::Conv2dGeometry g;
    g.batch = d(rng);
    g.in_channels = d(rng) + 1;
    g.out_channels = d(rng) + 1;
    g.in_h = 6 + d(rng);
    g.in_w = 5 + d(rng);
    g.kernel_h = d(rng);
    g.kernel_w = d(rng);
    g.stride_h = d(rng);
    g.stride_w = d(rng);
    g.pad_h = d(rng) - 1;
    g.pad_w = d(rng) - 1;
    g.dil_h = d(rng);
    g.dil_w = d(rng);
    REQUIRE(g.valid());
    const std::size_t in_n = g.batch * g.in_channels * g.in_h * g.in_w;
    const std::size_t w_n = g.out_channels * g.in_channels * g.kernel_h * g.kernel_w;
    const std::size_t out_n = g.batch * g.out_channels * g.out_h() * g.out_w();
    const Tensor in = random_tensor({in_n}, rng, -1, 1, false);
    const Tensor w = random_tensor({w_n}, rng, -1, 1, false);
    const Tensor b = random_tensor({g.out_channels}, rng, -1, 1, false);
    const Tensor go = random_tensor({out_n}, rng, -1, 1, false);

    std::vector<double> o1(out_n), o2(out_n);
    kernels::conv2d_forward(g, in.data(), w.data(), b.data(), o1);
    kernels::serial::conv2d_forward(g, in.data(), w.data(), b.data(), o2);
    CHECK(max_abs_diff(o1, o2) <= 1e-12);

    std::vector<double> gi1(in_n), gi2(in_n);
    kernels::conv2d_backward_input(g, go.data(), w.data(), gi1);
    kernels::serial::conv2d_backward_input(g, go.data(), w.data(), gi2);
    CHECK(max_abs_diff(gi1, gi2) <= 1e-12);

    std::vector<double> gw1(w_n), gw2(w_n), gb1(g.out_channels), gb2(g.out_channels);
    kernels::conv2d_backward_weight(g, go.data(), in.data(), gw1, gb1);
    kernels::serial::conv2d_backward_weight(g, go.data(), in.data(), gw2, gb2);
    CHECK(max_abs_diff(gw1, gw2) <= 1e-12);
    CHECK(max_abs_diff(gb1, gb2) <= 1e-12);
  }
}

TEST_CASE("serial and parallel resampling kernels agree to 1e-12") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    std::uniform_int_distribution<std::size_t> d(1, 9);
    const std::size_t planes = d(rng), h = d(rng) + 2, w = d(rng) + 2, oh = d(rng) * 3, ow = d(rng) * 3;
    const Tensor in = random_tensor({planes * h * w}, rng, -1, 1, false);
    const Tensor go = random_tensor({planes * oh * ow}, rng, -1, 1, false);
    std::vector<double> a(planes * oh * ow), b(a.size());
    kernels::resize_bilinear(in.data(), planes, h, w, oh, ow, a);
    kernels::serial::resize_bilinear(in.data(), planes, h, w, oh, ow, b);
    CHECK(max_abs_diff(a, b) <= 1e-12);
    std::vector<double> ga(planes * h * w), gb(ga.size());
    kernels::resize_bilinear_backward(go.data(), planes, h, w, oh, ow, ga);
    kernels::serial::resize_bilinear_backward(go.data(), planes, h, w, oh, ow, gb);
    CHECK(max_abs_diff(ga, gb) <= 1e-12);
    std::vector<double> ba(planes * h * w), bb(ba.size());
    kernels::binomial_blur(in.data(), planes, h, w, ba);
    kernels::serial::binomial_blur(in.data(), planes, h, w, bb);
    CHECK(max_abs_diff(ba, bb) <= 1e-12);
  }
}

TEST_CASE("avg_pool2d examples") {
  NoGradGuard ng;
  CHECK(ops::avg_pool2d(Tensor({1, 1, 4, 6}, 1.0), {4, 6}, {4, 6}).item() == 1.0);
  CHECK(ops::avg_pool2d(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}), {2, 2}, {2, 2}).item() == 2.5);

  std::mt19937_64 rng(11);
  const Tensor x = random_tensor({1, 8, 8, 12}, rng, -1, 1, false);
  const Tensor y = ops::avg_pool2d(x, {4, 6}, {4, 6});
  REQUIRE(y.shape() == Shape{1, 8, 2, 2});
  const auto xd = x.data();
  for (std::size_t c = 0; c < 8; ++c)
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t j = 0; j < 2; ++j) {
        double s = 0.0;
        for (std::size_t u = 0; u < 4; ++u)
          for (std::size_t v = 0; v < 6; ++v) s += xd[(c * 8 + i * 4 + u) * 12 + j * 6 + v];
        CHECK(std::abs(y.data()[(c * 2 + i) * 2 + j] - s / 24.0) <= 1e-12);
      }
  CHECK_THROWS_AS(ops::avg_pool2d(Tensor({1, 1, 3, 3}), {4, 4}, {1, 1}), ParameterError);
}

TEST_CASE("adaptive pooling reduces to plain pooling on divisible inputs") {
  NoGradGuard ng;
  std::mt19937_64 rng(5);
  const Tensor x = random_tensor({2, 3, 8, 12}, rng, -1, 1, false);
  const Tensor a = ops::adaptive_avg_pool2d(x, {4, 6});
  const Tensor b = ops::avg_pool2d(x, {2, 2}, {2, 2});
  CHECK(max_abs_diff(a.data(), b.data()) <= 1e-12);
}

TEST_CASE("elementwise examples") {
  NoGradGuard ng;
  CHECK(ops::sigmoid(Tensor::scalar(0.0)).item() == 0.5);
  CHECK(ops::relu(Tensor::scalar(-3.2)).item() == 0.0);
  CHECK(ops::relu(Tensor::scalar(3.2)).item() == 3.2);

  std::mt19937_64 rng(2);
  const Tensor f = random_tensor({2, 4, 3, 5}, rng, -1, 1, false);
  const Tensor gated = ops::mul(f, Tensor({2, 4, 1, 1}, 1.0));
  CHECK(std::equal(gated.data().begin(), gated.data().end(), f.data().begin()));
  const Tensor f3 = random_tensor({4, 3, 5}, rng, -1, 1, false);
  const Tensor gated3 = ops::mul(f3, Tensor({4, 1, 1}, 1.0));
  CHECK(std::equal(gated3.data().begin(), gated3.data().end(), f3.data().begin()));

  CHECK_THROWS_AS(ops::add(Tensor({2, 3}), Tensor({3, 2})), ParameterError);
  CHECK_THROWS_AS(ops::mul(Tensor({1, 2, 3, 3}), Tensor({1, 3, 1, 1})), ParameterError);
}

TEST_CASE("instance_norm examples") {
  NoGradGuard ng;
  const Tensor g({1}, 1.0), b({1}, 0.0);
  const Tensor c = ops::instance_norm(Tensor({1, 1, 3, 3}, 2.5), g, b);
  for (double v : c.data()) CHECK(v == 0.0);

  const Tensor pm = ops::instance_norm(Tensor({1, 1, 1, 2}, {-1.0, 1.0}), g, b, 1e-12);
  CHECK(pm.data()[0] == doctest::Approx(-1.0).epsilon(1e-9));
  CHECK(pm.data()[1] == doctest::Approx(1.0).epsilon(1e-9));

  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    // Output variance is var / (var + eps); amplitude 10 keeps that within 1e-6 of 1.
    const Tensor x = random_tensor({1, 1, 7, 9}, rng, -10, 10, false);
    const Tensor y = ops::instance_norm(x, g, b, 1e-5);
    auto stats = [](std::span<const double> v) {
      double mean = 0.0, var = 0.0;
      for (double e : v) mean += e;
      mean /= double(v.size());
      for (double e : v) var += (e - mean) * (e - mean);
      return std::pair{mean, var / double(v.size())};
    };
    const auto [in_mean, in_var] = stats(x.data());
    const auto [mean, var] = stats(y.data());
    CHECK(std::abs(mean) <= 1e-9);
    CHECK(std::abs(var - 1.0) <= 1e-6);
    CHECK(std::abs(var - in_var / (in_var + 1e-5)) <= 1e-12);
    (void)in_mean;
  }
}

TEST_CASE("batch_norm examples") {
  NoGradGuard ng;
  const Tensor g({2}, 1.0), b({2}, 0.0);
  auto stats = ops::RunningStats::init(2);
  const Tensor y = ops::batch_norm(Tensor({3, 2, 2, 2}, 4.0), g, b, stats, ops::NormMode::Train);
  for (double v : y.data()) CHECK(v == 0.0);

  auto fresh = ops::RunningStats::init(2);
  std::mt19937_64 rng(4);
  const Tensor x = random_tensor({2, 2, 3, 3}, rng, -1, 1, false);
  const Tensor e = ops::batch_norm(x, g, b, fresh, ops::NormMode::Eval, 0.1, 1e-5);
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(std::abs(e.data()[i] - x.data()[i] / std::sqrt(1.0 + 1e-5)) <= 1e-15);
  }

  // Two-sample batch: the updated running stats expose the batch mean and biased variance.
  auto s = ops::RunningStats::init(2);
  ops::batch_norm(x, g, b, s, ops::NormMode::Train, 1.0);
  for (std::size_t c = 0; c < 2; ++c) {
    double mean = 0.0, var = 0.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < 9; ++k) mean += x.data()[(n * 2 + c) * 9 + k];
    mean /= 18.0;
    for (std::size_t n = 0; n < 2; ++n)
      for (std::size_t k = 0; k < 9; ++k) {
        const double d = x.data()[(n * 2 + c) * 9 + k] - mean;
        var += d * d;
      }
    var /= 18.0;
    CHECK(std::abs(s.mean.data()[c] - mean) <= 1e-12);
    CHECK(std::abs(s.var.data()[c] - var) <= 1e-12);
  }
}

TEST_CASE("upsample_bilinear examples") {
  NoGradGuard ng;
  const Tensor c = ops::upsample_bilinear(Tensor({1, 2, 3, 4}, 0.7), 8);
  CHECK(c.shape() == Shape{1, 2, 24, 32});
  for (double v : c.data()) CHECK(v == doctest::Approx(0.7).epsilon(1e-15));

  std::mt19937_64 rng(1);
  const Tensor x = random_tensor({1, 2, 3, 4}, rng, -1, 1, false);
  const Tensor same = ops::upsample_bilinear(x, 1);
  CHECK(max_abs_diff(same.data(), x.data()) == 0.0);

  // [[0,1],[0,1]] at scale 2: src = (dst + 0.5) / 2 - 0.5, clamped to [0, 1].
  const Tensor m = ops::upsample_bilinear(Tensor({1, 1, 2, 2}, {0, 1, 0, 1}), 2);
  const double expect_row[4] = {0.0, 0.25, 0.75, 1.0};
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t col = 0; col < 4; ++col) CHECK(m.data()[r * 4 + col] == expect_row[col]);
}

TEST_CASE("mse_loss examples") {
  NoGradGuard ng;
  std::mt19937_64 rng(8);
  const Tensor p = random_tensor({2, 2, 3, 5}, rng, -1, 1, false);
  CHECK(ops::mse_loss(p, p).item() == 0.0);
  CHECK(ops::mse_loss(Tensor({2, 3}, 1.0), Tensor({2, 3}, 0.0)).item() == 1.0);
  const Tensor t = random_tensor({2, 2, 3, 5}, rng, -1, 1, false);
  double s = 0.0;
  for (std::size_t i = 0; i < p.numel(); ++i) s += (p.data()[i] - t.data()[i]) * (p.data()[i] - t.data()[i]);
  CHECK(std::abs(ops::mse_loss(p, t).item() - s / double(p.numel())) <= 1e-12);
  CHECK_THROWS_AS(ops::mse_loss(Tensor({2, 3}), Tensor({3, 2})), ParameterError);
}

TEST_CASE("backward examples") {
  Tensor x({5}, {0.5, -1.0, 2.0, 0.0, 3.0}, true);
  Tensor l = ops::mse_loss(x, Tensor({5}, 0.0));
  backward(l);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(x.grad()[i] - 2.0 * x.data()[i] / 5.0) <= 1e-15);

  // Gradients accumulate until zeroed.
  Tensor l2 = ops::mse_loss(x, Tensor({5}, 0.0));
  backward(l2);
  for (std::size_t i = 0; i < 5; ++i) CHECK(std::abs(x.grad()[i] - 4.0 * x.data()[i] / 5.0) <= 1e-15);
  x.zero_grad();
  for (double g : std::as_const(x).grad()) CHECK(g == 0.0);

  Tensor z = Tensor::scalar(0.0, true);
  Tensor s = ops::sigmoid(z);
  backward(s);
  CHECK(z.grad()[0] == 0.25);

  Tensor v({3}, 1.0, true);
  Tensor nonscalar = ops::scale(v, 2.0);
  CHECK_THROWS_AS(backward(nonscalar), ParameterError);
  Tape::current().clear();
}

TEST_CASE("tape replays each entry once in reverse order") {
  Tensor a({2}, {1.0, 2.0}, true);
  Tensor b = ops::scale(a, 3.0);
  Tensor c = ops::mul(b, b);
  Tensor l = ops::mse_loss(c, Tensor({2}, 0.0));
  REQUIRE(Tape::current().size() == 3);
  std::vector<std::size_t> order;
  Tape::current().backward(l, &order);
  CHECK(order == std::vector<std::size_t>{2, 1, 0});
  CHECK(Tape::current().size() == 0);
  // d/da mean((3a)^4) = 4 * 81 a^3 / 2
  CHECK(a.grad()[0] == doctest::Approx(162.0));
  CHECK(a.grad()[1] == doctest::Approx(162.0 * 8.0));
}

TEST_CASE("no-grad guard records nothing") {
  Tensor a({2}, 1.0, true);
  {
    NoGradGuard g;
    Tensor b = ops::scale(a, 2.0);
    CHECK(Tape::current().size() == 0);
    CHECK_FALSE(b.requires_grad());
  }
  Tensor c = ops::scale(a, 2.0);
  CHECK(Tape::current().size() == 1);
  Tape::current().clear();
}

TEST_CASE("ops are deterministic") {
  NoGradGuard ng;
  std::mt19937_64 rng(12);
  const Tensor x = random_tensor({2, 3, 16, 24}, rng, -1, 1, false);
  const Tensor w = random_tensor({5, 3, 3, 3}, rng, -1, 1, false);
  auto run = [&] {
    return ops::upsample_bilinear(ops::relu(ops::conv2d(x, w, {{2, 2}, {1, 1}, {1, 1}})), 8).clone();
  };
  const Tensor a = run(), b = run();
  CHECK(std::equal(a.data().begin(), a.data().end(), b.data().begin()));
}
