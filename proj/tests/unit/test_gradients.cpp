#include <random>

#include "attflow/ops.hpp"
#include "attflow/tape.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace attflow;
using attflow::testing::grad_check;
using attflow::testing::random_tensor;

namespace {

constexpr double kOpTolerance = 1e-4;

template <class Op>
void check_op(const char* name, Op&& build) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    auto [inputs, fn] = build(rng);
    std::mt19937_64 trng(seed + 1000);
    const Tensor out_shape_probe = fn();
    const Tensor target = random_tensor(out_shape_probe.shape(), trng, -1.0, 1.0, false);
    Tape::current().clear();
    const auto r = grad_check([&] { return ops::mse_loss(fn(), target); }, inputs);
    INFO(name << " seed " << seed);
    CHECK(r.max_rel_error < kOpTolerance);
  }
}

using Inputs = std::vector<Tensor>;
using Fn = std::function<Tensor()>;

}  // namespace

TEST_CASE("conv2d gradients across stride, padding, dilation and bias") {
  struct Case {
    ops::Conv2dOptions opt;
    bool bias;
  };
  const Case cases[] = {
      {{{1, 1}, {0, 0}, {1, 1}}, false},
      {{{1, 1}, {1, 1}, {1, 1}}, true},
      {{{2, 2}, {1, 1}, {1, 1}}, true},
      {{{1, 2}, {2, 1}, {2, 1}}, false},
      {{{2, 1}, {2, 2}, {2, 2}}, true},
  };
  for (const auto& c : cases) {
    check_op("conv2d", [&](std::mt19937_64& rng) {
      Tensor x = random_tensor({2, 3, 7, 6}, rng);
      Tensor w = random_tensor({4, 3, 3, 3}, rng);
      Tensor b = random_tensor({4}, rng);
      Fn fn = c.bias ? Fn([=] { return ops::conv2d(x, w, b, c.opt); })
                     : Fn([=] { return ops::conv2d(x, w, c.opt); });
      return std::pair{c.bias ? Inputs{x, w, b} : Inputs{x, w}, fn};
    });
  }
}

TEST_CASE("rectangular conv kernels") {
  check_op("conv2d 2x3", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({1, 4, 2, 3}, rng);
    Tensor w = random_tensor({5, 4, 2, 3}, rng);
    Tensor b = random_tensor({5}, rng);
    return std::pair{Inputs{x, w, b}, Fn([=] { return ops::conv2d(x, w, b); })};
  });
}

TEST_CASE("pooling gradients") {
  check_op("avg_pool2d", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({2, 3, 6, 8}, rng);
    return std::pair{Inputs{x}, Fn([=] { return ops::avg_pool2d(x, {2, 3}, {2, 2}); })};
  });
  check_op("adaptive_avg_pool2d", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({2, 3, 7, 10}, rng);
    return std::pair{Inputs{x}, Fn([=] { return ops::adaptive_avg_pool2d(x, {4, 6}); })};
  });
}

TEST_CASE("elementwise gradients") {
  check_op("relu", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    // Keep inputs away from the kink.
    for (auto& v : x.data()) v += v >= 0 ? 0.01 : -0.01;
    return std::pair{Inputs{x}, Fn([=] { return ops::relu(x); })};
  });
  check_op("sigmoid", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({2, 3, 4, 5}, rng, -4.0, 4.0);
    return std::pair{Inputs{x}, Fn([=] { return ops::sigmoid(x); })};
  });
  check_op("add", [](std::mt19937_64& rng) {
    Tensor a = random_tensor({2, 3, 4, 5}, rng);
    Tensor b = random_tensor({2, 3, 4, 5}, rng);
    return std::pair{Inputs{a, b}, Fn([=] { return ops::add(a, b); })};
  });
  check_op("mul", [](std::mt19937_64& rng) {
    Tensor a = random_tensor({2, 3, 4, 5}, rng);
    Tensor b = random_tensor({2, 3, 4, 5}, rng);
    return std::pair{Inputs{a, b}, Fn([=] { return ops::mul(a, b); })};
  });
  check_op("mul broadcast", [](std::mt19937_64& rng) {
    Tensor a = random_tensor({2, 3, 4, 5}, rng);
    Tensor g = random_tensor({2, 3, 1, 1}, rng);
    return std::pair{Inputs{a, g}, Fn([=] { return ops::mul(a, g); })};
  });
  check_op("scale", [](std::mt19937_64& rng) {
    Tensor a = random_tensor({3, 4}, rng);
    return std::pair{Inputs{a}, Fn([=] { return ops::scale(a, -2.5); })};
  });
}

TEST_CASE("normalization gradients") {
  check_op("instance_norm", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({2, 3, 4, 5}, rng);
    Tensor g = random_tensor({3}, rng, 0.5, 1.5);
    Tensor b = random_tensor({3}, rng);
    return std::pair{Inputs{x, g, b}, Fn([=] { return ops::instance_norm(x, g, b); })};
  });
  check_op("batch_norm train", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({3, 2, 4, 3}, rng);
    Tensor g = random_tensor({2}, rng, 0.5, 1.5);
    Tensor b = random_tensor({2}, rng);
    return std::pair{Inputs{x, g, b}, Fn([=] {
                       auto stats = ops::RunningStats::init(2);
                       return ops::batch_norm(x, g, b, stats, ops::NormMode::Train);
                     })};
  });
  check_op("batch_norm eval", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({3, 2, 4, 3}, rng);
    Tensor g = random_tensor({2}, rng, 0.5, 1.5);
    Tensor b = random_tensor({2}, rng);
    auto stats = ops::RunningStats::init(2);
    stats.mean.data()[0] = 0.3;
    stats.var.data()[1] = 2.0;
    return std::pair{Inputs{x, g, b}, Fn([=]() mutable {
                       return ops::batch_norm(x, g, b, stats, ops::NormMode::Eval);
                     })};
  });
}

TEST_CASE("upsampling and loss gradients") {
  check_op("upsample_bilinear", [](std::mt19937_64& rng) {
    Tensor x = random_tensor({2, 2, 3, 4}, rng);
    return std::pair{Inputs{x}, Fn([=] { return ops::upsample_bilinear(x, 8); })};
  });
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor p = random_tensor({2, 2, 3, 3}, rng);
    Tensor t = random_tensor({2, 2, 3, 3}, rng);
    const auto r = grad_check([&] { return ops::mse_loss(p, t); }, {p, t});
    CHECK(r.max_rel_error < kOpTolerance);
  }
}

TEST_CASE("composite graph with shared inputs accumulates gradients") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(seed);
    Tensor x = random_tensor({1, 2, 5, 5}, rng);
    Tensor w = random_tensor({2, 2, 3, 3}, rng);
    Tensor t = random_tensor({1, 2, 5, 5}, rng, -1, 1, false);
    auto f = [&] {
      Tensor y = ops::conv2d(x, w, {{1, 1}, {1, 1}, {1, 1}});
      return ops::mse_loss(ops::add(ops::mul(ops::sigmoid(y), x), x), t);
    };
    const auto r = grad_check(f, {x, w});
    CHECK(r.max_rel_error < kOpTolerance);
  }
}
