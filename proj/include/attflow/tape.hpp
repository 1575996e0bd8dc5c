#pragma once

#include <cstddef>
#include <functional>
#include <string_view>
#include <vector>

#include "attflow/tensor.hpp"

namespace attflow {

// Ordered record of executed differentiable operations. Each thread owns one
// active tape; ops whose inputs require gradients append an entry to it.
class Tape {
 public:
  struct Entry {
    std::string_view op;
    std::vector<Tensor> inputs;
    Tensor output;
    // Reads output.grad() and accumulates into the grads of inputs that require them.
    std::function<void(const Entry&)> backward;
  };

  static Tape& current();

  bool recording() const noexcept { return enabled_; }
  void record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
              std::function<void(const Entry&)> backward);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::vector<Entry>& entries() const noexcept { return entries_; }
  void clear();

  // Replays entries in reverse execution order, each exactly once, then clears.
  // Optionally reports the visiting order (indices into entries()).
  void backward(Tensor& loss, std::vector<std::size_t>* visit_order = nullptr);

 private:
  friend class NoGradGuard;
  std::vector<Entry> entries_;
  bool enabled_ = true;
};

// Seeds d(loss)/d(loss) = 1 and backpropagates over the current thread's tape.
// Leaf gradients accumulate across calls; call zero_grad() to reset.
void backward(Tensor& loss);

class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace attflow
