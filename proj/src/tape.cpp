#include "attflow/tape.hpp"

#include "attflow/errors.hpp"

namespace attflow {

Tape& Tape::current() {
  thread_local Tape tape;
  return tape;
}

void Tape::record(std::string_view op, std::vector<Tensor> inputs, Tensor output,
                  std::function<void(const Entry&)> backward) {
  if (!enabled_) return;
  entries_.push_back(Entry{op, std::move(inputs), std::move(output), std::move(backward)});
}

void Tape::clear() { entries_.clear(); }

void Tape::backward(Tensor& loss, std::vector<std::size_t>* visit_order) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ParameterError("backward: loss must be a scalar, got " +
                         (loss.defined() ? shape_str(loss.shape()) : std::string("undefined")));
  }
  if (!loss.requires_grad()) {
    throw ParameterError("backward: loss was not produced by taped operations");
  }
  loss.grad()[0] += 1.0;
  for (std::size_t i = entries_.size(); i-- > 0;) {
    const Entry& e = entries_[i];
    if (!e.output.has_grad()) continue;  // does not contribute to the loss
    if (visit_order) visit_order->push_back(i);
    e.backward(e);
  }
  // Intermediate gradients are only meaningful during the sweep.
  for (auto& e : entries_) {
    if (!e.output.is_leaf()) e.output.impl()->grad = {};
  }
  entries_.clear();
}

void backward(Tensor& loss) { Tape::current().backward(loss); }

NoGradGuard::NoGradGuard() : previous_(Tape::current().enabled_) {
  Tape::current().enabled_ = false;
}

NoGradGuard::~NoGradGuard() { Tape::current().enabled_ = previous_; }

}  // namespace attflow
