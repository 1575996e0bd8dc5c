#include "attflow/tensor.hpp"

#include <algorithm>
#include <sstream>

#include "attflow/errors.hpp"

namespace attflow {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->data.assign(shape_numel(shape), fill);
  impl_->shape = std::move(shape);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  if (shape_numel(shape) != values.size()) {
    throw ParameterError("tensor: shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t(std::move(shape), std::move(values), requires_grad);
  t.impl_->is_leaf = false;
  return t;
}

namespace {
TensorImpl& checked(const std::shared_ptr<TensorImpl>& p) {
  if (!p) throw ParameterError("tensor: use of undefined tensor");
  return *p;
}
}  // namespace

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t i) const {
  const auto& s = shape();
  if (i >= s.size()) throw ParameterError("tensor: dim index out of range");
  return s[i];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<double> Tensor::data() { return checked(impl_).data; }
std::span<const double> Tensor::data() const { return checked(impl_).data; }

double Tensor::item() const {
  auto& im = checked(impl_);
  if (im.data.size() != 1) throw ParameterError("tensor: item() on non-scalar " + shape_str(im.shape));
  return im.data[0];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

void Tensor::set_requires_grad(bool on) {
  auto& im = checked(impl_);
  im.requires_grad = on;
  if (!on) im.grad.clear();
}

bool Tensor::is_leaf() const { return checked(impl_).is_leaf; }

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<double> Tensor::grad() {
  auto& im = checked(impl_);
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
  return im.grad;
}

std::span<const double> Tensor::grad() const {
  auto& im = checked(impl_);
  if (im.grad.empty()) im.grad.assign(im.data.size(), 0.0);
  return im.grad;
}

void Tensor::zero_grad() {
  auto& im = checked(impl_);
  std::fill(im.grad.begin(), im.grad.end(), 0.0);
}

void Tensor::release_grad() { checked(impl_).grad = {}; }

Tensor Tensor::clone() const {
  auto& im = checked(impl_);
  return Tensor(im.shape, im.data, false);
}

Tensor Tensor::detach() const {
  auto& im = checked(impl_);
  auto view = std::make_shared<TensorImpl>();
  view->shape = im.shape;
  view->data = im.data;
  return Tensor(std::move(view));
}

}  // namespace attflow
