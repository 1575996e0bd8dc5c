#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace attflow {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  bool is_leaf = true;
};

// Dense row-major double tensor with shared-handle semantics: copies alias the
// same storage. Use clone() for a deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor(Shape{1}, v, requires_grad);
  }

  bool defined() const noexcept { return impl_ != nullptr; }
  const Shape& shape() const;
  std::size_t dim(std::size_t i) const;
  std::size_t ndim() const { return shape().size(); }
  std::size_t numel() const;

  std::span<double> data();
  std::span<const double> data() const;
  double item() const;

  bool requires_grad() const;
  void set_requires_grad(bool on);
  bool is_leaf() const;

  bool has_grad() const;
  // Gradient buffer, allocated (zero-filled) on first access.
  std::span<double> grad();
  std::span<const double> grad() const;
  void zero_grad();
  void release_grad();

  Tensor clone() const;   // deep copy, detached, no grad
  Tensor detach() const;  // untracked value copy

  TensorImpl* impl() const noexcept { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& handle() const noexcept { return impl_; }

  // Internal: wrap an op result; requires_grad set from inputs.
  static Tensor make_result(Shape shape, std::vector<double> values, bool requires_grad);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

}  // namespace attflow
