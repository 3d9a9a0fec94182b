#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "vpa/errors.hpp"
#include "vpa/rng.hpp"

namespace vpa {

using Shape = std::vector<int>;

std::string shape_str(const Shape& s);
std::size_t shape_numel(const Shape& s);

class Tensor;

namespace detail {
struct TensorImpl {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // sized lazily, same numel as values
  bool requires_grad = false;
  // producing operation: parents plus a closure that scatters this node's
  // grad into the parents' grads
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward_fn;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};
}  // namespace detail

// Dense double-precision array participating in a dynamically built
// reverse-mode graph. Value-semantic handle over shared storage.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double v, bool requires_grad = false);
  static Tensor from(Shape s, std::vector<double> v,
                     bool requires_grad = false);
  static Tensor scalar(double v, bool requires_grad = false);
  static Tensor randn(Shape s, Rng& rng, double std,
                      bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t numel() const { return impl_->values.size(); }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  // 2D helpers; rank-1 tensors behave as a single row
  int rows() const;
  int cols() const;

  std::vector<double>& values() { return impl_->values; }
  const std::vector<double>& values() const { return impl_->values; }
  // shallow-const handle: grad is reachable and mutable through a const
  // Tensor, matching shared ownership of the impl
  std::vector<double>& grad() const;
  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  double item() const;
  double at(int i, int j) const;

  void zero_grad();

  // identity of the underlying storage (parameter identity)
  const void* id() const { return impl_.get(); }
  bool same_storage(const Tensor& o) const { return impl_ == o.impl_; }

  std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
  static Tensor wrap(std::shared_ptr<detail::TensorImpl> i);

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// make a graph node: output tensor whose backward_fn scatters into parents
Tensor make_node(Shape s, std::vector<double> v,
                 std::vector<Tensor> parents,
                 std::function<void(detail::TensorImpl&)> backward);

// Reverse-mode sweep from a scalar loss. Visits each node exactly once in
// reverse topological order; grads accumulate across repeated calls.
void backward(const Tensor& loss);

}  // namespace vpa
