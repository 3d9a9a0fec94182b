#include "vpa/tensor.hpp"

#include <sstream>
#include <unordered_set>

namespace vpa {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

std::size_t shape_numel(const Shape& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  return from(std::move(s), {}, requires_grad);
}

Tensor Tensor::full(Shape s, double v, bool requires_grad) {
  std::vector<double> vals(shape_numel(s), v);
  return from(std::move(s), std::move(vals), requires_grad);
}

Tensor Tensor::from(Shape s, std::vector<double> v, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  const std::size_t n = shape_numel(s);
  if (v.empty()) v.assign(n, 0.0);
  if (v.size() != n)
    throw ShapeError("tensor init: " + std::to_string(v.size()) +
                     " values for shape " + shape_str(s));
  impl->shape = std::move(s);
  impl->values = std::move(v);
  impl->requires_grad = requires_grad;
  return wrap(std::move(impl));
}

Tensor Tensor::scalar(double v, bool requires_grad) {
  return from({1}, {v}, requires_grad);
}

Tensor Tensor::randn(Shape s, Rng& rng, double std, bool requires_grad) {
  std::vector<double> v(shape_numel(s));
  for (auto& x : v) x = rng.gauss(0.0, std);
  return from(std::move(s), std::move(v), requires_grad);
}

Tensor Tensor::wrap(std::shared_ptr<detail::TensorImpl> i) {
  Tensor t;
  t.impl_ = std::move(i);
  return t;
}

int Tensor::rows() const {
  return rank() == 1 ? 1 : impl_->shape[0];
}

int Tensor::cols() const {
  return rank() == 1 ? impl_->shape[0] : impl_->shape[rank() - 1];
}

std::vector<double>& Tensor::grad() const {
  impl_->ensure_grad();
  return impl_->grad;
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on non-scalar tensor " + shape_str(shape()));
  return impl_->values[0];
}

double Tensor::at(int i, int j) const {
  return impl_->values[static_cast<std::size_t>(i) * cols() + j];
}

void Tensor::zero_grad() {
  impl_->grad.assign(impl_->values.size(), 0.0);
}

Tensor make_node(Shape s, std::vector<double> v, std::vector<Tensor> parents,
                 std::function<void(detail::TensorImpl&)> backward) {
  bool needs = false;
  for (const auto& p : parents)
    if (p.requires_grad()) needs = true;
  Tensor out = Tensor::from(std::move(s), std::move(v), needs);
  if (needs) {
    auto impl = out.impl();
    impl->parents.reserve(parents.size());
    for (auto& p : parents) impl->parents.push_back(p.impl());
    detail::TensorImpl* raw = impl.get();
    impl->backward_fn = [raw, fn = std::move(backward)]() { fn(*raw); };
  }
  return out;
}

void backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward target must be scalar, got " +
                     shape_str(loss.shape()));
  auto root = loss.impl();
  if (!root->requires_grad)
    throw ConfigError("backward on a tensor with no graph");

  // iterative DFS post-order
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<detail::TensorImpl*> visited;
  struct Frame {
    detail::TensorImpl* node;
    std::size_t next_child;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  visited.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_child < f.node->parents.size()) {
      detail::TensorImpl* child = f.node->parents[f.next_child++].get();
      if (child->requires_grad && !visited.count(child)) {
        visited.insert(child);
        stack.push_back({child, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  root->ensure_grad();
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward_fn) (*it)->backward_fn();
  }
}

}  // namespace vpa
