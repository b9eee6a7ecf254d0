#include "sleepfusion/ad/tensor.hpp"

#include <cmath>
#include <sstream>

namespace sleepfusion::ad {

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (int d : shape) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(shape));
    n *= static_cast<std::size_t>(d);
  }
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

Tensor make_tensor(Shape shape, bool requires_grad) {
  auto node = std::make_shared<detail::Node>();
  node->values.resize(shape_numel(shape));
  node->shape = std::move(shape);
  node->requires_grad = requires_grad;
  return Tensor(std::move(node));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  std::fill(t.node_->values.begin(), t.node_->values.end(), value);
  return t;
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not match shape " + shape_str(shape));
  }
  Tensor t = make_tensor(std::move(shape), requires_grad);
  t.node_->values = std::move(values);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stddev, bool requires_grad) {
  Tensor t = make_tensor(std::move(shape), requires_grad);
  for (auto& v : t.node_->values) v = rng.normal(0.0, stddev);
  return t;
}

Tensor Tensor::glorot(Shape shape, Rng& rng, bool requires_grad) {
  if (shape.size() != 2) throw ShapeError("glorot init expects a 2-D shape");
  const double limit = std::sqrt(6.0 / (shape[0] + shape[1]));
  Tensor t = make_tensor(std::move(shape), requires_grad);
  for (auto& v : t.node_->values) v = rng.uniform(-limit, limit);
  return t;
}

int Tensor::dim(int i) const {
  const int nd = ndim();
  if (i < 0) i += nd;
  if (i < 0 || i >= nd) throw ShapeError("axis out of range for " + shape_str(shape()));
  return node_->shape[i];
}

double Tensor::scalar() const {
  if (!node_ || node_->values.size() != 1) {
    throw ShapeError("expected a scalar tensor, got " +
                     (node_ ? shape_str(shape()) : std::string("<empty>")));
  }
  return node_->values[0];
}

void Tensor::set_requires_grad(bool rg) {
  node_->requires_grad = rg;
  if (!rg) node_->grad.clear();
}

const std::vector<double>& Tensor::grad() const {
  if (!requires_grad()) throw ShapeError("grad requested on a tensor without requires_grad");
  const_cast<detail::Node*>(node_.get())->ensure_grad();
  return node_->grad;
}

std::vector<double>& Tensor::mutable_grad() {
  if (!requires_grad()) throw ShapeError("grad requested on a tensor without requires_grad");
  node_->ensure_grad();
  return node_->grad;
}

void Tensor::zero_grad() {
  if (node_) node_->grad.assign(node_->values.size(), 0.0);
}

}  // namespace sleepfusion::ad
