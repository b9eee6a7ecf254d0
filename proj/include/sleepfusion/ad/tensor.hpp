#pragma once

#include <cstddef>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sleepfusion/ad/rng.hpp"

namespace sleepfusion::ad {

struct ShapeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// Raised when a forward op produces NaN/Inf, or a gradient check is handed a
// non-deterministic function.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {
struct Node {
  Shape shape;
  std::vector<double> values;
  std::vector<double> grad;  // allocated lazily, only when requires_grad
  bool requires_grad = false;

  void ensure_grad() {
    if (grad.size() != values.size()) grad.assign(values.size(), 0.0);
  }
};
}  // namespace detail

// Value-semantic handle to a shared dense node. Values are immutable after an
// op creates them (except explicit in-place parameter updates between tapes);
// grad is the only accumulator.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<double> values,
                     bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stddev = 1.0,
                      bool requires_grad = false);
  /// Glorot-uniform init for a [fan_in, fan_out] matrix.
  static Tensor glorot(Shape shape, Rng& rng, bool requires_grad = true);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->values.size(); }
  int dim(int i) const;
  int ndim() const { return static_cast<int>(node_->shape.size()); }

  const std::vector<double>& values() const { return node_->values; }
  std::vector<double>& mutable_values() { return node_->values; }
  double value_at(std::size_t i) const { return node_->values[i]; }
  /// Scalar accessor; throws unless numel == 1.
  double scalar() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  void set_requires_grad(bool rg);
  const std::vector<double>& grad() const;
  std::vector<double>& mutable_grad();
  void zero_grad();

  detail::Node* node() const { return node_.get(); }
  const std::shared_ptr<detail::Node>& node_ptr() const { return node_; }

  /// True when both handles reference the same storage (parameter aliasing).
  bool same_storage(const Tensor& other) const {
    return node_.get() == other.node_.get();
  }

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_tensor(Shape shape, bool requires_grad);
};

/// Allocates an uninitialised-value tensor (internal op plumbing).
Tensor make_tensor(Shape shape, bool requires_grad);

}  // namespace sleepfusion::ad
