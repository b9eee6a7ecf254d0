#include "sleepfusion/ad/tape.hpp"

namespace sleepfusion::ad {

namespace {
thread_local Tape* g_active = nullptr;
}

Tape::Tape() {
  previous_ = g_active;
  g_active = this;
}

Tape::~Tape() {
  g_active = previous_;
}

Tape* Tape::active() {
  return g_active;
}

void Tape::record(std::function<void()> backward_step) {
  steps_.push_back(std::move(backward_step));
}

void Tape::backward(const Tensor& loss) {
  if (consumed_) throw ShapeError("backward() called twice on the same tape");
  if (!loss.defined() || loss.size() != 1) {
    throw ShapeError("backward() requires a scalar loss");
  }
  if (!loss.requires_grad()) {
    throw ShapeError("backward() on a loss that requires no grad");
  }
  consumed_ = true;
  loss.node()->ensure_grad();
  loss.node()->grad[0] += 1.0;
  for (auto it = steps_.rbegin(); it != steps_.rend(); ++it) (*it)();
}

}  // namespace sleepfusion::ad
