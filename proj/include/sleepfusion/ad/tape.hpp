#pragma once

#include <functional>
#include <vector>

#include "sleepfusion/ad/tensor.hpp"

namespace sleepfusion::ad {

// Records primitive applications in creation order (which is a topological
// order by construction) and replays them in reverse on backward(). A tape is
// confined to one execution context: the constructor makes it the active tape
// for the current thread, the destructor restores the previous one.
class Tape {
 public:
  Tape();
  ~Tape();
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  /// The tape ops record onto, or nullptr when recording is off.
  static Tape* active();

  void record(std::function<void()> backward_step);
  std::size_t size() const { return steps_.size(); }

  /// Seeds d(loss)/d(loss)=1 and runs every recorded step once, in reverse.
  /// `loss` must be a scalar produced while this tape was active.
  void backward(const Tensor& loss);

 private:
  std::vector<std::function<void()>> steps_;
  bool consumed_ = false;
  Tape* previous_ = nullptr;
};

}  // namespace sleepfusion::ad
