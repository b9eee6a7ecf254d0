#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sleepfusion/ad/tensor.hpp"

namespace sleepfusion::ad {

// Named parameter registry. std::map keeps iteration order deterministic,
// which makes optimizer updates and checkpoints reproducible. Sharing is
// expressed by registering one tensor once and handing the same handle to
// several modules.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Tensor t);
  Tensor& get(const std::string& name);
  const Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const;

  const std::map<std::string, Tensor>& entries() const { return params_; }
  std::map<std::string, Tensor>& entries() { return params_; }

  void zero_grad();
  std::size_t total_parameters() const;

 private:
  std::map<std::string, Tensor> params_;
};

struct AdamConfig {
  double lr = 1e-4;
  double weight_decay = 1e-4;  // classic L2, added to the gradient
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamSlot {
  std::vector<double> m;  // first moment
  std::vector<double> v;  // second moment
};

struct AdamState {
  std::map<std::string, AdamSlot> slots;
  std::int64_t step = 0;
};

/// One bias-corrected Adam update over every parameter in the store, reading
/// gradients from the tensors' grad buffers. Slots are created on first use;
/// a slot whose shape no longer matches its parameter is an error.
void adam_step(ParameterStore& params, AdamState& state, const AdamConfig& cfg);

}  // namespace sleepfusion::ad
