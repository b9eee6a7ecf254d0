#include "sleepfusion/ad/adam.hpp"

#include <cmath>

namespace sleepfusion::ad {

Tensor& ParameterStore::add(const std::string& name, Tensor t) {
  auto [it, inserted] = params_.emplace(name, std::move(t));
  if (!inserted) throw ConfigError("parameter already registered: " + name);
  return it->second;
}

Tensor& ParameterStore::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

const Tensor& ParameterStore::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ConfigError("unknown parameter: " + name);
  return it->second;
}

bool ParameterStore::contains(const std::string& name) const {
  return params_.count(name) != 0;
}

void ParameterStore::zero_grad() {
  for (auto& [name, t] : params_) t.zero_grad();
}

std::size_t ParameterStore::total_parameters() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params_) n += t.size();
  return n;
}

void adam_step(ParameterStore& params, AdamState& state, const AdamConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, t] : params.entries()) {
    auto& slot = state.slots[name];
    const std::size_t n = t.size();
    if (slot.m.empty()) {
      slot.m.assign(n, 0.0);
      slot.v.assign(n, 0.0);
    } else if (slot.m.size() != n || slot.v.size() != n) {
      throw ShapeError("adam_step: moment shape mismatch for " + name);
    }
    const auto& g = t.grad();
    auto& w = t.mutable_values();
    for (std::size_t i = 0; i < n; ++i) {
      const double gi = g[i] + cfg.weight_decay * w[i];
      slot.m[i] = cfg.beta1 * slot.m[i] + (1.0 - cfg.beta1) * gi;
      slot.v[i] = cfg.beta2 * slot.v[i] + (1.0 - cfg.beta2) * gi * gi;
      const double mhat = slot.m[i] / bc1;
      const double vhat = slot.v[i] / bc2;
      w[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

}  // namespace sleepfusion::ad
