#include "sleepfusion/ad/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "sleepfusion/ad/tape.hpp"

namespace sleepfusion::ad {

double finite_diff_check(const std::function<Tensor()>& f, std::span<Tensor> params,
                         Rng& sampler, int coords_per_param, double eps) {
  // Determinism probe: two plain evaluations must agree bitwise.
  const double v0 = f().scalar();
  const double v1 = f().scalar();
  if (v0 != v1) {
    throw NumericError("finite_diff_check: function is not deterministic");
  }

  for (Tensor& p : params) p.zero_grad();
  std::vector<std::vector<std::size_t>> coords(params.size());
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    const std::size_t n = params[pi].size();
    const int take = std::min<std::size_t>(coords_per_param, n);
    for (int c = 0; c < take; ++c) coords[pi].push_back(sampler.below(n));
  }

  std::vector<std::vector<double>> g_ad(params.size());
  {
    Tape tape;
    Tensor loss = f();
    tape.backward(loss);
    for (std::size_t pi = 0; pi < params.size(); ++pi) g_ad[pi] = params[pi].grad();
  }

  double max_rel = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    auto& vals = params[pi].mutable_values();
    for (std::size_t idx : coords[pi]) {
      const double orig = vals[idx];
      vals[idx] = orig + eps;
      const double fp = f().scalar();
      vals[idx] = orig - eps;
      const double fm = f().scalar();
      vals[idx] = orig;
      const double g_fd = (fp - fm) / (2.0 * eps);
      const double g = g_ad[pi][idx];
      const double rel = std::abs(g - g_fd) / (std::abs(g) + std::abs(g_fd) + 1e-12);
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

}  // namespace sleepfusion::ad
