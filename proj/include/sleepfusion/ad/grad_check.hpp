#pragma once

#include <functional>
#include <span>

#include "sleepfusion/ad/tensor.hpp"

namespace sleepfusion::ad {

// Central-difference verification of reverse-mode gradients.
//
// `f` must rebuild its graph from the given parameter tensors on every call
// and return a scalar. It is evaluated twice up front; any value difference
// means it is non-deterministic (dropout left on, unfixed rng) and a
// NumericError is thrown. Coordinates are sampled per parameter with
// `sampler`; the result is the max over sampled coordinates of
// |g_ad - g_fd| / (|g_ad| + |g_fd| + 1e-12).
double finite_diff_check(const std::function<Tensor()>& f,
                         std::span<Tensor> params, Rng& sampler,
                         int coords_per_param = 5, double eps = 1e-5);

}  // namespace sleepfusion::ad
