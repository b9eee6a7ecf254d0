#pragma once

#include <span>
#include <vector>

#include "sleepfusion/ad/tape.hpp"
#include "sleepfusion/ad/tensor.hpp"

namespace sleepfusion::ad {

// Differentiable primitives. Every op validates shapes, checks its output for
// NaN/Inf (throwing NumericError with the op name), and records a backward
// step on the active tape when any input requires grad.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);
/// x[..., d] + bias[d], broadcast over leading axes.
Tensor add_bias(const Tensor& x, const Tensor& bias);

/// Matrix product. Accepts [m,k]x[k,n], [B,m,k]x[k,n] and [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// a[..,m,k] x b[..,n,k]^T -> [..,m,n], same batching rules as matmul.
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& x);  // 2-D only

/// Copy into a new shape with the same numel; gradient passes through.
Tensor reshape(const Tensor& x, Shape shape);
/// Concatenate along the last axis; all inputs share leading extents.
Tensor concat_last(std::span<const Tensor> parts);
/// Concatenate two [B,S,d] tensors along the token axis.
Tensor concat_tokens(const Tensor& a, const Tensor& b);
/// Prepend a learnable d-vector as token 0 of every batch row: [B,S,d] -> [B,S+1,d].
Tensor prepend_token(const Tensor& x, const Tensor& token);
/// Select one token position: [B,S,d] -> [B,d].
Tensor take_token(const Tensor& x, int position);

Tensor relu(const Tensor& x);
Tensor softmax(const Tensor& x, int axis);
/// Normalizes over the last axis. gamma/beta are [d] vectors.
Tensor layernorm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                 double eps = 1e-5);
/// Training mode zeroes each element with probability p and scales survivors
/// by 1/(1-p); eval mode is the identity and consumes no randomness.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);
/// Attention bias from a relative-position table: out[b,i,j] =
/// dot(q[b,i,:], table[clip(j-i, -radius, radius) + radius, :]).
Tensor relative_position_bias(const Tensor& q, const Tensor& table, int keys,
                              int radius);
/// Row-wise x / max(||x||, 1e-12) over the last axis of a 2-D tensor.
Tensor l2_normalize_rows(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

/// Mean negative log-softmax probability of integer labels in [0, C).
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);
/// Same with one distribution row per logit row (one-hot / identity targets).
Tensor cross_entropy(const Tensor& logits, const Tensor& target_rows);

}  // namespace sleepfusion::ad
