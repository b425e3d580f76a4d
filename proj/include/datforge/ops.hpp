#pragma once

// Differentiable operations recorded on a Tape. Rank-1 tensors act as a
// single row wherever a matrix is expected.

#include <cstddef>
#include <span>

#include "datforge/tape.hpp"

namespace datforge {

/// out[i,j] = sum_k x[i,k] * W[k,j] + b[j]
Var linear(const Var& x, const Var& weight, const Var& bias);

enum class Activation { relu, sigmoid, softmax_rows, log };

Var activation(const Var& x, Activation kind);
Var relu(const Var& x);
Var sigmoid(const Var& x);
/// Row-wise softmax; every row sums to one.
Var softmax_rows(const Var& x);
/// Natural log; every entry must be > 0.
Var log(const Var& x);
/// Row-wise x - logsumexp(x).
Var log_softmax_rows(const Var& x);

/// Gradient reversal: forward is the identity, backward multiplies the
/// incoming gradient by -lambda. lambda must be > 0.
Var grad_reverse(const Var& x, double lambda);

/// Forward identity that blocks all gradient flow.
Var stop_gradient(const Var& x);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
/// scale * x + shift
Var affine(const Var& x, double scale, double shift = 0.0);
/// Element-wise product with a constant tensor of the same shape.
Var mul_const(const Var& x, const Tensor& c);
/// Clamp to [lo, hi]; gradient passes only where lo <= x <= hi.
Var clamp(const Var& x, double lo, double hi);

/// Each row divided by its root mean square: x / sqrt(mean(x^2) + eps).
/// No learned gain or bias; an all-zero row stays zero.
Var rms_normalize_rows(const Var& x, double eps = 1e-6);

Var sum(const Var& x);
Var mean(const Var& x);

/// Stacked rows of several sequences -> one mean row per sequence.
Var mean_pool_segments(const Var& x, std::span<const std::size_t> lengths);
Var slice_rows(const Var& x, std::size_t begin, std::size_t count);
Var concat_rows(const Var& a, const Var& b);

/// mean((x - target)^2) over all entries.
Var mse(const Var& x, const Tensor& target);

}  // namespace datforge
