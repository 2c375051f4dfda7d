// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adanas/autodiff.hpp"

namespace adanas {

// Elementwise. Binary ops require identical shapes.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
Var relu(Var a);
Var tanh(Var a);
Var exp(Var a);
/// Natural log; inputs must be positive.
Var log(Var a);

Var sum(Var a);
Var mean(Var a);
Var reshape(Var a, Shape shape);
/// Concatenate along `axis`; all other dimensions must agree.
Var concat(const std::vector<Var>& parts, std::size_t axis);

/// [m,k] x [k,n] -> [m,n]
Var matmul(Var a, Var b);
/// x[B,in] W[out,in] + b[out] -> [B,out]
Var affine(Var x, Var weight, Var bias);

/// table[V,C], ids row-major [B,L] -> [B,C,L]
Var embedding(Var table, std::span<const int> ids, std::size_t batch, std::size_t length);

/// Cross-correlation with symmetric zero padding of (k-1)*dilation/2, so the
/// output length equals the input length. kernel is [C_out, C_in, k], k odd.
Var conv1d(Var input, Var kernel, std::size_t dilation);
/// x[B,C,L] + bias[C] broadcast over batch and positions.
Var add_channel_bias(Var x, Var bias);

enum class PoolKind { max, avg };
/// Length-preserving pooling, window k (odd) with SAME padding. Average
/// divides by the number of in-bounds positions; max sends gradient to the
/// lowest index among tied maxima.
Var pool1d(Var input, PoolKind kind, std::size_t k = 3);

enum class BnMode { train, eval };

struct BatchNormStats {
  explicit BatchNormStats(std::size_t channels = 0)
      : running_mean(channels, 0.0), running_var(channels, 1.0) {}
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  static constexpr double eps = 1e-5;
};

/// Per-channel normalization of x[B,C,L] over B*L. Train mode uses batch
/// statistics (biased variance) and updates `stats`; eval mode reads them.
Var batchnorm(Var x, Var gamma, Var beta, BatchNormStats& stats, BnMode mode);

Var softmax(Var x, std::size_t axis);
Var log_softmax(Var x, std::size_t axis);

/// Mean over the batch of -sum(target * log_softmax(logits)). Rows of the
/// [B,n] target must each sum to 1 within 1e-6.
Var softmax_xent(Var logits, const Tensor& target);

/// sum_i w_i * xs[i]. weights is [n] (shared) or [B,n] (per leading index of
/// each xs[i], which must all have the same shape).
Var weighted_sum(const std::vector<Var>& xs, Var weights);

/// x[B,C,L] -> [B,C], mean over positions.
Var mean_positions(Var x);
/// x[B,C,L], u[C] -> [B,L] with out[b,l] = sum_c u[c] x[b,c,l].
Var contract_channels(Var x, Var u);
/// x[B,C,L], a[B,L] -> [B,C] with out[b,c] = sum_l a[b,l] x[b,c,l].
Var attend_positions(Var x, Var a);

/// Forward: exact one-hot at argmax (lowest index on ties). Backward:
/// identity, i.e. the gradient passes through as if the output were `y`.
Var straight_through(Var y);
/// m[R,n] -> [n], row `index`.
Var row(Var m, std::size_t index);
/// v[n] -> [1] holding v[index].
Var select(Var v, std::size_t index);
/// x * s for a one-element s.
Var scale_by(Var x, Var s);

std::size_t argmax(std::span<const double> v);

}  // namespace adanas
