#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "dpn/autograd.hpp"

namespace dpn {

// Elementwise, numpy-style broadcasting.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
Var add_scalar(Var a, double s);

Var relu(Var a);
Var sigmoid(Var a);
Var tanh(Var a);
/// Gradient passes only where lo <= a <= hi.
Var clamp(Var a, double lo, double hi);
/// Softmax along `axis` (negative counts from the back).
Var softmax(Var a, int axis);

/// [..., p, q] x [..., q, r] -> [..., p, r]; leading extents broadcast.
Var matmul(Var a, Var b);

Var reshape(Var a, Shape shape);
Var permute(Var a, const std::vector<std::size_t>& perm);
/// Swaps the two trailing axes.
Var transpose(Var a);
Var concat(const std::vector<Var>& xs, int axis);
Var slice(Var a, int axis, std::size_t start, std::size_t length);
Var broadcast_to(Var a, const Shape& shape);

Var sum(Var a, int axis, bool keepdim = false);
/// Mean with divisor equal to the extent along `axis`.
Var mean(Var a, int axis, bool keepdim = false);
Var sum_all(Var a);

/// Identity forward, zero gradient.
Var stop_gradient(Var a);

/// Scatter along the last axis: out[..., targets[k]] += a[..., k].
Var embed_columns(Var a, std::span<const std::size_t> targets, std::size_t out_cols);

enum class ConvMode { Full, Depthwise };

/// Zero-padded "same" 1-D convolution over time with odd kernel size k.
///   x: [t, n] or [B, t, n]
///   kernels: [k, n, c] shared, or [B, k, n, c] per instance
///   Full:      y[i] = sum_l kernels[l]^T x[i + l]            -> [.., t, c]
///   Depthwise: c must be 1, y[i, ch] = sum_l kernels[l, ch] x[i + l, ch] -> [.., t, n]
Var conv1d(Var x, Var kernels, ConvMode mode = ConvMode::Full);

struct BatchNormState {
  Tensor running_mean;
  Tensor running_var;
};

/// Batch normalization over axis 0 of x: [b, d]. Training mode normalizes by
/// biased batch statistics and folds them into `state` with `momentum`.
Var batchnorm(Var x, Var gamma, Var beta, BatchNormState& state, bool training, double momentum = 0.9,
              double eps = 1e-5);

/// Row gather from an embedding table; the backward pass scatters into
/// `table.grad` and marks the touched rows.
Var gather_rows(Graph& g, Parameter& table, std::span<const std::int64_t> ids, std::string_view field);

/// Mean binary cross-entropy on logits, numerically stable.
Var bce_with_logits(Var logits, std::span<const double> labels);

}  // namespace dpn
