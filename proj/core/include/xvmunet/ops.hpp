#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "xvmunet/autodiff.hpp"

// Differentiable operations over Vars. Every function records one node on the
// tape shared by its operands.
namespace xvmunet::ops {

// Elementwise, identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

// Multiply / divide every element by a single-element Var.
Var scale_by(const Var& x, const Var& s);
Var div_by(const Var& x, const Var& s);

Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double c);
Var neg(const Var& x);

Var sigmoid(const Var& x);
Var tanh(const Var& x);
Var relu(const Var& x);
Var silu(const Var& x);
// Exact form 0.5 x (1 + erf(x / sqrt 2)).
Var gelu(const Var& x);
Var softplus(const Var& x);
Var exp(const Var& x);
Var abs(const Var& x);
// max(x, lo); gradient is zero where the floor is active.
Var clamp_min(const Var& x, double lo);

Var sum(const Var& x);
Var mean(const Var& x);

// [m x k] * [k x n]
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);
// x[..., n] + b[n], broadcast over all leading positions.
Var add_bias(const Var& x, const Var& b);
// x[C, H, W] + b[C]
Var add_channel_bias(const Var& x, const Var& b);

Var reshape(const Var& x, Shape shape);
// Rank-3 axis permutation: out.dim(i) == in.dim(axes[i]).
Var permute3(const Var& x, std::array<std::size_t, 3> axes);
inline Var chw_to_hwc(const Var& x) { return permute3(x, {1, 2, 0}); }
inline Var hwc_to_chw(const Var& x) { return permute3(x, {2, 0, 1}); }

// out row i = x row index[i] for a rank-2 x.
Var gather_rows(const Var& x, std::span<const std::size_t> index);
// Sub-range [begin, end) of the leading axis.
Var slice0(const Var& x, std::size_t begin, std::size_t end);
// Concatenate along the leading axis; trailing extents must agree.
Var concat0(std::span<const Var> parts);
// Columns [begin, end) of a rank-2 x.
Var slice_cols(const Var& x, std::size_t begin, std::size_t end);

// Normalizes over the last axis, then gamma * xhat + beta.
Var layernorm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Cross-correlation. x[C_in, H, W], kernel[C_out, C_in / groups, kh, kw].
// Output extents must come out integral; otherwise ConfigError.
Var conv2d(const Var& x, const Var& kernel, std::size_t stride = 1, std::size_t padding = 0,
           std::size_t groups = 1);
// x[C_in, H, W], kernel[C_in, C_out, kh, kw]; output [(H-1)*stride + kh, ...].
Var conv_transpose2d(const Var& x, const Var& kernel, std::size_t stride);

}  // namespace xvmunet::ops
