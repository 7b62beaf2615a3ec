#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "latentlab/tensor.hpp"

// Differentiable primitives. Every function records a graph node when any
// input requires a gradient and grad mode is enabled.
//
// Broadcasting (add/sub/mul) is restricted to leading axes: one operand's
// shape must equal the trailing axes of the other's, or hold a single value.
namespace latentlab {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);
Tensor neg(const Tensor& a);

// (n, k) x (k, m) -> (n, m)
Tensor matmul(const Tensor& a, const Tensor& b);
// 2-D transpose.
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor relu(const Tensor& a);
Tensor square(const Tensor& a);
// Elementwise max(a, floor); gradient passes only where a > floor.
Tensor maximum(const Tensor& a, double floor);
// Elementwise clamp; gradient passes only strictly inside [lo, hi].
Tensor clamp(const Tensor& a, double lo, double hi);

// Reductions to a scalar (shape ()).
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
// Reductions over the last axis, keeping it with extent 1.
Tensor sum_last(const Tensor& a);
Tensor mean_last(const Tensor& a);
// Mean over the first axis of a 2-D tensor: (n, m) -> (m).
Tensor mean_rows(const Tensor& a);

Tensor softmax_last(const Tensor& a);
Tensor log_softmax_last(const Tensor& a);
// Normalizes each last-axis row to zero mean and unit variance (no affine).
Tensor layer_norm_last(const Tensor& a, double eps = 1e-5);

// Row gather from a (V, E) table.
Tensor embedding(const Tensor& table, std::span<const std::size_t> ids);
// Concatenate along `axis`; all other extents must agree.
Tensor concat(const std::vector<Tensor>& parts, std::size_t axis);
Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t length);
// out[..., j] = a[..., index[j]]
Tensor gather_last(const Tensor& a, std::span<const std::size_t> index);

// Mean over rows of -log softmax(logits)[target]. logits: (n, V).
Tensor cross_entropy(const Tensor& logits, std::span<const std::size_t> targets);

// Identity in value, blocks all gradient flow.
Tensor stop_gradient(const Tensor& a);

}  // namespace latentlab
