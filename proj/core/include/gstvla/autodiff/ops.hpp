#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "gstvla/autodiff/tensor.hpp"

namespace gstvla::ad {

// Elementwise binary ops broadcast numpy-style (trailing dims aligned,
// extents equal or 1).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);

Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);
Tensor neg(const Tensor& a);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sin(const Tensor& a);
Tensor cos(const Tensor& a);
Tensor tanh(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor square(const Tensor& a);
/// Exact (erf) GELU.
Tensor gelu(const Tensor& a);
Tensor silu(const Tensor& a);
/// max(a, floor) with zero gradient below the floor.
Tensor clamp_min(const Tensor& a, double floor);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// [m,k] x [n,k]^T -> [m,n]
Tensor matmul_nt(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor softmax_lastdim(const Tensor& a);
Tensor log_softmax_lastdim(const Tensor& a);
/// Row-wise normalization over the last dim followed by gain and bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
/// Reduction of a rank-2 tensor along `axis`; the reduced axis is dropped.
Tensor sum(const Tensor& a, int axis);
Tensor mean(const Tensor& a, int axis);

/// Concatenation of rank-2 tensors (rank-1 for axis 0).
Tensor concat(const std::vector<Tensor>& parts, int axis);
/// Half-open range [begin, end) along `axis` of a rank-1 or rank-2 tensor.
Tensor slice(const Tensor& a, int axis, std::size_t begin, std::size_t end);

/// Row gather [n,d] -> [idx.size(), d]; backward scatters.
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> idx);
/// Scatter-add rows of [m,d] into a zero [rows,d] tensor at idx.
Tensor scatter_add_rows(const Tensor& a, std::span<const std::size_t> idx, std::size_t rows);
/// Flat element gather -> rank-1 tensor.
Tensor take(const Tensor& a, std::span<const std::size_t> flat_idx);

/// Mean token-level cross entropy of `logits` [T,V] against `targets`;
/// entries < 0 are ignored. Returns exact zero (no graph) when every target is ignored.
Tensor cross_entropy(const Tensor& logits, std::span<const std::int64_t> targets);

/// Mean of squared differences.
Tensor mse(const Tensor& a, const Tensor& b);

}  // namespace gstvla::ad
