#pragma once

#include <cstddef>
#include <vector>

#include "akmnet/graph.hpp"

// Differentiable primitives. Every function validates operand shapes and
// throws ShapeError naming the primitive on mismatch. Broadcasting is limited
// to the two forms the model needs: a bias along the last axis and a scale
// along the leading axis.
namespace akmnet::nn {

template <typename T> Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> sub(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T> Var<T> scale(const Var<T>& a, T factor);
template <typename T> Var<T> add_scalar(const Var<T>& a, T offset);

/// [m,k] x [k,n] -> [m,n]
template <typename T> Var<T> matmul(const Var<T>& a, const Var<T>& b);
/// x[..., n] + bias[n]
template <typename T> Var<T> add_bias(const Var<T>& x, const Var<T>& bias);
template <typename T> Var<T> affine(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T> Var<T> sigmoid(const Var<T>& x);
template <typename T> Var<T> tanh(const Var<T>& x);
template <typename T> Var<T> relu(const Var<T>& x);

/// Softmax / log-softmax along the last axis.
template <typename T> Var<T> softmax(const Var<T>& x);
template <typename T> Var<T> log_softmax(const Var<T>& x);

/// Full reductions to a rank-0 tensor. max() routes its gradient to the
/// earliest maximal entry.
template <typename T> Var<T> sum(const Var<T>& x);
template <typename T> Var<T> mean(const Var<T>& x);
template <typename T> Var<T> max(const Var<T>& x);
template <typename T> Var<T> l2_norm(const Var<T>& x);

/// Row-wise cosine similarity of rows[R,C] against v[C]. The denominator is
/// max(|row||v|, eps); a zero-norm operand yields 0 with zero gradient.
template <typename T>
Var<T> cosine_similarity(const Var<T>& rows, const Var<T>& v, T eps = T(1e-8));

/// rows[R,C] . v[C] -> [R], each row summed in column order on its own, so
/// a row's result does not depend on its position.
template <typename T> Var<T> row_dot(const Var<T>& rows, const Var<T>& v);
/// sum_r w[r] * rows[r,:] -> [C]. Each column adds its terms in ascending
/// order, so the result is bit-identical under any permutation of the rows.
template <typename T> Var<T> weighted_row_sum(const Var<T>& rows, const Var<T>& w);
/// Sum of the values in ascending order (invariant under reordering).
template <typename T> T sorted_sum(std::vector<T> values);

template <typename T> Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
/// Rows of x along axis 0; backward scatters into the source rows.
template <typename T> Var<T> gather(const Var<T>& x, const std::vector<std::size_t>& indices);
template <typename T> Var<T> reshape(const Var<T>& x, Shape shape);
/// Swaps the last two axes.
template <typename T> Var<T> transpose_last(const Var<T>& x);

/// x[B,Ci,H,W] * w[Co,Ci,k,k] -> [B,Co,Ho,Wo], zero padding, no bias.
template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, std::size_t stride, std::size_t padding);
/// Normalizes each (frame, channel) plane over its own spatial grid, then
/// applies a learnable per-channel scale and shift.
template <typename T>
Var<T> channel_norm(const Var<T>& x, const Var<T>& gamma, const Var<T>& beta, T eps = T(1e-5));
/// [B,C,H,W] -> [B,C] mean over H,W.
template <typename T> Var<T> spatial_mean(const Var<T>& x);
/// x[B,...] * s[B] broadcast along the leading axis.
template <typename T> Var<T> scale_leading(const Var<T>& x, const Var<T>& s);

}  // namespace akmnet::nn
