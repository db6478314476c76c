#pragma once

#include <cstdint>
#include <vector>

#include "lcd/nn/tensor.hpp"

namespace lcd::nn {

/// Row/key validity flags; an empty mask means "all valid".
using Mask = std::vector<std::uint8_t>;

// Dense algebra, 2-D unless noted.
template <typename T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);     // [m,k]x[k,n]
template <typename T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);  // [m,k]x[n,k]^T
template <typename T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <typename T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);  // [m,n] + [n]
template <typename T> Tensor<T> scale(const Tensor<T>& x, T factor);
template <typename T> Tensor<T> add_scalar(const Tensor<T>& x, T value);

/// y = x W + b
template <typename T> Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b);

// Element-wise nonlinearities.
template <typename T> Tensor<T> leaky_relu(const Tensor<T>& x, T alpha = T(0.3));
template <typename T> Tensor<T> relu(const Tensor<T>& x);
template <typename T> Tensor<T> tanh(const Tensor<T>& x);

/// Softmax over the last axis of a 2-D tensor. Masked columns get probability 0.
template <typename T> Tensor<T> softmax_rows(const Tensor<T>& x, const Mask& column_mask = {});

// Shape plumbing.
template <typename T> Tensor<T> concat_cols(const std::vector<Tensor<T>>& parts);
template <typename T> Tensor<T> slice_cols(const Tensor<T>& x, std::size_t start, std::size_t count);
template <typename T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);
template <typename T> Tensor<T> mask_rows(const Tensor<T>& x, const Mask& row_mask);

// Reductions.
template <typename T> Tensor<T> sum(const Tensor<T>& x);
template <typename T> Tensor<T> mean(const Tensor<T>& x);

/// Rows scaled to unit Euclidean norm; throws on rows with norm <= 1e-12.
template <typename T> Tensor<T> l2_normalize_rows(const Tensor<T>& x);

/// Euclidean distance between two equally shaped tensors, as a scalar.
template <typename T> Tensor<T> distance(const Tensor<T>& a, const Tensor<T>& b);


/// Per-column batch normalization over valid rows; masked rows come out zero.
/// Training mode updates the running statistics: r = momentum * r + (1 - momentum) * batch.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     Tensor<T>& running_mean, Tensor<T>& running_var, bool training,
                     const Mask& row_mask = {}, T momentum = T(0.9), T eps = T(1e-5));

/// Stride-1 cross-correlation with zero padding. x: [N,C,H,W], w: [O,C,k,k], b: [O].
template <typename T> Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, int padding);

/// Non-overlapping k x k window maximum. x: [N,C,H,W] -> [N,C,H/k,W/k].
template <typename T> Tensor<T> maxpool2d(const Tensor<T>& x, int k);

/// S[i,j] = sum_c w[c] * tanh(q[i,c] + k[j,c]).
template <typename T> Tensor<T> additive_scores(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& w);

/// softmax(Q K^T / sqrt(d_k)) V over valid keys.
template <typename T>
Tensor<T> dot_attention_head(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v, const Mask& key_mask = {});

/// softmax(w^T tanh(Q Wq + K Wk)) V over valid keys. q: [Nq,d_model], k: [Nk,d_model].
template <typename T>
Tensor<T> additive_attention_head(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                                  const Tensor<T>& wq, const Tensor<T>& wk, const Tensor<T>& w,
                                  const Mask& key_mask = {});

// Clustering losses over label distributions P [N, d_label]; column 0 is the background bin.

/// -sum_i [bg_i log t_bg + (1 - bg_i) log sum_k t_k], probabilities clamped to [1e-7, 1].
template <typename T>
Tensor<T> loss_background(const Tensor<T>& p, const std::vector<std::uint8_t>& is_background,
                          const Mask& row_mask = {});

/// Symmetric KL pull for same-instance pairs, hinged push with `margin` otherwise, summed over
/// unordered pairs of valid non-background lines. Labels < 0 mark background lines. With
/// `detach_reference` the first argument of each KL acts as a constant.
template <typename T>
Tensor<T> loss_pairwise(const Tensor<T>& p, const std::vector<int>& labels, const Mask& row_mask = {},
                        T margin = T(2), bool detach_reference = true);

}  // namespace lcd::nn
