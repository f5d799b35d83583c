// Copyright 2026 The AALBERT Authors
// SPDX-License-Identifier: Apache-2.0

// Differentiable primitives. Matrices are row-major 2-D tensors; vectors are
// 1-D. Every op validates shapes and throws ShapeError naming the op and the
// offending shapes.

#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "aalbert/rng.hpp"
#include "aalbert/tensor.hpp"

namespace aalbert {

inline constexpr double kLayerNormEpsilon = 1e-5;

// [m,k] x [k,n] -> [m,n]
template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// Adds a length-n vector to every row of an [m,n] matrix.
template <typename T>
Tensor<T> add_row(const Tensor<T>& a, const Tensor<T>& bias);

template <typename T>
Tensor<T> scale(const Tensor<T>& a, T factor);

// Multiplies every element by a one-element tensor.
template <typename T>
Tensor<T> mul_scalar(const Tensor<T>& a, const Tensor<T>& s);

template <typename T>
Tensor<T> transpose(const Tensor<T>& a);

template <typename T>
Tensor<T> reshape(const Tensor<T>& a, Shape shape);

// Softmax over the last axis, max-subtracted.
template <typename T>
Tensor<T> softmax(const Tensor<T>& a);

// Normalizes each row over the last axis, then applies gamma/beta.
template <typename T>
Tensor<T> layer_norm(const Tensor<T>& a, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T epsilon = T(kLayerNormEpsilon));

// tanh approximation
template <typename T>
Tensor<T> gelu(const Tensor<T>& a);

// Mean absolute difference over the rows selected by row_mask (nonzero =
// selected) and all columns. With no selected row the result is a constant 0.
// Gradients flow to `predicted` only.
template <typename T>
Tensor<T> l1_loss(const Tensor<T>& predicted, const Tensor<T>& target,
                  std::span<const std::uint8_t> row_mask);

// Mean softmax cross-entropy of [n,c] logits against n class indices.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const int> labels);

// Mean over axis 0 ([m,n] -> [1,n]) or axis 1 ([m,n] -> [m,1]).
template <typename T>
Tensor<T> mean(const Tensor<T>& a, std::size_t axis);

template <typename T>
Tensor<T> sum(const Tensor<T>& a);

// Concatenates matrices along axis 0 (rows) or 1 (columns).
template <typename T>
Tensor<T> concat(std::span<const Tensor<T>> parts, std::size_t axis);

// Columns [begin, end) of a matrix.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& a, std::size_t begin, std::size_t end);

// x W + b with W stored [in, out].
template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias);

// Inverted dropout; identity when rate == 0.
template <typename T>
Tensor<T> dropout(const Tensor<T>& a, double rate, Rng& rng);

// sum_l weights[l] * parts[l]; all parts share one shape, weights has one
// element per part.
template <typename T>
Tensor<T> weighted_sum(std::span<const Tensor<T>> parts, const Tensor<T>& weights);

}  // namespace aalbert
