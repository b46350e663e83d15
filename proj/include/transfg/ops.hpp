#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "transfg/tensor.hpp"

namespace transfg {

// Differentiable operations. Each takes the tape it records onto; the output
// requires a gradient iff the tape is recording and some input requires one.
// Matrices are rank-2 tensors; "rows" ops treat the last extent as the row
// length and every leading extent as a row index.

inline constexpr double kLayerNormEps = 1e-6;

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// a · bᵀ for a [m×k], b [n×k].
template <typename T>
Tensor<T> matmul_transposed(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

// x · w + bias, bias broadcast over rows. bias may be undefined.
template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias);

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a);

template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& a);

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps = kLayerNormEps);

// Tanh approximation of x·Φ(x).
template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x);

// Scales every row to unit Euclidean norm. Throws DegenerateInputError on a zero row.
template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& v);

// Mean over the batch of -log softmax(logits)[label].
template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::size_t> labels);

// Output row r is x row rows[r]. Repeated rows are allowed.
template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const std::size_t> rows);

// Builds [cls; patch tokens] + pos for every sample. patch_tokens is
// [batch·N × D], cls is [D] (or [1×D]), pos is [(N+1) × D].
template <typename T>
Tensor<T> prepend_cls_add_pos(Tape<T>& tape, const Tensor<T>& patch_tokens, const Tensor<T>& cls,
                              const Tensor<T>& pos, std::size_t batch);

template <typename T>
struct AttentionOutput {
  Tensor<T> values;         // [batch·seq × D]
  Tensor<T> probabilities;  // [batch × heads × seq × seq], not differentiated
};

// Scaled dot-product attention over a packed [batch·seq × 3D] projection
// laid out as [Q | K | V], each split into `heads` contiguous column blocks.
// Scores are scaled by 1/sqrt(D/heads).
template <typename T>
AttentionOutput<T> multi_head_attention(Tape<T>& tape, const Tensor<T>& qkv, std::size_t batch,
                                        std::size_t seq, std::size_t heads);

}  // namespace transfg
