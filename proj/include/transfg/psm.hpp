#pragma once

#include <cstddef>
#include <vector>

#include "transfg/encoder.hpp"

namespace transfg {

// Part selection: compose the pre-layer attention by matrix product, pick
// one patch token per head from the CLS row, and classify from the CLS
// token after running the last layer on [CLS; selected tokens].

struct RolloutOptions {
  // Replace every attention matrix a by 0.5·a + 0.5·I before composing.
  // Off by default: the plain product of raw attention.
  bool add_identity = false;
};

template <typename T>
struct SelectionResult {
  std::vector<Tensor<T>> rollout;    // per head, [T × T]
  std::vector<std::size_t> indices;  // per head, in [1, N]
  std::vector<T> scores;             // rollout[h](0, indices[h])
};

// a_final^h = a_{L-1}^h · … · a_1^h for one sample of the stack.
template <typename T>
std::vector<Tensor<T>> rollout(const AttentionStack<T>& stack, std::size_t sample = 0,
                               RolloutOptions options = {});

// Row 0 of every sample's rollout, [B × K × T], via row-vector products.
template <typename T>
Tensor<T> rollout_cls_rows(const AttentionStack<T>& stack, RolloutOptions options = {});

// Per head, argmax over columns 1..N of row 0; ties go to the lowest column.
template <typename T>
SelectionResult<T> select(std::vector<Tensor<T>> rollout);

template <typename T>
struct BatchSelection {
  std::vector<std::vector<std::size_t>> indices;  // [B][K]
  std::vector<std::vector<T>> scores;             // [B][K]
};

// Same rule applied to precomputed CLS rows [B × K × T].
template <typename T>
BatchSelection<T> select_from_cls_rows(const Tensor<T>& cls_rows);

// [z^0; z^{A_1}; …; z^{A_K}] per sample, duplicates kept.
template <typename T>
TokenSequence<T> assemble_local(Tape<T>& tape, const TokenSequence<T>& hidden,
                                const std::vector<std::vector<std::size_t>>& indices);

template <typename T>
struct HeadParams {
  Tensor<T> weight;  // [D × C]
  Tensor<T> bias;    // [C]

  static HeadParams init(std::size_t dim, std::size_t classes, Rng& rng);
};

template <typename T>
struct ClassifyOutput {
  Tensor<T> logits;      // [B × C]
  Tensor<T> cls_tokens;  // [B × D], final CLS state fed to the contrastive loss
};

// Last transformer layer over `tokens`, then the linear head on each CLS token.
template <typename T>
ClassifyOutput<T> classify(Tape<T>& tape, const TokenSequence<T>& tokens,
                           const LayerParams<T>& last_layer, const HeadParams<T>& head,
                           std::size_t heads);

}  // namespace transfg
