#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "transfg/ops.hpp"
#include "transfg/patch_embed.hpp"
#include "transfg/rng.hpp"

namespace transfg {

struct EncoderConfig {
  std::size_t layers = 4;     // L, including the last layer reserved for the part-selection path
  std::size_t heads = 4;      // K
  std::size_t dim = 64;       // D
  std::size_t mlp_ratio = 4;

  void validate() const;
  std::size_t head_dim() const { return dim / heads; }
};

/// Weights of one pre-norm transformer layer.
template <typename T>
struct LayerParams {
  Tensor<T> ln1_gain, ln1_bias;
  Tensor<T> qkv_weight, qkv_bias;  // [D × 3D], [3D]; packed as [Q | K | V]
  Tensor<T> out_weight, out_bias;  // [D × D], [D]
  Tensor<T> ln2_gain, ln2_bias;
  Tensor<T> fc1_weight, fc1_bias;  // [D × rD], [rD]
  Tensor<T> fc2_weight, fc2_bias;  // [rD × D], [D]

  static LayerParams init(const EncoderConfig& cfg, Rng& rng);

  // Stable names and handles for checkpointing and optimisation.
  std::vector<std::pair<std::string, Tensor<T>>> named(const std::string& prefix) const;
};

/// Softmaxed attention of every pre-layer: layers[l] is [B × K × T × T].
template <typename T>
struct AttentionStack {
  std::vector<Tensor<T>> layers;

  std::size_t num_layers() const { return layers.size(); }
  std::size_t batch() const { return layers.at(0).dim(0); }
  std::size_t heads() const { return layers.at(0).dim(1); }
  std::size_t seq() const { return layers.at(0).dim(2); }

  // Copy of one head's [T × T] matrix.
  Tensor<T> matrix(std::size_t layer, std::size_t sample, std::size_t head) const;

  // Single-sample stack from per-layer, per-head square matrices.
  static AttentionStack from_matrices(const std::vector<std::vector<Tensor<T>>>& per_layer);
};

template <typename T>
struct LayerOutput {
  TokenSequence<T> tokens;
  Tensor<T> attention;  // [B × K × T × T]
};

// Multi-head self-attention over LN'd tokens: packed QKV projection,
// per-head scaled dot-product attention, output projection.
template <typename T>
LayerOutput<T> mhsa(Tape<T>& tape, const TokenSequence<T>& tokens, const LayerParams<T>& params,
                    std::size_t heads);

// z' = MSA(LN(z)) + z;  z_out = MLP(LN(z')) + z'.
template <typename T>
LayerOutput<T> encoder_layer(Tape<T>& tape, const TokenSequence<T>& tokens,
                             const LayerParams<T>& params, std::size_t heads);

template <typename T>
struct EncodeOutput {
  TokenSequence<T> hidden;  // z_{L-1}
  AttentionStack<T> stack;
};

// Runs the given layers in order (the pre-layers 1..L-1) and collects their attention.
template <typename T>
EncodeOutput<T> encode(Tape<T>& tape, const TokenSequence<T>& z0,
                       std::span<const LayerParams<T>> layers, std::size_t heads);

}  // namespace transfg
