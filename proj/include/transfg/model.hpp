#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "transfg/encoder.hpp"
#include "transfg/patch_embed.hpp"
#include "transfg/psm.hpp"
#include "transfg/serialize.hpp"

namespace transfg {

struct ModelConfig {
  EncoderConfig encoder;
  PatchConfig patch;
  std::size_t num_classes = 16;
  // Off: the last layer sees the whole sequence (plain ViT classification).
  bool part_selection = true;
  RolloutOptions rollout;

  void validate() const;
};

template <typename T>
struct ModelParams {
  PatchEmbedParams<T> embed;
  std::vector<LayerParams<T>> layers;  // L layers; the last one is applied after selection
  HeadParams<T> head;

  static ModelParams init(const ModelConfig& cfg, std::uint64_t seed);

  // Handles in a fixed order; the order defines the checkpoint layout.
  std::vector<std::pair<std::string, Tensor<T>>> named() const;

  NamedTensors to_checkpoint() const;
  // Throws DimensionError if the tensors do not fit cfg.
  static ModelParams from_checkpoint(const NamedTensors& tensors, const ModelConfig& cfg);
};

template <typename T>
struct ForwardResult {
  Tensor<T> logits;      // [B × C]
  Tensor<T> cls_tokens;  // [B × D]
  AttentionStack<T> stack;
  BatchSelection<T> selection;
};

// images [B×H×W×C].
template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const ModelParams<T>& params, const ModelConfig& cfg,
                         const Tensor<T>& images);

// Full per-head rollout matrices and selection for one sample of a forward pass.
template <typename T>
SelectionResult<T> sample_selection(const ForwardResult<T>& result, const ModelConfig& cfg,
                                    std::size_t sample);

}  // namespace transfg
