#pragma once

#include <cstddef>

#include "transfg/ops.hpp"
#include "transfg/rng.hpp"
#include "transfg/tensor.hpp"

namespace transfg {

/// Sliding-window patch geometry. With stride < patch, adjacent windows
/// share (patch - stride) * patch pixels; trailing pixels that no window
/// reaches are dropped.
struct PatchConfig {
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t channels = 1;
  std::size_t patch = 4;
  std::size_t stride = 3;

  void validate() const;
  std::size_t patch_dim() const { return patch * patch * channels; }
};

struct PatchGrid {
  std::size_t rows = 0;  // N_H
  std::size_t cols = 0;  // N_W
  std::size_t count = 0; // N
};

// N_H = floor((H - P + S) / S), N_W likewise, N = N_H * N_W.
PatchGrid count_patches(const PatchConfig& cfg);

// Pixel footprint of patch `index` (0-based over patch tokens, row-major over
// the grid): top-left corner (i * S, j * S), side P.
struct PatchRect {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t size = 0;
};
PatchRect patch_rect(const PatchConfig& cfg, std::size_t index);

// image [H×W×C] -> [N × P·P·C]; row i·N_W + j is the window at (i·S, j·S),
// flattened row-major over (row, col, channel).
template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const PatchConfig& cfg);

// images [B×H×W×C] -> [B·N × P·P·C], sample-major.
template <typename T>
Tensor<T> extract_patches_batch(const Tensor<T>& images, const PatchConfig& cfg);

/// A batch of embedded sequences packed as [batch·length × D]; token 0 of
/// every sequence is the CLS token.
template <typename T>
struct TokenSequence {
  Tensor<T> tokens;
  std::size_t batch = 1;
  std::size_t length = 0;

  std::size_t width() const { return tokens.dim(1); }
};

template <typename T>
struct PatchEmbedParams {
  Tensor<T> projection;  // [P·P·C × D]
  Tensor<T> position;    // [(N+1) × D], row 0 belongs to CLS
  Tensor<T> cls;         // [1 × D]

  // Projection uniform in ±1/sqrt(fan_in); CLS and position rows zero.
  static PatchEmbedParams init(const PatchConfig& cfg, std::size_t dim, Rng& rng);
};

// z_0 = [cls; patches · E] + E_pos for each sample.
template <typename T>
TokenSequence<T> embed(Tape<T>& tape, const Tensor<T>& patches, const PatchEmbedParams<T>& params,
                       std::size_t batch);

}  // namespace transfg
