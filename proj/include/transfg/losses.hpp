#pragma once

#include <cstddef>
#include <span>

#include "transfg/ops.hpp"

namespace transfg {

inline constexpr double kDefaultMargin = 0.4;

struct ContrastiveConfig {
  double alpha = kDefaultMargin;
  void validate() const;
};

/// Margin contrastive loss over a batch of feature vectors z [B×D].
///
/// Rows are L2-normalised, Sim is their cosine similarity, and
///   L = 1/B² · Σ_i [ Σ_{j: y_j = y_i} (1 − Sim_ij) + Σ_{j: y_j ≠ y_i} max(Sim_ij − α, 0) ].
/// The j = i terms are included; they are exactly zero. At Sim_ij = α the hinge is
/// treated as inactive.
template <typename T>
Tensor<T> contrastive_loss(Tape<T>& tape, const Tensor<T>& z, std::span<const std::size_t> labels,
                           double alpha);

// The pair sum above, starting from a precomputed similarity matrix [B×B].
template <typename T>
Tensor<T> margin_pair_loss(Tape<T>& tape, const Tensor<T>& similarity,
                           std::span<const std::size_t> labels, double alpha);

template <typename T>
struct LossTerms {
  Tensor<T> total;
  Tensor<T> cross;
  Tensor<T> contrastive;  // undefined when the contrastive term is disabled
};

// L = L_cross + L_con, unweighted. With use_contrastive off, total = cross.
template <typename T>
LossTerms<T> total_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::size_t> labels,
                        const Tensor<T>& z, double alpha, bool use_contrastive = true);

}  // namespace transfg
