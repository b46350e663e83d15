#include "transfg/losses.hpp"

#include <algorithm>
#include <string>
#include <vector>

namespace transfg {

void ContrastiveConfig::validate() const {
  if (!(alpha >= 0.0 && alpha < 1.0)) {
    throw ConfigError("contrastive margin alpha must lie in [0, 1), got " + std::to_string(alpha));
  }
}

template <typename T>
Tensor<T> margin_pair_loss(Tape<T>& tape, const Tensor<T>& similarity,
                           std::span<const std::size_t> labels, double alpha) {
  if (similarity.rank() != 2 || similarity.dim(0) != similarity.dim(1)) {
    throw DimensionError("margin_pair_loss: similarity must be square, got " +
                         shape_string(similarity.shape()));
  }
  const std::size_t batch = similarity.dim(0);
  if (labels.size() != batch) {
    throw ContractError("contrastive loss: " + std::to_string(labels.size()) +
                        " labels for a batch of " + std::to_string(batch));
  }
  const T margin = static_cast<T>(alpha);
  const T norm = T(1) / static_cast<T>(batch * batch);
  // d(term)/d(sim): -1 for positives, +1 for active negatives, 0 otherwise
  std::vector<T> slope(batch * batch, T(0));
  T total = T(0);
  for (std::size_t i = 0; i < batch; ++i) {
    T row = T(0);
    for (std::size_t j = 0; j < batch; ++j) {
      const T s = similarity(i, j);
      if (i == j) continue;  // 1 - Sim(z_i, z_i) is identically zero
      if (labels[i] == labels[j]) {
        // cosine rounding can land a hair above 1
        row += std::max(T(1) - s, T(0));
        slope[i * batch + j] = T(-1);
      } else if (s > margin) {
        row += s - margin;
        slope[i * batch + j] = T(1);
      }
    }
    total += row;
  }
  const bool tracked = tape.tracks({&similarity});
  auto out = Tensor<T>({1}, tracked);
  out[0] = total * norm;
  if (tracked) {
    tape.record([similarity = similarity, out, norm, slope = std::move(slope)]() mutable {
      const T g = out.grad()[0] * norm;
      auto gs = similarity.grad();
      for (std::size_t k = 0; k < slope.size(); ++k) gs[k] += g * slope[k];
    });
  }
  return out;
}

template <typename T>
Tensor<T> contrastive_loss(Tape<T>& tape, const Tensor<T>& z, std::span<const std::size_t> labels,
                           double alpha) {
  ContrastiveConfig{alpha}.validate();
  if (z.rank() != 2) {
    throw DimensionError("contrastive_loss expects [B×D] features, got " + shape_string(z.shape()));
  }
  if (labels.size() != z.dim(0)) {
    throw ContractError("contrastive loss: " + std::to_string(labels.size()) +
                        " labels for a batch of " + std::to_string(z.dim(0)));
  }
  auto unit = l2_normalize(tape, z);
  auto sim = matmul_transposed(tape, unit, unit);
  return margin_pair_loss(tape, sim, labels, alpha);
}

template <typename T>
LossTerms<T> total_loss(Tape<T>& tape, const Tensor<T>& logits, std::span<const std::size_t> labels,
                        const Tensor<T>& z, double alpha, bool use_contrastive) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size()) {
    throw ContractError("total_loss: logits " + shape_string(logits.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
  }
  LossTerms<T> terms;
  terms.cross = cross_entropy(tape, logits, labels);
  if (!use_contrastive) {
    terms.total = terms.cross;
    return terms;
  }
  if (z.rank() != 2 || z.dim(0) != labels.size()) {
    throw ContractError("total_loss: features " + shape_string(z.shape()) + " vs " +
                        std::to_string(labels.size()) + " labels");
  }
  terms.contrastive = contrastive_loss(tape, z, labels, alpha);
  terms.total = add(tape, terms.cross, terms.contrastive);
  return terms;
}

#define TRANSFG_INSTANTIATE_LOSSES(T)                                                           \
  template Tensor<T> margin_pair_loss(Tape<T>&, const Tensor<T>&, std::span<const std::size_t>, \
                                      double);                                                  \
  template Tensor<T> contrastive_loss(Tape<T>&, const Tensor<T>&, std::span<const std::size_t>, \
                                      double);                                                  \
  template LossTerms<T> total_loss(Tape<T>&, const Tensor<T>&, std::span<const std::size_t>,    \
                                   const Tensor<T>&, double, bool);

TRANSFG_INSTANTIATE_LOSSES(float)
TRANSFG_INSTANTIATE_LOSSES(double)

#undef TRANSFG_INSTANTIATE_LOSSES

}  // namespace transfg
