#include "transfg/psm.hpp"

#include <Eigen/Core>
#include <algorithm>

#include "transfg/init.hpp"

namespace transfg {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;

template <typename T>
void check_stack(const AttentionStack<T>& stack) {
  if (stack.layers.empty()) throw ContractError("rollout: empty attention stack");
  const Shape& first = stack.layers.front().shape();
  if (first.size() != 4 || first[2] != first[3]) {
    throw DimensionError("rollout: attention must be [B×K×T×T], got " + shape_string(first));
  }
  for (const auto& layer : stack.layers) {
    if (layer.shape() != first) {
      throw DimensionError("rollout: heterogeneous attention shapes " + shape_string(first) +
                           " and " + shape_string(layer.shape()));
    }
  }
}

template <typename T>
RowMatrix<T> head_matrix(const Tensor<T>& layer, std::size_t sample, std::size_t head,
                         RolloutOptions options) {
  const auto t = static_cast<Eigen::Index>(layer.dim(2));
  RowMatrix<T> m = ConstMatMap<T>(layer.raw() + (sample * layer.dim(1) + head) * t * t, t, t);
  if (options.add_identity) {
    m *= T(0.5);
    m.diagonal().array() += T(0.5);
  }
  return m;
}

}  // namespace

template <typename T>
std::vector<Tensor<T>> rollout(const AttentionStack<T>& stack, std::size_t sample,
                               RolloutOptions options) {
  check_stack(stack);
  if (sample >= stack.batch()) throw IndexError("rollout: sample index out of range");
  const std::size_t t = stack.seq();
  std::vector<Tensor<T>> out;
  for (std::size_t h = 0; h < stack.heads(); ++h) {
    RowMatrix<T> acc = head_matrix(stack.layers.front(), sample, h, options);
    for (std::size_t l = 1; l < stack.num_layers(); ++l) {
      // later layers multiply on the left
      RowMatrix<T> next = head_matrix(stack.layers[l], sample, h, options) * acc;
      acc.swap(next);
    }
    Tensor<T> m({t, t});
    std::copy_n(acc.data(), t * t, m.raw());
    out.push_back(std::move(m));
  }
  return out;
}

template <typename T>
Tensor<T> rollout_cls_rows(const AttentionStack<T>& stack, RolloutOptions options) {
  check_stack(stack);
  const std::size_t batch = stack.batch(), heads = stack.heads(), t = stack.seq();
  const auto ti = static_cast<Eigen::Index>(t);
  Tensor<T> out({batch, heads, t});
  Eigen::Matrix<T, 1, Eigen::Dynamic> row(ti), next(ti);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      row.setZero();
      row(0) = T(1);
      for (std::size_t l = stack.num_layers(); l-- > 0;) {
        const auto& layer = stack.layers[l];
        ConstMatMap<T> a(layer.raw() + (b * heads + h) * t * t, ti, ti);
        if (options.add_identity) {
          next.noalias() = T(0.5) * (row * a) + T(0.5) * row;
        } else {
          next.noalias() = row * a;
        }
        row.swap(next);
      }
      std::copy_n(row.data(), t, out.raw() + (b * heads + h) * t);
    }
  }
  return out;
}

namespace {

template <typename T>
std::pair<std::size_t, T> argmax_patch(const T* cls_row, std::size_t t) {
  std::size_t best = 1;
  for (std::size_t j = 2; j < t; ++j) {
    if (cls_row[j] > cls_row[best]) best = j;
  }
  return {best, cls_row[best]};
}

}  // namespace

template <typename T>
SelectionResult<T> select(std::vector<Tensor<T>> rollout) {
  if (rollout.empty()) throw ContractError("select: no heads");
  SelectionResult<T> result;
  for (const auto& m : rollout) {
    if (m.rank() != 2 || m.dim(0) != m.dim(1)) {
      throw DimensionError("select: rollout must be square, got " + shape_string(m.shape()));
    }
    if (m.dim(0) < 2) throw DegenerateInputError("select: no patch tokens to choose from");
    const auto [idx, score] = argmax_patch(m.raw(), m.dim(1));
    result.indices.push_back(idx);
    result.scores.push_back(score);
  }
  result.rollout = std::move(rollout);
  return result;
}

template <typename T>
BatchSelection<T> select_from_cls_rows(const Tensor<T>& cls_rows) {
  if (cls_rows.rank() != 3) {
    throw DimensionError("select_from_cls_rows expects [B×K×T], got " +
                         shape_string(cls_rows.shape()));
  }
  const std::size_t batch = cls_rows.dim(0), heads = cls_rows.dim(1), t = cls_rows.dim(2);
  if (t < 2) throw DegenerateInputError("select: no patch tokens to choose from");
  BatchSelection<T> out;
  out.indices.assign(batch, std::vector<std::size_t>(heads));
  out.scores.assign(batch, std::vector<T>(heads));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      const auto [idx, score] = argmax_patch(cls_rows.raw() + (b * heads + h) * t, t);
      out.indices[b][h] = idx;
      out.scores[b][h] = score;
    }
  }
  return out;
}

template <typename T>
TokenSequence<T> assemble_local(Tape<T>& tape, const TokenSequence<T>& hidden,
                                const std::vector<std::vector<std::size_t>>& indices) {
  if (indices.size() != hidden.batch) {
    throw ContractError("assemble_local: " + std::to_string(indices.size()) +
                        " index lists for a batch of " + std::to_string(hidden.batch));
  }
  const std::size_t k = indices.empty() ? 0 : indices.front().size();
  if (k == 0) throw ContractError("assemble_local: no selected indices");
  std::vector<std::size_t> rows;
  rows.reserve(hidden.batch * (k + 1));
  for (std::size_t b = 0; b < hidden.batch; ++b) {
    if (indices[b].size() != k) throw ContractError("assemble_local: ragged index lists");
    rows.push_back(b * hidden.length);
    for (auto idx : indices[b]) {
      if (idx == 0 || idx >= hidden.length) {
        throw ContractError("assemble_local: index " + std::to_string(idx) + " outside [1, " +
                            std::to_string(hidden.length - 1) + "]");
      }
      rows.push_back(b * hidden.length + idx);
    }
  }
  return {gather_rows(tape, hidden.tokens, rows), hidden.batch, k + 1};
}

template <typename T>
HeadParams<T> HeadParams<T>::init(std::size_t dim, std::size_t classes, Rng& rng) {
  return {uniform_fan_in<T>({dim, classes}, dim, rng), trainable_filled<T>({classes}, T(0))};
}

template <typename T>
ClassifyOutput<T> classify(Tape<T>& tape, const TokenSequence<T>& tokens,
                           const LayerParams<T>& last_layer, const HeadParams<T>& head,
                           std::size_t heads) {
  auto out = encoder_layer(tape, tokens, last_layer, heads);
  std::vector<std::size_t> cls_rows(tokens.batch);
  for (std::size_t b = 0; b < tokens.batch; ++b) cls_rows[b] = b * tokens.length;
  auto cls = gather_rows(tape, out.tokens.tokens, cls_rows);
  auto logits = linear(tape, cls, head.weight, head.bias);
  return {logits, cls};
}

#define TRANSFG_INSTANTIATE_PSM(T)                                                              \
  template std::vector<Tensor<T>> rollout(const AttentionStack<T>&, std::size_t,               \
                                          RolloutOptions);                                      \
  template Tensor<T> rollout_cls_rows(const AttentionStack<T>&, RolloutOptions);                \
  template SelectionResult<T> select(std::vector<Tensor<T>>);                                   \
  template BatchSelection<T> select_from_cls_rows(const Tensor<T>&);                            \
  template TokenSequence<T> assemble_local(Tape<T>&, const TokenSequence<T>&,                   \
                                           const std::vector<std::vector<std::size_t>>&);       \
  template struct HeadParams<T>;                                                                \
  template ClassifyOutput<T> classify(Tape<T>&, const TokenSequence<T>&, const LayerParams<T>&, \
                                      const HeadParams<T>&, std::size_t);

TRANSFG_INSTANTIATE_PSM(float)
TRANSFG_INSTANTIATE_PSM(double)

#undef TRANSFG_INSTANTIATE_PSM

}  // namespace transfg
