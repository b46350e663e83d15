#include "transfg/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>

namespace transfg {

namespace {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMatrix<T>>;
using Stride = Eigen::OuterStride<>;
template <typename T>
using StridedMap = Eigen::Map<RowMatrix<T>, 0, Stride>;
template <typename T>
using ConstStridedMap = Eigen::Map<const RowMatrix<T>, 0, Stride>;

template <typename T>
ConstMatMap<T> as_matrix(const Tensor<T>& t) {
  return ConstMatMap<T>(t.raw(), static_cast<Eigen::Index>(t.dim(0)),
                        static_cast<Eigen::Index>(t.dim(1)));
}

template <typename T>
MatMap<T> grad_matrix(Tensor<T>& t) {
  return MatMap<T>(t.grad().data(), static_cast<Eigen::Index>(t.dim(0)),
                   static_cast<Eigen::Index>(t.dim(1)));
}

template <typename T>
void require_matrix(const Tensor<T>& t, const char* op) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(op) + " expects a matrix, got shape " +
                         shape_string(t.shape()));
  }
}

template <typename T>
std::size_t row_length(const Tensor<T>& t) {
  return t.shape().back();
}

template <typename T>
std::size_t row_count(const Tensor<T>& t) {
  return t.numel() / t.shape().back();
}

template <typename T>
Tensor<T> make_output(Shape shape, bool tracked) {
  return Tensor<T>(std::move(shape), tracked);
}

}  // namespace

template <typename T>
Tensor<T> matmul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul inner extents differ: " + shape_string(a.shape()) + " x " +
                         shape_string(b.shape()));
  }
  const bool tracked = tape.tracks({&a, &b});
  auto out = make_output<T>({a.dim(0), b.dim(1)}, tracked);
  MatMap<T>(out.raw(), out.dim(0), out.dim(1)).noalias() = as_matrix(a) * as_matrix(b);
  if (tracked) {
    tape.record([a = a, b = b, out]() mutable {
      auto g = ConstMatMap<T>(out.grad().data(), out.dim(0), out.dim(1));
      if (a.requires_grad()) grad_matrix(a).noalias() += g * as_matrix(b).transpose();
      if (b.requires_grad()) grad_matrix(b).noalias() += as_matrix(a).transpose() * g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> matmul_transposed(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_transposed");
  require_matrix(b, "matmul_transposed");
  if (a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_transposed inner extents differ: " + shape_string(a.shape()) +
                         " x " + shape_string(b.shape()) + "^T");
  }
  const bool tracked = tape.tracks({&a, &b});
  auto out = make_output<T>({a.dim(0), b.dim(0)}, tracked);
  MatMap<T>(out.raw(), out.dim(0), out.dim(1)).noalias() =
      as_matrix(a) * as_matrix(b).transpose();
  if (tracked) {
    tape.record([a = a, b = b, out]() mutable {
      auto g = ConstMatMap<T>(out.grad().data(), out.dim(0), out.dim(1));
      if (a.requires_grad()) grad_matrix(a).noalias() += g * as_matrix(b);
      if (b.requires_grad()) grad_matrix(b).noalias() += g.transpose() * as_matrix(a);
    });
  }
  return out;
}

template <typename T>
Tensor<T> linear(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
  require_matrix(x, "linear");
  require_matrix(w, "linear");
  if (x.dim(1) != w.dim(0)) {
    throw DimensionError("linear input width " + shape_string(x.shape()) +
                         " does not match weight " + shape_string(w.shape()));
  }
  const bool has_bias = bias.defined();
  if (has_bias && bias.numel() != w.dim(1)) {
    throw DimensionError("linear bias " + shape_string(bias.shape()) + " does not match weight " +
                         shape_string(w.shape()));
  }
  const bool tracked = tape.tracks({&x, &w, has_bias ? &bias : nullptr});
  auto out = make_output<T>({x.dim(0), w.dim(1)}, tracked);
  auto o = MatMap<T>(out.raw(), out.dim(0), out.dim(1));
  o.noalias() = as_matrix(x) * as_matrix(w);
  if (has_bias) {
    auto bv = Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.raw(), w.dim(1));
    o.rowwise() += bv;
  }
  if (tracked) {
    tape.record([x = x, w = w, bias = bias, out, has_bias]() mutable {
      auto g = ConstMatMap<T>(out.grad().data(), out.dim(0), out.dim(1));
      if (x.requires_grad()) grad_matrix(x).noalias() += g * as_matrix(w).transpose();
      if (w.requires_grad()) grad_matrix(w).noalias() += as_matrix(x).transpose() * g;
      if (has_bias && bias.requires_grad()) {
        auto gb = Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>>(bias.grad().data(), w.dim(1));
        gb += g.colwise().sum();
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> add(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const bool tracked = tape.tracks({&a, &b});
  auto out = make_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  if (tracked) {
    tape.record([a = a, b = b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> mul(Tape<T>& tape, const Tensor<T>& a, const Tensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw DimensionError("mul shapes differ: " + shape_string(a.shape()) + " vs " +
                         shape_string(b.shape()));
  }
  const bool tracked = tape.tracks({&a, &b});
  auto out = make_output<T>(a.shape(), tracked);
  for (std::size_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  if (tracked) {
    tape.record([a = a, b = b, out]() mutable {
      auto g = out.grad();
      if (a.requires_grad()) {
        auto ga = a.grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
      }
      if (b.requires_grad()) {
        auto gb = b.grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> sum(Tape<T>& tape, const Tensor<T>& a) {
  const bool tracked = tape.tracks({&a});
  auto out = make_output<T>({1}, tracked);
  T acc = T(0);
  for (auto v : a.data()) acc += v;
  out[0] = acc;
  if (tracked) {
    tape.record([a = a, out]() mutable {
      const T g = out.grad()[0];
      for (auto& ga : a.grad()) ga += g;
    });
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(Tape<T>& tape, const Tensor<T>& a) {
  const bool tracked = tape.tracks({&a});
  auto out = make_output<T>(a.shape(), tracked);
  const std::size_t n = row_length(a);
  const std::size_t rows = row_count(a);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = a.raw() + r * n;
    T* y = out.raw() + r * n;
    const T peak = *std::max_element(x, x + n);
    T total = T(0);
    for (std::size_t i = 0; i < n; ++i) {
      y[i] = std::exp(x[i] - peak);
      total += y[i];
    }
    for (std::size_t i = 0; i < n; ++i) y[i] /= total;
  }
  if (tracked) {
    tape.record([a = a, out, n, rows]() mutable {
      auto ga = a.grad();
      auto gy = out.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = out.raw() + r * n;
        const T* g = gy.data() + r * n;
        T dot = T(0);
        for (std::size_t i = 0; i < n; ++i) dot += g[i] * y[i];
        for (std::size_t i = 0; i < n; ++i) ga[r * n + i] += y[i] * (g[i] - dot);
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm(Tape<T>& tape, const Tensor<T>& x, const Tensor<T>& gain,
                     const Tensor<T>& bias, double eps) {
  const std::size_t d = row_length(x);
  if (gain.numel() != d || bias.numel() != d) {
    throw DimensionError("layer_norm affine params " + shape_string(gain.shape()) + "/" +
                         shape_string(bias.shape()) + " do not match input " +
                         shape_string(x.shape()));
  }
  if (!(eps > 0)) throw ContractError("layer_norm eps must be positive");
  const bool tracked = tape.tracks({&x, &gain, &bias});
  const std::size_t rows = row_count(x);
  auto out = make_output<T>(x.shape(), tracked);
  std::vector<T> normalized(x.numel());
  std::vector<T> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* v = x.raw() + r * d;
    T mean = T(0);
    for (std::size_t i = 0; i < d; ++i) mean += v[i];
    mean /= static_cast<T>(d);
    T var = T(0);
    for (std::size_t i = 0; i < d; ++i) var += (v[i] - mean) * (v[i] - mean);
    var /= static_cast<T>(d);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[r] = inv;
    for (std::size_t i = 0; i < d; ++i) {
      const T xhat = (v[i] - mean) * inv;
      normalized[r * d + i] = xhat;
      out[r * d + i] = gain[i] * xhat + bias[i];
    }
  }
  if (tracked) {
    tape.record([x = x, gain = gain, bias = bias, out, d, rows, normalized = std::move(normalized), inv_std = std::move(inv_std)]() mutable {
      auto gy = out.grad();
      std::vector<T> dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* g = gy.data() + r * d;
        const T* xh = normalized.data() + r * d;
        if (gain.requires_grad()) {
          auto gg = gain.grad();
          for (std::size_t i = 0; i < d; ++i) gg[i] += g[i] * xh[i];
        }
        if (bias.requires_grad()) {
          auto gb = bias.grad();
          for (std::size_t i = 0; i < d; ++i) gb[i] += g[i];
        }
        if (x.requires_grad()) {
          T mean_d = T(0), mean_dx = T(0);
          for (std::size_t i = 0; i < d; ++i) {
            dxhat[i] = g[i] * gain[i];
            mean_d += dxhat[i];
            mean_dx += dxhat[i] * xh[i];
          }
          mean_d /= static_cast<T>(d);
          mean_dx /= static_cast<T>(d);
          auto gx = x.grad();
          for (std::size_t i = 0; i < d; ++i) {
            gx[r * d + i] += inv_std[r] * (dxhat[i] - mean_d - xh[i] * mean_dx);
          }
        }
      }
    });
  }
  return out;
}

namespace {

constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;

}  // namespace

template <typename T>
Tensor<T> gelu(Tape<T>& tape, const Tensor<T>& x) {
  const bool tracked = tape.tracks({&x});
  auto out = make_output<T>(x.shape(), tracked);
  const T c = static_cast<T>(kGeluScale);
  const T k = static_cast<T>(kGeluCubic);
  const auto n = static_cast<Eigen::Index>(x.numel());
  Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> v(x.raw(), n);
  // tanh term, kept for the backward pass
  auto t = std::make_shared<Eigen::Array<T, Eigen::Dynamic, 1>>((c * (v + k * v.cube())).tanh());
  Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(out.raw(), n) = T(0.5) * v * (T(1) + *t);
  if (tracked) {
    tape.record([x = x, out, t, c, k, n]() mutable {
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> v(x.raw(), n);
      Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> gx(x.grad().data(), n);
      Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>> gy(out.grad().data(), n);
      const auto dt = (T(1) - t->square()) * c * (T(1) + T(3) * k * v.square());
      gx += gy * (T(0.5) * (T(1) + *t) + T(0.5) * v * dt);
    });
  }
  return out;
}

template <typename T>
Tensor<T> l2_normalize(Tape<T>& tape, const Tensor<T>& v) {
  const bool tracked = tape.tracks({&v});
  const std::size_t d = row_length(v);
  const std::size_t rows = row_count(v);
  auto out = make_output<T>(v.shape(), tracked);
  std::vector<T> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = v.raw() + r * d;
    T sq = T(0);
    for (std::size_t i = 0; i < d; ++i) sq += x[i] * x[i];
    const T norm = std::sqrt(sq);
    if (!(norm > T(0))) {
      throw DegenerateInputError("l2_normalize: row " + std::to_string(r) + " has zero norm");
    }
    norms[r] = norm;
    for (std::size_t i = 0; i < d; ++i) out[r * d + i] = x[i] / norm;
  }
  if (tracked) {
    tape.record([v = v, out, d, rows, norms = std::move(norms)]() mutable {
      auto gv = v.grad();
      auto gy = out.grad();
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = out.raw() + r * d;
        const T* g = gy.data() + r * d;
        T dot = T(0);
        for (std::size_t i = 0; i < d; ++i) dot += y[i] * g[i];
        for (std::size_t i = 0; i < d; ++i) gv[r * d + i] += (g[i] - y[i] * dot) / norms[r];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> cross_entropy(Tape<T>& tape, const Tensor<T>& logits,
                        std::span<const std::size_t> labels) {
  require_matrix(logits, "cross_entropy");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_string(logits.shape()));
  }
  for (auto y : labels) {
    if (y >= classes) {
      throw IndexError("cross_entropy: label " + std::to_string(y) + " out of range for " +
                       std::to_string(classes) + " classes");
    }
  }
  const bool tracked = tape.tracks({&logits});
  auto out = make_output<T>({1}, tracked);
  std::vector<T> probs(logits.numel());
  T total = T(0);
  for (std::size_t b = 0; b < batch; ++b) {
    const T* x = logits.raw() + b * classes;
    const T peak = *std::max_element(x, x + classes);
    T z = T(0);
    for (std::size_t c = 0; c < classes; ++c) {
      probs[b * classes + c] = std::exp(x[c] - peak);
      z += probs[b * classes + c];
    }
    for (std::size_t c = 0; c < classes; ++c) probs[b * classes + c] /= z;
    total += peak + std::log(z) - x[labels[b]];
  }
  out[0] = total / static_cast<T>(batch);
  if (tracked) {
    std::vector<std::size_t> ys(labels.begin(), labels.end());
    tape.record([logits = logits, out, batch, classes, probs = std::move(probs), ys = std::move(ys)]() mutable {
      const T g = out.grad()[0] / static_cast<T>(batch);
      auto gl = logits.grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < classes; ++c) {
          const T target = c == ys[b] ? T(1) : T(0);
          gl[b * classes + c] += g * (probs[b * classes + c] - target);
        }
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> gather_rows(Tape<T>& tape, const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_matrix(x, "gather_rows");
  if (rows.empty()) throw DimensionError("gather_rows: no rows requested");
  const std::size_t d = x.dim(1);
  for (auto r : rows) {
    if (r >= x.dim(0)) {
      throw IndexError("gather_rows: row " + std::to_string(r) + " out of range for " +
                       shape_string(x.shape()));
    }
  }
  const bool tracked = tape.tracks({&x});
  auto out = make_output<T>({rows.size(), d}, tracked);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.raw() + rows[i] * d, d, out.raw() + i * d);
  }
  if (tracked) {
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    tape.record([x = x, out, d, idx = std::move(idx)]() mutable {
      auto gx = x.grad();
      auto gy = out.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t k = 0; k < d; ++k) gx[idx[i] * d + k] += gy[i * d + k];
      }
    });
  }
  return out;
}

template <typename T>
Tensor<T> prepend_cls_add_pos(Tape<T>& tape, const Tensor<T>& patch_tokens, const Tensor<T>& cls,
                              const Tensor<T>& pos, std::size_t batch) {
  require_matrix(patch_tokens, "prepend_cls_add_pos");
  require_matrix(pos, "prepend_cls_add_pos");
  const std::size_t d = patch_tokens.dim(1);
  if (batch == 0 || patch_tokens.dim(0) % batch != 0) {
    throw DimensionError("prepend_cls_add_pos: " + shape_string(patch_tokens.shape()) +
                         " is not divisible into " + std::to_string(batch) + " samples");
  }
  const std::size_t n = patch_tokens.dim(0) / batch;
  if (cls.numel() != d || pos.dim(0) != n + 1 || pos.dim(1) != d) {
    throw DimensionError("prepend_cls_add_pos: cls " + shape_string(cls.shape()) + " and pos " +
                         shape_string(pos.shape()) + " do not fit " + std::to_string(n) +
                         " patches of width " + std::to_string(d));
  }
  const std::size_t seq = n + 1;
  const bool tracked = tape.tracks({&patch_tokens, &cls, &pos});
  auto out = make_output<T>({batch * seq, d}, tracked);
  for (std::size_t b = 0; b < batch; ++b) {
    T* dst = out.raw() + b * seq * d;
    for (std::size_t k = 0; k < d; ++k) dst[k] = cls[k] + pos[k];
    for (std::size_t t = 1; t < seq; ++t) {
      const T* src = patch_tokens.raw() + (b * n + t - 1) * d;
      for (std::size_t k = 0; k < d; ++k) dst[t * d + k] = src[k] + pos[t * d + k];
    }
  }
  if (tracked) {
    tape.record([patch_tokens = patch_tokens, cls = cls, pos = pos, out, batch, seq, n, d]() mutable {
      auto g = out.grad();
      for (std::size_t b = 0; b < batch; ++b) {
        const T* src = g.data() + b * seq * d;
        if (cls.requires_grad()) {
          auto gc = cls.grad();
          for (std::size_t k = 0; k < d; ++k) gc[k] += src[k];
        }
        if (pos.requires_grad()) {
          auto gp = pos.grad();
          for (std::size_t i = 0; i < seq * d; ++i) gp[i] += src[i];
        }
        if (patch_tokens.requires_grad()) {
          auto gt = patch_tokens.grad();
          for (std::size_t t = 1; t < seq; ++t) {
            for (std::size_t k = 0; k < d; ++k) gt[(b * n + t - 1) * d + k] += src[t * d + k];
          }
        }
      }
    });
  }
  return out;
}

template <typename T>
AttentionOutput<T> multi_head_attention(Tape<T>& tape, const Tensor<T>& qkv, std::size_t batch,
                                        std::size_t seq, std::size_t heads) {
  require_matrix(qkv, "multi_head_attention");
  if (heads == 0 || qkv.dim(1) % (3 * heads) != 0) {
    throw DimensionError("multi_head_attention: packed width " + std::to_string(qkv.dim(1)) +
                         " is not 3 x a multiple of " + std::to_string(heads) + " heads");
  }
  if (qkv.dim(0) != batch * seq) {
    throw DimensionError("multi_head_attention: " + shape_string(qkv.shape()) +
                         " does not hold " + std::to_string(batch) + " sequences of length " +
                         std::to_string(seq));
  }
  const std::size_t width = qkv.dim(1) / 3;
  const std::size_t hd = width / heads;
  const auto ld = static_cast<Eigen::Index>(3 * width);
  const auto s = static_cast<Eigen::Index>(seq);
  const auto h_dim = static_cast<Eigen::Index>(hd);
  const T scale = T(1) / std::sqrt(static_cast<T>(hd));
  const bool tracked = tape.tracks({&qkv});

  AttentionOutput<T> result{make_output<T>({batch * seq, width}, tracked),
                            Tensor<T>({batch, heads, seq, seq})};
  auto& out = result.values;
  auto& probs = result.probabilities;

  for (std::size_t b = 0; b < batch; ++b) {
    const T* base = qkv.raw() + b * seq * 3 * width;
    for (std::size_t h = 0; h < heads; ++h) {
      ConstStridedMap<T> q(base + h * hd, s, h_dim, Stride(ld));
      ConstStridedMap<T> k(base + width + h * hd, s, h_dim, Stride(ld));
      ConstStridedMap<T> v(base + 2 * width + h * hd, s, h_dim, Stride(ld));
      MatMap<T> p(probs.raw() + (b * heads + h) * seq * seq, s, s);
      p.noalias() = (q * k.transpose()) * scale;
      for (Eigen::Index r = 0; r < s; ++r) {
        auto row = p.row(r);
        row = (row.array() - row.maxCoeff()).exp();
        row /= row.sum();
      }
      StridedMap<T> o(out.raw() + b * seq * width + h * hd, s, h_dim,
                      Stride(static_cast<Eigen::Index>(width)));
      o.noalias() = p * v;
    }
  }

  if (tracked) {
    tape.record([qkv = qkv, out, probs, batch, seq, heads, width, hd, ld, s, h_dim, scale]() mutable {
      auto gq_all = qkv.grad();
      auto go_all = out.grad();
      RowMatrix<T> dp(s, s);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* base = qkv.raw() + b * seq * 3 * width;
        T* gbase = gq_all.data() + b * seq * 3 * width;
        for (std::size_t h = 0; h < heads; ++h) {
          ConstStridedMap<T> q(base + h * hd, s, h_dim, Stride(ld));
          ConstStridedMap<T> k(base + width + h * hd, s, h_dim, Stride(ld));
          ConstStridedMap<T> v(base + 2 * width + h * hd, s, h_dim, Stride(ld));
          StridedMap<T> gq(gbase + h * hd, s, h_dim, Stride(ld));
          StridedMap<T> gk(gbase + width + h * hd, s, h_dim, Stride(ld));
          StridedMap<T> gv(gbase + 2 * width + h * hd, s, h_dim, Stride(ld));
          ConstMatMap<T> p(probs.raw() + (b * heads + h) * seq * seq, s, s);
          ConstStridedMap<T> go(go_all.data() + b * seq * width + h * hd, s, h_dim,
                                Stride(static_cast<Eigen::Index>(width)));
          gv.noalias() += p.transpose() * go;
          dp.noalias() = go * v.transpose();
          for (Eigen::Index r = 0; r < s; ++r) {
            const T dot = dp.row(r).dot(p.row(r));
            dp.row(r) = (p.row(r).array() * (dp.row(r).array() - dot)) * scale;
          }
          gq.noalias() += dp * k;
          gk.noalias() += dp.transpose() * q;
        }
      }
    });
  }
  return result;
}

#define TRANSFG_INSTANTIATE_OPS(T)                                                              \
  template Tensor<T> matmul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                      \
  template Tensor<T> matmul_transposed(Tape<T>&, const Tensor<T>&, const Tensor<T>&);           \
  template Tensor<T> linear(Tape<T>&, const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);    \
  template Tensor<T> add(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> mul(Tape<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> sum(Tape<T>&, const Tensor<T>&);                                           \
  template Tensor<T> softmax_rows(Tape<T>&, const Tensor<T>&);                                  \
  template Tensor<T> layer_norm(Tape<T>&, const Tensor<T>&, const Tensor<T>&,                   \
                                const Tensor<T>&, double);                                      \
  template Tensor<T> gelu(Tape<T>&, const Tensor<T>&);                                          \
  template Tensor<T> l2_normalize(Tape<T>&, const Tensor<T>&);                                  \
  template Tensor<T> cross_entropy(Tape<T>&, const Tensor<T>&, std::span<const std::size_t>);   \
  template Tensor<T> gather_rows(Tape<T>&, const Tensor<T>&, std::span<const std::size_t>);     \
  template Tensor<T> prepend_cls_add_pos(Tape<T>&, const Tensor<T>&, const Tensor<T>&,          \
                                         const Tensor<T>&, std::size_t);                        \
  template AttentionOutput<T> multi_head_attention(Tape<T>&, const Tensor<T>&, std::size_t,     \
                                                   std::size_t, std::size_t);

TRANSFG_INSTANTIATE_OPS(float)
TRANSFG_INSTANTIATE_OPS(double)

#undef TRANSFG_INSTANTIATE_OPS

}  // namespace transfg
