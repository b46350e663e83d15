#include "transfg/encoder.hpp"

#include <algorithm>

#include "transfg/init.hpp"

namespace transfg {

void EncoderConfig::validate() const {
  if (heads == 0 || dim == 0 || mlp_ratio == 0) {
    throw ConfigError("encoder config: heads, dim and mlp_ratio must be positive");
  }
  if (dim % heads != 0) {
    throw ConfigError("encoder config: dim " + std::to_string(dim) + " is not divisible by " +
                      std::to_string(heads) + " heads");
  }
  if (layers < 2) {
    throw ConfigError("encoder config: need at least 2 layers (pre-layers plus the last layer)");
  }
}

template <typename T>
LayerParams<T> LayerParams<T>::init(const EncoderConfig& cfg, Rng& rng) {
  const std::size_t d = cfg.dim;
  const std::size_t hidden = cfg.dim * cfg.mlp_ratio;
  LayerParams p;
  p.ln1_gain = trainable_filled<T>({d}, T(1));
  p.ln1_bias = trainable_filled<T>({d}, T(0));
  p.qkv_weight = uniform_fan_in<T>({d, 3 * d}, d, rng);
  p.qkv_bias = trainable_filled<T>({3 * d}, T(0));
  p.out_weight = uniform_fan_in<T>({d, d}, d, rng);
  p.out_bias = trainable_filled<T>({d}, T(0));
  p.ln2_gain = trainable_filled<T>({d}, T(1));
  p.ln2_bias = trainable_filled<T>({d}, T(0));
  p.fc1_weight = uniform_fan_in<T>({d, hidden}, d, rng);
  p.fc1_bias = trainable_filled<T>({hidden}, T(0));
  p.fc2_weight = uniform_fan_in<T>({hidden, d}, hidden, rng);
  p.fc2_bias = trainable_filled<T>({d}, T(0));
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> LayerParams<T>::named(
    const std::string& prefix) const {
  return {
      {prefix + "ln1.gain", ln1_gain},     {prefix + "ln1.bias", ln1_bias},
      {prefix + "attn.qkv.weight", qkv_weight}, {prefix + "attn.qkv.bias", qkv_bias},
      {prefix + "attn.out.weight", out_weight}, {prefix + "attn.out.bias", out_bias},
      {prefix + "ln2.gain", ln2_gain},     {prefix + "ln2.bias", ln2_bias},
      {prefix + "mlp.fc1.weight", fc1_weight},  {prefix + "mlp.fc1.bias", fc1_bias},
      {prefix + "mlp.fc2.weight", fc2_weight},  {prefix + "mlp.fc2.bias", fc2_bias},
  };
}

template <typename T>
Tensor<T> AttentionStack<T>::matrix(std::size_t layer, std::size_t sample, std::size_t head) const {
  const auto& a = layers.at(layer);
  const std::size_t t = a.dim(2);
  if (sample >= a.dim(0) || head >= a.dim(1)) throw IndexError("attention matrix index out of range");
  Tensor<T> out({t, t});
  std::copy_n(a.raw() + (sample * a.dim(1) + head) * t * t, t * t, out.raw());
  return out;
}

template <typename T>
AttentionStack<T> AttentionStack<T>::from_matrices(
    const std::vector<std::vector<Tensor<T>>>& per_layer) {
  if (per_layer.empty() || per_layer.front().empty()) {
    throw DimensionError("attention stack needs at least one layer and one head");
  }
  const std::size_t heads = per_layer.front().size();
  const std::size_t t = per_layer.front().front().dim(0);
  AttentionStack stack;
  for (const auto& layer : per_layer) {
    if (layer.size() != heads) throw DimensionError("attention stack: head count differs across layers");
    Tensor<T> packed({1, heads, t, t});
    for (std::size_t h = 0; h < heads; ++h) {
      const auto& m = layer[h];
      if (m.rank() != 2 || m.dim(0) != t || m.dim(1) != t) {
        throw DimensionError("attention stack: expected " + shape_string({t, t}) + " matrices, got " +
                             shape_string(m.shape()));
      }
      std::copy_n(m.raw(), t * t, packed.raw() + h * t * t);
    }
    stack.layers.push_back(packed);
  }
  return stack;
}

template <typename T>
LayerOutput<T> mhsa(Tape<T>& tape, const TokenSequence<T>& tokens, const LayerParams<T>& params,
                    std::size_t heads) {
  const std::size_t d = tokens.width();
  if (heads == 0 || d % heads != 0) {
    throw DimensionError("mhsa: width " + std::to_string(d) + " not divisible by " +
                         std::to_string(heads) + " heads");
  }
  auto qkv = linear(tape, tokens.tokens, params.qkv_weight, params.qkv_bias);
  auto attn = multi_head_attention(tape, qkv, tokens.batch, tokens.length, heads);
  auto projected = linear(tape, attn.values, params.out_weight, params.out_bias);
  return {{projected, tokens.batch, tokens.length}, attn.probabilities};
}

template <typename T>
LayerOutput<T> encoder_layer(Tape<T>& tape, const TokenSequence<T>& tokens,
                             const LayerParams<T>& params, std::size_t heads) {
  auto normed = layer_norm(tape, tokens.tokens, params.ln1_gain, params.ln1_bias);
  auto attn = mhsa(tape, {normed, tokens.batch, tokens.length}, params, heads);
  auto mid = add(tape, attn.tokens.tokens, tokens.tokens);

  auto normed2 = layer_norm(tape, mid, params.ln2_gain, params.ln2_bias);
  auto hidden = gelu(tape, linear(tape, normed2, params.fc1_weight, params.fc1_bias));
  auto mlp = linear(tape, hidden, params.fc2_weight, params.fc2_bias);
  auto out = add(tape, mlp, mid);
  return {{out, tokens.batch, tokens.length}, attn.attention};
}

template <typename T>
EncodeOutput<T> encode(Tape<T>& tape, const TokenSequence<T>& z0,
                       std::span<const LayerParams<T>> layers, std::size_t heads) {
  if (layers.empty()) throw ContractError("encode: no pre-layers (the model needs L >= 2)");
  EncodeOutput<T> out{z0, {}};
  for (const auto& layer : layers) {
    auto step = encoder_layer(tape, out.hidden, layer, heads);
    out.hidden = step.tokens;
    out.stack.layers.push_back(step.attention);
  }
  return out;
}

template struct LayerParams<float>;
template struct LayerParams<double>;
template struct AttentionStack<float>;
template struct AttentionStack<double>;

#define TRANSFG_INSTANTIATE_ENCODER(T)                                                          \
  template LayerOutput<T> mhsa(Tape<T>&, const TokenSequence<T>&, const LayerParams<T>&,        \
                               std::size_t);                                                    \
  template LayerOutput<T> encoder_layer(Tape<T>&, const TokenSequence<T>&,                      \
                                        const LayerParams<T>&, std::size_t);                    \
  template EncodeOutput<T> encode(Tape<T>&, const TokenSequence<T>&,                            \
                                  std::span<const LayerParams<T>>, std::size_t);

TRANSFG_INSTANTIATE_ENCODER(float)
TRANSFG_INSTANTIATE_ENCODER(double)

#undef TRANSFG_INSTANTIATE_ENCODER

}  // namespace transfg
