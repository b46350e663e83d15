#include "transfg/model.hpp"

#include <map>

namespace transfg {

void ModelConfig::validate() const {
  encoder.validate();
  patch.validate();
  if (num_classes == 0) throw ConfigError("model config: num_classes must be positive");
}

template <typename T>
ModelParams<T> ModelParams<T>::init(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelParams p;
  p.embed = PatchEmbedParams<T>::init(cfg.patch, cfg.encoder.dim, rng);
  for (std::size_t l = 0; l < cfg.encoder.layers; ++l) {
    p.layers.push_back(LayerParams<T>::init(cfg.encoder, rng));
  }
  p.head = HeadParams<T>::init(cfg.encoder.dim, cfg.num_classes, rng);
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named() const {
  std::vector<std::pair<std::string, Tensor<T>>> out = {
      {"embed.projection", embed.projection},
      {"embed.position", embed.position},
      {"embed.cls", embed.cls},
  };
  for (std::size_t l = 0; l < layers.size(); ++l) {
    for (auto& entry : layers[l].named("layer" + std::to_string(l) + ".")) {
      out.push_back(std::move(entry));
    }
  }
  out.emplace_back("head.weight", head.weight);
  out.emplace_back("head.bias", head.bias);
  return out;
}

template <typename T>
NamedTensors ModelParams<T>::to_checkpoint() const {
  NamedTensors out;
  for (const auto& [name, t] : named()) out.emplace_back(name, t.template cast<double>());
  return out;
}

template <typename T>
ModelParams<T> ModelParams<T>::from_checkpoint(const NamedTensors& tensors, const ModelConfig& cfg) {
  auto params = init(cfg, 0);
  std::map<std::string, const Tensor<double>*> by_name;
  for (const auto& [name, t] : tensors) by_name[name] = &t;
  auto slots = params.named();
  if (slots.size() != tensors.size()) {
    throw DimensionError("checkpoint holds " + std::to_string(tensors.size()) +
                         " tensors, model expects " + std::to_string(slots.size()));
  }
  for (auto& [name, slot] : slots) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DimensionError("checkpoint is missing tensor " + name);
    const auto& src = *it->second;
    if (src.shape() != slot.shape()) {
      throw DimensionError("checkpoint tensor " + name + " has shape " + shape_string(src.shape()) +
                           ", model expects " + shape_string(slot.shape()));
    }
    for (std::size_t i = 0; i < src.numel(); ++i) slot[i] = static_cast<T>(src[i]);
  }
  return params;
}

template <typename T>
ForwardResult<T> forward(Tape<T>& tape, const ModelParams<T>& params, const ModelConfig& cfg,
                         const Tensor<T>& images) {
  if (params.layers.size() != cfg.encoder.layers) {
    throw DimensionError("model has " + std::to_string(params.layers.size()) +
                         " layers, config expects " + std::to_string(cfg.encoder.layers));
  }
  const std::size_t batch = images.dim(0);
  const std::size_t heads = cfg.encoder.heads;
  auto patches = extract_patches_batch(images, cfg.patch);
  auto z0 = embed(tape, patches, params.embed, batch);

  std::span<const LayerParams<T>> pre(params.layers.data(), params.layers.size() - 1);
  auto encoded = encode(tape, z0, pre, heads);

  ForwardResult<T> result;
  result.stack = std::move(encoded.stack);
  result.selection = select_from_cls_rows(rollout_cls_rows(result.stack, cfg.rollout));

  const auto& last = params.layers.back();
  ClassifyOutput<T> out;
  if (cfg.part_selection) {
    auto local = assemble_local(tape, encoded.hidden, result.selection.indices);
    out = classify(tape, local, last, params.head, heads);
  } else {
    out = classify(tape, encoded.hidden, last, params.head, heads);
  }
  result.logits = out.logits;
  result.cls_tokens = out.cls_tokens;
  return result;
}

template <typename T>
SelectionResult<T> sample_selection(const ForwardResult<T>& result, const ModelConfig& cfg,
                                    std::size_t sample) {
  return select(rollout(result.stack, sample, cfg.rollout));
}

template struct ModelParams<float>;
template struct ModelParams<double>;
template ForwardResult<float> forward(Tape<float>&, const ModelParams<float>&, const ModelConfig&,
                                      const Tensor<float>&);
template ForwardResult<double> forward(Tape<double>&, const ModelParams<double>&,
                                       const ModelConfig&, const Tensor<double>&);
template SelectionResult<float> sample_selection(const ForwardResult<float>&, const ModelConfig&,
                                                 std::size_t);
template SelectionResult<double> sample_selection(const ForwardResult<double>&, const ModelConfig&,
                                                  std::size_t);

}  // namespace transfg
