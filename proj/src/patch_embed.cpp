#include "transfg/patch_embed.hpp"

#include <algorithm>
#include <string>

#include "transfg/init.hpp"

namespace transfg {

void PatchConfig::validate() const {
  if (channels == 0) throw ConfigError("patch config: channels must be positive");
  if (stride == 0) throw ConfigError("patch config: stride must be positive");
  if (stride > patch) {
    throw ConfigError("patch config: stride " + std::to_string(stride) + " exceeds patch size " +
                      std::to_string(patch));
  }
  if (patch > std::min(height, width)) {
    throw ConfigError("patch config: patch size " + std::to_string(patch) +
                      " exceeds image extent " + std::to_string(std::min(height, width)));
  }
}

PatchGrid count_patches(const PatchConfig& cfg) {
  cfg.validate();
  PatchGrid g;
  g.rows = (cfg.height - cfg.patch + cfg.stride) / cfg.stride;
  g.cols = (cfg.width - cfg.patch + cfg.stride) / cfg.stride;
  g.count = g.rows * g.cols;
  return g;
}

PatchRect patch_rect(const PatchConfig& cfg, std::size_t index) {
  const auto grid = count_patches(cfg);
  if (index >= grid.count) {
    throw IndexError("patch index " + std::to_string(index) + " out of range for " +
                     std::to_string(grid.count) + " patches");
  }
  return {(index / grid.cols) * cfg.stride, (index % grid.cols) * cfg.stride, cfg.patch};
}

namespace {

template <typename T>
void copy_windows(const T* image, const PatchConfig& cfg, const PatchGrid& grid, T* out) {
  const std::size_t row_stride = cfg.width * cfg.channels;
  const std::size_t span = cfg.patch * cfg.channels;
  for (std::size_t i = 0; i < grid.rows; ++i) {
    for (std::size_t j = 0; j < grid.cols; ++j) {
      const T* corner = image + (i * cfg.stride) * row_stride + (j * cfg.stride) * cfg.channels;
      for (std::size_t r = 0; r < cfg.patch; ++r) {
        out = std::copy_n(corner + r * row_stride, span, out);
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> extract_patches(const Tensor<T>& image, const PatchConfig& cfg) {
  const auto grid = count_patches(cfg);
  const Shape expected{cfg.height, cfg.width, cfg.channels};
  if (image.shape() != expected) {
    throw DimensionError("extract_patches: image " + shape_string(image.shape()) +
                         " does not match config " + shape_string(expected));
  }
  Tensor<T> out({grid.count, cfg.patch_dim()});
  copy_windows(image.raw(), cfg, grid, out.raw());
  return out;
}

template <typename T>
Tensor<T> extract_patches_batch(const Tensor<T>& images, const PatchConfig& cfg) {
  const auto grid = count_patches(cfg);
  if (images.rank() != 4 || images.dim(1) != cfg.height || images.dim(2) != cfg.width ||
      images.dim(3) != cfg.channels) {
    throw DimensionError("extract_patches_batch: images " + shape_string(images.shape()) +
                         " do not match config " +
                         shape_string({cfg.height, cfg.width, cfg.channels}));
  }
  const std::size_t batch = images.dim(0);
  const std::size_t pixels = cfg.height * cfg.width * cfg.channels;
  Tensor<T> out({batch * grid.count, cfg.patch_dim()});
  for (std::size_t b = 0; b < batch; ++b) {
    copy_windows(images.raw() + b * pixels, cfg, grid, out.raw() + b * grid.count * cfg.patch_dim());
  }
  return out;
}

template <typename T>
PatchEmbedParams<T> PatchEmbedParams<T>::init(const PatchConfig& cfg, std::size_t dim, Rng& rng) {
  const auto grid = count_patches(cfg);
  PatchEmbedParams p;
  p.projection = uniform_fan_in<T>({cfg.patch_dim(), dim}, cfg.patch_dim(), rng);
  p.position = trainable_filled<T>({grid.count + 1, dim}, T(0));
  p.cls = trainable_filled<T>({1, dim}, T(0));
  return p;
}

template <typename T>
TokenSequence<T> embed(Tape<T>& tape, const Tensor<T>& patches, const PatchEmbedParams<T>& params,
                       std::size_t batch) {
  if (patches.rank() != 2 || batch == 0 || patches.dim(0) % batch != 0) {
    throw DimensionError("embed: patches " + shape_string(patches.shape()) +
                         " cannot be split into " + std::to_string(batch) + " samples");
  }
  auto projected = matmul(tape, patches, params.projection);
  auto tokens = prepend_cls_add_pos(tape, projected, params.cls, params.position, batch);
  return {tokens, batch, patches.dim(0) / batch + 1};
}

template Tensor<float> extract_patches(const Tensor<float>&, const PatchConfig&);
template Tensor<double> extract_patches(const Tensor<double>&, const PatchConfig&);
template Tensor<float> extract_patches_batch(const Tensor<float>&, const PatchConfig&);
template Tensor<double> extract_patches_batch(const Tensor<double>&, const PatchConfig&);
template struct PatchEmbedParams<float>;
template struct PatchEmbedParams<double>;
template TokenSequence<float> embed(Tape<float>&, const Tensor<float>&,
                                    const PatchEmbedParams<float>&, std::size_t);
template TokenSequence<double> embed(Tape<double>&, const Tensor<double>&,
                                     const PatchEmbedParams<double>&, std::size_t);

}  // namespace transfg
