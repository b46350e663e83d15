#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "transfg/patch_embed.hpp"
#include "transfg/rng.hpp"
#include "transfg/tensor.hpp"

namespace transfg {

/// Toy fine-grained dataset: each super-class owns a sinusoid grating, each
/// sub-class owns a binary glyph stamped at a random location. Sub-classes
/// of one super-class therefore differ only inside the glyph footprint.
struct SynthConfig {
  std::size_t image_size = 32;
  std::size_t channels = 1;
  std::size_t num_superclasses = 4;
  std::size_t subclasses_per_superclass = 4;
  std::size_t glyph_size = 6;
  std::size_t samples_per_class = 64;       // training split
  std::size_t test_samples_per_class = 16;
  double noise_std = 0.05;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t num_classes() const { return num_superclasses * subclasses_per_superclass; }
};

struct GlyphRegion {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t size = 0;
};

struct SampleMeta {
  std::size_t id = 0;  // unique across both splits
  std::size_t label = 0;
  GlyphRegion glyph;
};

struct LabeledSplit {
  Tensor<double> images;  // [B×H×W×C] in [0,1]
  std::vector<std::size_t> labels;
  std::vector<SampleMeta> meta;

  std::size_t size() const { return labels.size(); }
};

struct LabeledDataset {
  LabeledSplit train;
  LabeledSplit test;
};

// Per-class fixed patterns derived from the seed.
struct SynthPatterns {
  std::vector<std::vector<std::uint8_t>> glyphs;  // [class][glyph_size²], row-major bits

  static SynthPatterns make(const SynthConfig& cfg);
};

// Noise-free texture value of super-class `super` at (row, col, channel).
double texture_value(const SynthConfig& cfg, std::size_t super, std::size_t row, std::size_t col,
                     std::size_t channel);

// One [H×W×C] sample with the glyph at `where`. Noise comes from `rng` and is
// skipped entirely when noise_std is 0.
Tensor<double> render_sample(const SynthConfig& cfg, const SynthPatterns& patterns,
                             std::size_t label, GlyphRegion where, Rng& rng);

// Byte-identical output for identical configs.
LabeledDataset generate(const SynthConfig& cfg);

// True iff some selected patch's pixel footprint overlaps the glyph.
bool localization_hit(std::span<const std::size_t> indices, const GlyphRegion& glyph,
                      const PatchConfig& patch);

// Number of patches whose footprint overlaps the glyph.
std::size_t covering_patches(const GlyphRegion& glyph, const PatchConfig& patch);

// Probability that `draws` patch indices drawn uniformly (with replacement)
// from 1..N hit a glyph placed uniformly at random, averaged exactly over all
// glyph positions: mean of 1 - (1 - c/N)^draws.
double random_hit_probability(const SynthConfig& cfg, const PatchConfig& patch, std::size_t draws);

// images.tfgt / labels.tfgt per split plus metadata.txt
// ("split id label glyph_row glyph_col glyph_size" per line).
void export_dataset(const LabeledDataset& data, const std::filesystem::path& dir);
LabeledDataset import_dataset(const std::filesystem::path& dir);

}  // namespace transfg
