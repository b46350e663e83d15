#include "transfg/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "transfg/serialize.hpp"

namespace transfg {

void SynthConfig::validate() const {
  if (image_size == 0 || channels == 0 || num_superclasses == 0 ||
      subclasses_per_superclass == 0 || glyph_size == 0 || samples_per_class == 0 ||
      test_samples_per_class == 0) {
    throw ConfigError("synth config: all sizes and counts must be at least 1");
  }
  if (glyph_size >= image_size) {
    throw ConfigError("synth config: glyph_size " + std::to_string(glyph_size) +
                      " must be smaller than image_size " + std::to_string(image_size));
  }
  if (!(noise_std >= 0.0)) throw ConfigError("synth config: noise_std must be >= 0");
  if (glyph_size * glyph_size < 64 &&
      (std::uint64_t{1} << (glyph_size * glyph_size)) < num_classes() + 2) {
    throw ConfigError("synth config: glyph too small to give every class a distinct pattern");
  }
}

SynthPatterns SynthPatterns::make(const SynthConfig& cfg) {
  cfg.validate();
  const std::size_t cells = cfg.glyph_size * cfg.glyph_size;
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  SynthPatterns p;
  while (p.glyphs.size() < cfg.num_classes()) {
    std::vector<std::uint8_t> bits(cells);
    std::size_t on = 0;
    for (auto& b : bits) {
      b = static_cast<std::uint8_t>(rng.next() >> 63);
      on += b;
    }
    // reject blank/solid patterns and repeats
    if (on == 0 || on == cells) continue;
    if (std::find(p.glyphs.begin(), p.glyphs.end(), bits) != p.glyphs.end()) continue;
    p.glyphs.push_back(std::move(bits));
  }
  return p;
}

double texture_value(const SynthConfig& cfg, std::size_t super, std::size_t row, std::size_t col,
                     std::size_t channel) {
  const double angle = std::numbers::pi * static_cast<double>(super) /
                       static_cast<double>(cfg.num_superclasses);
  const double cycles = 2.0 + static_cast<double>(super);
  const double u = (std::cos(angle) * static_cast<double>(col) +
                    std::sin(angle) * static_cast<double>(row)) /
                   static_cast<double>(cfg.image_size);
  const double phase = std::numbers::pi * static_cast<double>(channel) / 3.0;
  return 0.5 + 0.25 * std::sin(2.0 * std::numbers::pi * cycles * u + phase);
}

Tensor<double> render_sample(const SynthConfig& cfg, const SynthPatterns& patterns,
                             std::size_t label, GlyphRegion where, Rng& rng) {
  if (label >= cfg.num_classes()) throw IndexError("render_sample: label out of range");
  if (where.row + cfg.glyph_size > cfg.image_size || where.col + cfg.glyph_size > cfg.image_size) {
    throw ContractError("render_sample: glyph does not fit inside the image");
  }
  const std::size_t n = cfg.image_size, c = cfg.channels, g = cfg.glyph_size;
  const std::size_t super = label / cfg.subclasses_per_superclass;
  const auto& glyph = patterns.glyphs.at(label);
  Tensor<double> img({n, n, c});
  for (std::size_t r = 0; r < n; ++r) {
    for (std::size_t col = 0; col < n; ++col) {
      const bool inside = r >= where.row && r < where.row + g && col >= where.col &&
                          col < where.col + g;
      for (std::size_t ch = 0; ch < c; ++ch) {
        double v = inside ? static_cast<double>(glyph[(r - where.row) * g + (col - where.col)])
                          : texture_value(cfg, super, r, col, ch);
        if (cfg.noise_std > 0.0) v += cfg.noise_std * rng.normal();
        img[(r * n + col) * c + ch] = std::clamp(v, 0.0, 1.0);
      }
    }
  }
  return img;
}

namespace {

LabeledSplit make_split(const SynthConfig& cfg, const SynthPatterns& patterns, std::size_t per_class,
                        std::size_t& next_id, Rng& rng) {
  const std::size_t n = cfg.image_size, c = cfg.channels;
  const std::size_t count = per_class * cfg.num_classes();
  const std::size_t pixels = n * n * c;
  LabeledSplit split;
  split.images = Tensor<double>({count, n, n, c});
  std::size_t slot = 0;
  for (std::size_t label = 0; label < cfg.num_classes(); ++label) {
    for (std::size_t k = 0; k < per_class; ++k, ++slot) {
      GlyphRegion where;
      where.size = cfg.glyph_size;
      where.row = rng.below(n - cfg.glyph_size + 1);
      where.col = rng.below(n - cfg.glyph_size + 1);
      auto img = render_sample(cfg, patterns, label, where, rng);
      std::copy_n(img.raw(), pixels, split.images.raw() + slot * pixels);
      split.labels.push_back(label);
      split.meta.push_back({next_id++, label, where});
    }
  }
  return split;
}

}  // namespace

LabeledDataset generate(const SynthConfig& cfg) {
  cfg.validate();
  const auto patterns = SynthPatterns::make(cfg);
  Rng rng(cfg.seed);
  std::size_t next_id = 0;
  LabeledDataset data;
  data.train = make_split(cfg, patterns, cfg.samples_per_class, next_id, rng);
  data.test = make_split(cfg, patterns, cfg.test_samples_per_class, next_id, rng);
  return data;
}

namespace {

bool overlaps(std::size_t a0, std::size_t alen, std::size_t b0, std::size_t blen) {
  return a0 < b0 + blen && b0 < a0 + alen;
}

}  // namespace

bool localization_hit(std::span<const std::size_t> indices, const GlyphRegion& glyph,
                      const PatchConfig& patch) {
  for (auto idx : indices) {
    if (idx == 0) continue;  // CLS has no footprint
    const auto rect = patch_rect(patch, idx - 1);
    if (overlaps(rect.top, rect.size, glyph.row, glyph.size) &&
        overlaps(rect.left, rect.size, glyph.col, glyph.size)) {
      return true;
    }
  }
  return false;
}

std::size_t covering_patches(const GlyphRegion& glyph, const PatchConfig& patch) {
  const auto grid = count_patches(patch);
  std::size_t rows = 0, cols = 0;
  for (std::size_t i = 0; i < grid.rows; ++i) {
    rows += overlaps(i * patch.stride, patch.patch, glyph.row, glyph.size) ? 1 : 0;
  }
  for (std::size_t j = 0; j < grid.cols; ++j) {
    cols += overlaps(j * patch.stride, patch.patch, glyph.col, glyph.size) ? 1 : 0;
  }
  return rows * cols;
}

double random_hit_probability(const SynthConfig& cfg, const PatchConfig& patch, std::size_t draws) {
  cfg.validate();
  const auto grid = count_patches(patch);
  const std::size_t positions = cfg.image_size - cfg.glyph_size + 1;
  double total = 0.0;
  for (std::size_t r = 0; r < positions; ++r) {
    for (std::size_t c = 0; c < positions; ++c) {
      const double cover = static_cast<double>(covering_patches({r, c, cfg.glyph_size}, patch)) /
                           static_cast<double>(grid.count);
      total += 1.0 - std::pow(1.0 - cover, static_cast<double>(draws));
    }
  }
  return total / static_cast<double>(positions * positions);
}

void export_dataset(const LabeledDataset& data, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  std::ofstream meta(dir / "metadata.txt", std::ios::trunc);
  if (!meta) throw IoError("cannot open " + (dir / "metadata.txt").string());
  meta << "# split id label glyph_row glyph_col glyph_size\n";
  for (const auto* name : {"train", "test"}) {
    const auto& split = std::string(name) == "train" ? data.train : data.test;
    Tensor<double> labels({split.size()});
    for (std::size_t i = 0; i < split.size(); ++i) labels[i] = static_cast<double>(split.labels[i]);
    save_tensor(dir / (std::string(name) + "_images.tfgt"), split.images);
    save_tensor(dir / (std::string(name) + "_labels.tfgt"), labels);
    for (const auto& m : split.meta) {
      meta << name << ' ' << m.id << ' ' << m.label << ' ' << m.glyph.row << ' ' << m.glyph.col
           << ' ' << m.glyph.size << '\n';
    }
  }
  if (!meta) throw IoError("write failed for " + (dir / "metadata.txt").string());
}

LabeledDataset import_dataset(const std::filesystem::path& dir) {
  LabeledDataset data;
  for (const auto* name : {"train", "test"}) {
    auto& split = std::string(name) == "train" ? data.train : data.test;
    split.images = load_tensor(dir / (std::string(name) + "_images.tfgt"));
    const auto labels = load_tensor(dir / (std::string(name) + "_labels.tfgt"));
    if (split.images.rank() != 4 || labels.numel() != split.images.dim(0)) {
      throw DimensionError("dataset split " + std::string(name) + " has inconsistent extents");
    }
    for (auto v : labels.data()) split.labels.push_back(static_cast<std::size_t>(v));
  }
  std::ifstream meta(dir / "metadata.txt");
  if (!meta) throw IoError("cannot open " + (dir / "metadata.txt").string());
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string split_name;
    SampleMeta m;
    if (!(ls >> split_name >> m.id >> m.label >> m.glyph.row >> m.glyph.col >> m.glyph.size)) {
      throw IoError("malformed metadata line: " + line);
    }
    (split_name == "train" ? data.train : data.test).meta.push_back(m);
  }
  if (data.train.meta.size() != data.train.size() || data.test.meta.size() != data.test.size()) {
    throw IoError("metadata does not cover every sample in " + dir.string());
  }
  return data;
}

}  // namespace transfg
