#include "transfg/viz.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "transfg/serialize.hpp"

namespace transfg {

OverlayMode parse_overlay_mode(const std::string& text) {
  if (text == "selected" || text == "selected_patches") return OverlayMode::kSelectedPatches;
  if (text == "attention" || text == "attention_map") return OverlayMode::kAttentionMap;
  throw ConfigError("unknown overlay mode '" + text + "' (expected selected or attention)");
}

namespace {

void check_image(const Tensor<double>& image, const PatchConfig& patch) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("overlay image must be [H×W×1] or [H×W×3], got " +
                         shape_string(image.shape()));
  }
  if (image.dim(0) != patch.height || image.dim(1) != patch.width) {
    throw DimensionError("overlay image " + shape_string(image.shape()) +
                         " does not match the patch config " +
                         shape_string({patch.height, patch.width}));
  }
}

Tensor<double> to_rgb(const Tensor<double>& image) {
  const std::size_t h = image.dim(0), w = image.dim(1), c = image.dim(2);
  Tensor<double> out({h, w, 3});
  for (std::size_t p = 0; p < h * w; ++p) {
    for (std::size_t k = 0; k < 3; ++k) out[p * 3 + k] = image[p * c + (c == 1 ? 0 : k)];
  }
  return out;
}

}  // namespace

std::vector<std::size_t> rank_heads(const SelectionResult<double>& selection) {
  std::vector<std::size_t> order(selection.indices.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return selection.scores.at(a) > selection.scores.at(b);
  });
  return order;
}

Tensor<double> render_selected(const OverlayRequest& req) {
  check_image(req.image, req.patch);
  if (req.top_k == 0) throw ContractError("render_selected: top_k must be at least 1");
  const auto grid = count_patches(req.patch);
  for (auto idx : req.selection.indices) {
    if (idx == 0 || idx > grid.count) {
      throw ContractError("render_selected: index " + std::to_string(idx) + " outside [1, " +
                          std::to_string(grid.count) + "]");
    }
  }
  auto out = to_rgb(req.image);
  const auto h = static_cast<long long>(req.patch.height);
  const auto w = static_cast<long long>(req.patch.width);
  auto paint = [&](long long r, long long c) {
    if (r < 0 || c < 0 || r >= h || c >= w) return;
    const auto p = static_cast<std::size_t>(r * w + c) * 3;
    out[p] = 1.0;
    out[p + 1] = 0.0;
    out[p + 2] = 0.0;
  };

  const auto order = rank_heads(req.selection);
  const std::size_t count = std::min(req.top_k, order.size());
  for (std::size_t k = 0; k < count; ++k) {
    const auto rect = patch_rect(req.patch, req.selection.indices[order[k]] - 1);
    const auto side = static_cast<long long>(rect.size);
    // doubled square about the unchanged centre
    const long long top = static_cast<long long>(rect.top) - side / 2;
    const long long left = static_cast<long long>(rect.left) - side / 2;
    const long long bottom = top + 2 * side - 1;
    const long long right = left + 2 * side - 1;
    for (long long c = left; c <= right; ++c) {
      paint(top, c);
      paint(bottom, c);
    }
    for (long long r = top; r <= bottom; ++r) {
      paint(r, left);
      paint(r, right);
    }
  }
  return out;
}

SplatMap splat_patch_values(std::span<const double> patch_values, const PatchConfig& patch) {
  const auto grid = count_patches(patch);
  if (patch_values.size() != grid.count) {
    throw DimensionError("splat: " + std::to_string(patch_values.size()) + " values for " +
                         std::to_string(grid.count) + " patches");
  }
  const std::size_t h = patch.height, w = patch.width;
  SplatMap map{Tensor<double>({h, w}), std::vector<std::size_t>(h * w, 0)};
  for (std::size_t idx = 0; idx < grid.count; ++idx) {
    const auto rect = patch_rect(patch, idx);
    for (std::size_t r = rect.top; r < rect.top + rect.size; ++r) {
      for (std::size_t c = rect.left; c < rect.left + rect.size; ++c) {
        map.values[r * w + c] += patch_values[idx];
        ++map.coverage[r * w + c];
      }
    }
  }
  for (std::size_t p = 0; p < h * w; ++p) {
    if (map.coverage[p]) map.values[p] /= static_cast<double>(map.coverage[p]);
  }
  return map;
}

Tensor<double> render_attention(const OverlayRequest& req) {
  check_image(req.image, req.patch);
  const auto grid = count_patches(req.patch);
  const auto& rollout = req.selection.rollout;
  if (rollout.empty()) throw ContractError("render_attention: selection has no rollout matrices");
  std::vector<double> mean(grid.count, 0.0);
  for (const auto& m : rollout) {
    if (m.rank() != 2 || m.dim(0) != grid.count + 1 || m.dim(1) != grid.count + 1) {
      throw DimensionError("render_attention: rollout " + shape_string(m.shape()) +
                           " does not match " + std::to_string(grid.count) + " patches");
    }
    for (std::size_t j = 0; j < grid.count; ++j) mean[j] += m(0, j + 1);
  }
  for (auto& v : mean) v /= static_cast<double>(rollout.size());

  const auto map = splat_patch_values(mean, req.patch);
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (std::size_t p = 0; p < map.coverage.size(); ++p) {
    if (!map.coverage[p]) continue;
    lo = std::min(lo, map.values[p]);
    hi = std::max(hi, map.values[p]);
  }
  const std::size_t h = req.image.dim(0), w = req.image.dim(1), c = req.image.dim(2);
  Tensor<double> out({h, w, c});
  const double range = hi - lo;
  if (!(range > 1e-12 * std::max(1.0, std::abs(hi)))) {
    std::fill(out.data().begin(), out.data().end(), 0.5);
    return out;
  }
  for (std::size_t p = 0; p < h * w; ++p) {
    const double weight = map.coverage[p] ? (map.values[p] - lo) / range : 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double px = req.image[p * c + k];
      out[p * c + k] = c == 1 ? px * weight : 0.5 * px + 0.5 * weight;
    }
  }
  return out;
}

Tensor<double> render(const OverlayRequest& req) {
  return req.mode == OverlayMode::kSelectedPatches ? render_selected(req) : render_attention(req);
}

void save_selection(const std::filesystem::path& path, const SelectionResult<double>& selection,
                    const PatchConfig& patch) {
  const std::size_t k = selection.indices.size();
  if (k == 0 || selection.scores.size() != k || selection.rollout.size() != k) {
    throw ContractError("save_selection: indices, scores and rollout must have one entry per head");
  }
  const std::size_t t = selection.rollout.front().dim(0);
  Tensor<double> geometry({5}, {double(patch.height), double(patch.width), double(patch.channels),
                                double(patch.patch), double(patch.stride)});
  Tensor<double> indices({k}), scores({k}), rollout({k, t, t});
  for (std::size_t h = 0; h < k; ++h) {
    indices[h] = static_cast<double>(selection.indices[h]);
    scores[h] = selection.scores[h];
    const auto& m = selection.rollout[h];
    if (m.shape() != Shape{t, t}) throw DimensionError("save_selection: ragged rollout matrices");
    std::copy_n(m.raw(), t * t, rollout.raw() + h * t * t);
  }
  save_tensors(path, {geometry, indices, scores, rollout});
}

std::pair<SelectionResult<double>, PatchConfig> load_selection(const std::filesystem::path& path) {
  const auto records = load_tensors(path);
  if (records.size() != 4 || records[0].numel() != 5 || records[3].rank() != 3) {
    throw IoError("malformed selection dump " + path.string());
  }
  PatchConfig patch;
  patch.height = static_cast<std::size_t>(records[0][0]);
  patch.width = static_cast<std::size_t>(records[0][1]);
  patch.channels = static_cast<std::size_t>(records[0][2]);
  patch.patch = static_cast<std::size_t>(records[0][3]);
  patch.stride = static_cast<std::size_t>(records[0][4]);
  patch.validate();
  const std::size_t k = records[1].numel();
  const std::size_t t = records[3].dim(1);
  if (records[2].numel() != k || records[3].dim(0) != k || records[3].dim(2) != t) {
    throw IoError("inconsistent selection dump " + path.string());
  }
  SelectionResult<double> sel;
  for (std::size_t h = 0; h < k; ++h) {
    sel.indices.push_back(static_cast<std::size_t>(records[1][h]));
    sel.scores.push_back(records[2][h]);
    Tensor<double> m({t, t});
    std::copy_n(records[3].raw() + h * t * t, t * t, m.raw());
    sel.rollout.push_back(std::move(m));
  }
  return {std::move(sel), patch};
}

}  // namespace transfg
