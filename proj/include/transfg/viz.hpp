#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "transfg/image_io.hpp"
#include "transfg/patch_embed.hpp"
#include "transfg/psm.hpp"

namespace transfg {

enum class OverlayMode { kSelectedPatches, kAttentionMap };

OverlayMode parse_overlay_mode(const std::string& text);

struct OverlayRequest {
  Tensor<double> image;  // [H×W×C], C in {1, 3}, values in [0,1]
  SelectionResult<double> selection;
  PatchConfig patch;
  OverlayMode mode = OverlayMode::kSelectedPatches;
  std::size_t top_k = 4;
};

// Heads ranked by winning rollout score, descending; equal scores keep head order.
std::vector<std::size_t> rank_heads(const SelectionResult<double>& selection);

// Outline of the top_k selected patches, each square doubled about its
// centre and clipped to the image. Returns an RGB image.
Tensor<double> render_selected(const OverlayRequest& req);

// Per-pixel mean of the values of every patch covering that pixel,
// [H×W]. Pixels no patch reaches are marked by coverage 0.
struct SplatMap {
  Tensor<double> values;
  std::vector<std::size_t> coverage;
};
SplatMap splat_patch_values(std::span<const double> patch_values, const PatchConfig& patch);

// Head-averaged CLS row of the rollout, splatted to pixels, min-max
// normalised and multiplied into a gray image (or blended over colour).
// A constant map yields a uniform 0.5 gray image.
Tensor<double> render_attention(const OverlayRequest& req);

Tensor<double> render(const OverlayRequest& req);

// Selection dump: TFGT records [patch config (H,W,C,P,S)], [indices], [scores], [K×T×T rollout].
void save_selection(const std::filesystem::path& path, const SelectionResult<double>& selection,
                    const PatchConfig& patch);
std::pair<SelectionResult<double>, PatchConfig> load_selection(const std::filesystem::path& path);

}  // namespace transfg
