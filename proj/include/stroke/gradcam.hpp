#pragma once

#include <array>
#include <filesystem>
#include <string>

#include "stroke/augment.hpp"
#include "stroke/backbone.hpp"
#include "stroke/toy_corpus.hpp"

namespace stroke {

struct Heatmap {
    Tensor values;  // [H, W] at input resolution, in [0,1]
    std::string layer_name;
    int target_class = 0;
    enum class Variant { gradcam, gradcampp } variant = Variant::gradcam;
    bool degenerate = false;  // raw map was identically zero
};

struct LayerProbe {
    enum class Depth { early, mid, deep } depth_tag = Depth::deep;
    std::string layer_name;
};

const char* probe_depth_name(LayerProbe::Depth d);

/// First, middle, and last spatial registry layers; when a registry carries
/// the published layer names (stem.conv1, stages.N.blocks.1.conv.conv2_kxk)
/// those are targeted directly.
std::array<LayerProbe, 3> resolve_probes(const Backbone& model);

/// Channel weights = spatial mean gradient; map = ReLU(sum_k w_k A^k),
/// bilinearly upsampled to the input side, then min-max normalized.
Heatmap gradcam(Backbone& model, const ImageTensor& img, int target_class, const LayerProbe& probe);

/// Grad-CAM++ weighting: per-location alpha = g^2 / (2 g^2 + (sum_ab A_ab) g^3)
/// with 0/0 -> 0, w_k = sum_ij alpha_ij ReLU(g_ij); rest as gradcam. Third
/// powers of g follow the exponential-score substitution.
Heatmap gradcampp(Backbone& model, const ImageTensor& img, int target_class, const LayerProbe& probe);

/// Weighting cores on raw captured arrays [C,h,w] -> [h,w] (pre-upsample).
Tensor gradcam_raw(const Tensor& acts, const Tensor& grads);
Tensor gradcampp_raw(const Tensor& acts, const Tensor& grads);

/// Blue(0) -> green(0.5) -> red(1) colormap alpha-blended over a unit-range
/// image: out = (1-alpha)*img + alpha*colormap(h).
ImageTensor overlay(const Heatmap& h, const ImageTensor& img, double alpha = 0.4);

/// Fraction of the top-`mass_fraction` heatmap mass inside the box. Equal
/// values are treated as one tier and included fractionally, so a uniform map
/// scores exactly the box's area share. Degenerate heatmaps score 0.
double localization_score(const Heatmap& h, const TruthBox& box, double mass_fraction);

/// Writes `heatmap_<image>_<layer>_<class>.png` (overlay) and a matching
/// `.txt` raw grid ("h w" header line, then rows of %.17g values) into dir.
/// Returns the overlay path.
std::filesystem::path write_heatmap_files(const std::filesystem::path& dir, const std::string& image_stem,
                                          const Heatmap& h, const ImageTensor& base_img, double alpha = 0.4);

/// Parses the `.txt` raw grid written above.
Tensor read_heatmap_grid(const std::filesystem::path& path);

}  // namespace stroke
