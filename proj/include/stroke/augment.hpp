#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <utility>

#include "stroke/tensor.hpp"

namespace stroke {

/// Model input: (3, H, W). Grayscale sources carry three identical channels.
struct ImageTensor {
    Tensor data;
    enum class Range { unit, standardized } range = Range::unit;

    int64_t height() const { return data.dim(1); }
    int64_t width() const { return data.dim(2); }
};

struct AugmentPolicy {
    std::pair<double, double> crop_scale_range{0.8, 1.0};  // area fraction kept
    double hflip_prob = 0.5;
    double rotation_max_degrees = 15.0;
    double jitter_brightness = 0.1;
    double jitter_contrast = 0.1;
    bool enabled = true;
};

/// Decode + scale to [0,1] + bilinear resize to side x side + replicate a
/// grayscale plane to three channels.
ImageTensor load_and_resize(const std::filesystem::path& path, int64_t side);

/// (x - mean_c) / std_c per channel; result is standardized-range.
ImageTensor normalize(const ImageTensor& img, const std::array<double, 3>& mean, const std::array<double, 3>& std);

/// Seeded classical augmentation in fixed order: random resized crop,
/// horizontal flip, rotation, brightness/contrast jitter, clamp to [0,1].
/// Pure function of (img, policy, seed). Must run on unit-range input.
ImageTensor augment(const ImageTensor& img, const AugmentPolicy& policy, uint64_t seed);

}  // namespace stroke
