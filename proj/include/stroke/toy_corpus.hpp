#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>

#include "stroke/manifest.hpp"

namespace stroke {

/// Procedural pseudo-CT corpus. Every image is an elliptical "brain" on black
/// background; class 1 adds a bright blob, class 2 a dark blob, class 0 none.
/// Images sharing a seed-index share the same base brain, so per-index class
/// comparisons are paired. Writes `toy_truth.json` (blob bounding boxes keyed
/// by class-relative path) next to the class directories.
Manifest generate_toy_corpus(const std::filesystem::path& out_root, const std::array<int64_t, kNumClasses>& n_per_class,
                             int64_t image_side, uint64_t seed);

/// Half-open blob box [x0,x1) x [y0,y1) in pixel coordinates.
struct TruthBox {
    int label = 0;
    int64_t x0 = 0, y0 = 0, x1 = 0, y1 = 0;
};

/// Reads toy_truth.json; keys are class-relative paths like
/// "hemorrhagic/toy_0004.png".
std::map<std::string, TruthBox> read_toy_truth(const std::filesystem::path& json_path);

}  // namespace stroke
