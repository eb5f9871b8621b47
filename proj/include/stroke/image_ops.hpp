#pragma once

#include <cstdint>

namespace stroke {

/// Single-plane resampling primitives shared by preprocessing, augmentation,
/// and heatmap upsampling. All use bilinear interpolation with half-pixel
/// centers and edge clamping, so a constant image stays exactly constant.

void bilinear_resize(const double* src, int64_t sh, int64_t sw, double* dst, int64_t dh, int64_t dw);

/// Crop the box [top, top+ch) x [left, left+cw) then resize to (dh, dw).
void crop_resize(const double* src, int64_t sh, int64_t sw, int64_t top, int64_t left, int64_t ch, int64_t cw,
                 double* dst, int64_t dh, int64_t dw);

void hflip(const double* src, int64_t h, int64_t w, double* dst);

/// Rotate counterclockwise about the image center; samples outside the source
/// are zero (padded corners).
void rotate_bilinear(const double* src, int64_t h, int64_t w, double* dst, double degrees);

}  // namespace stroke
