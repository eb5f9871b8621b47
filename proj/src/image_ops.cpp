#include "stroke/image_ops.hpp"

#include <algorithm>
#include <cmath>

namespace stroke {

namespace {

// Bilinear sample with edge clamp; (y, x) in source pixel coordinates.
double sample_clamped(const double* src, int64_t h, int64_t w, double y, double x) {
    y = std::clamp(y, 0.0, static_cast<double>(h - 1));
    x = std::clamp(x, 0.0, static_cast<double>(w - 1));
    const int64_t y0 = static_cast<int64_t>(std::floor(y));
    const int64_t x0 = static_cast<int64_t>(std::floor(x));
    const int64_t y1 = std::min(y0 + 1, h - 1);
    const int64_t x1 = std::min(x0 + 1, w - 1);
    const double fy = y - static_cast<double>(y0);
    const double fx = x - static_cast<double>(x0);
    const double a = src[y0 * w + x0], b = src[y0 * w + x1];
    const double c = src[y1 * w + x0], d = src[y1 * w + x1];
    return a * (1 - fy) * (1 - fx) + b * (1 - fy) * fx + c * fy * (1 - fx) + d * fy * fx;
}

}  // namespace

void bilinear_resize(const double* src, int64_t sh, int64_t sw, double* dst, int64_t dh, int64_t dw) {
    const double sy = static_cast<double>(sh) / static_cast<double>(dh);
    const double sx = static_cast<double>(sw) / static_cast<double>(dw);
    for (int64_t oy = 0; oy < dh; ++oy) {
        const double y = (static_cast<double>(oy) + 0.5) * sy - 0.5;
        for (int64_t ox = 0; ox < dw; ++ox) {
            const double x = (static_cast<double>(ox) + 0.5) * sx - 0.5;
            dst[oy * dw + ox] = sample_clamped(src, sh, sw, y, x);
        }
    }
}

void crop_resize(const double* src, int64_t sh, int64_t sw, int64_t top, int64_t left, int64_t ch, int64_t cw,
                 double* dst, int64_t dh, int64_t dw) {
    const double sy = static_cast<double>(ch) / static_cast<double>(dh);
    const double sx = static_cast<double>(cw) / static_cast<double>(dw);
    for (int64_t oy = 0; oy < dh; ++oy) {
        const double y = static_cast<double>(top) + (static_cast<double>(oy) + 0.5) * sy - 0.5;
        for (int64_t ox = 0; ox < dw; ++ox) {
            const double x = static_cast<double>(left) + (static_cast<double>(ox) + 0.5) * sx - 0.5;
            dst[oy * dw + ox] = sample_clamped(src, sh, sw, y, x);
        }
    }
}

void hflip(const double* src, int64_t h, int64_t w, double* dst) {
    for (int64_t y = 0; y < h; ++y)
        for (int64_t x = 0; x < w; ++x) dst[y * w + x] = src[y * w + (w - 1 - x)];
}

void rotate_bilinear(const double* src, int64_t h, int64_t w, double* dst, double degrees) {
    const double rad = degrees * 0.017453292519943295;
    const double cs = std::cos(rad), sn = std::sin(rad);
    const double cy = (static_cast<double>(h) - 1.0) / 2.0;
    const double cx = (static_cast<double>(w) - 1.0) / 2.0;
    for (int64_t oy = 0; oy < h; ++oy) {
        for (int64_t ox = 0; ox < w; ++ox) {
            // inverse map: rotate destination offset by -angle
            const double dy = static_cast<double>(oy) - cy;
            const double dx = static_cast<double>(ox) - cx;
            const double sy2 = cy + dy * cs - dx * sn;
            const double sx2 = cx + dy * sn + dx * cs;
            if (sy2 < 0.0 || sy2 > static_cast<double>(h - 1) || sx2 < 0.0 || sx2 > static_cast<double>(w - 1)) {
                dst[oy * w + ox] = 0.0;
            } else {
                dst[oy * w + ox] = sample_clamped(src, h, w, sy2, sx2);
            }
        }
    }
}

}  // namespace stroke
