#include "stroke/augment.hpp"

#include <algorithm>
#include <cmath>

#include "stroke/errors.hpp"
#include "stroke/image_io.hpp"
#include "stroke/image_ops.hpp"
#include "stroke/rng.hpp"

namespace stroke {

ImageTensor load_and_resize(const std::filesystem::path& path, int64_t side) {
    if (side < 32) throw ConfigError("load_and_resize: side must be >= 32");
    ImageU8 raw = read_png(path);
    const int64_t sh = raw.height, sw = raw.width, ch = raw.channels;
    ImageTensor out;
    out.data = Tensor::zeros({3, side, side});
    std::vector<double> plane(static_cast<size_t>(sh * sw));
    for (int64_t c = 0; c < 3; ++c) {
        const int64_t src_c = ch == 1 ? 0 : c;
        for (int64_t i = 0; i < sh * sw; ++i)
            plane[static_cast<size_t>(i)] = raw.pixels[static_cast<size_t>(i * ch + src_c)] / 255.0;
        bilinear_resize(plane.data(), sh, sw, out.data.data() + c * side * side, side, side);
    }
    out.range = ImageTensor::Range::unit;
    return out;
}

ImageTensor normalize(const ImageTensor& img, const std::array<double, 3>& mean, const std::array<double, 3>& std) {
    if (img.range != ImageTensor::Range::unit) throw OrderingError("normalize: input already standardized");
    for (double s : std)
        if (!(s > 0.0)) throw ConfigError("normalize: std must be > 0");
    ImageTensor out;
    out.data = img.data;
    out.range = ImageTensor::Range::standardized;
    const int64_t plane = img.height() * img.width();
    for (int64_t c = 0; c < 3; ++c) {
        double* p = out.data.data() + c * plane;
        const double m = mean[static_cast<size_t>(c)], s = std[static_cast<size_t>(c)];
        for (int64_t i = 0; i < plane; ++i) p[i] = (p[i] - m) / s;
    }
    return out;
}

ImageTensor augment(const ImageTensor& img, const AugmentPolicy& policy, uint64_t seed) {
    if (img.range != ImageTensor::Range::unit)
        throw OrderingError("augment: input must be unit-range (augment before normalize)");
    if (!(policy.crop_scale_range.first > 0.0 && policy.crop_scale_range.first <= policy.crop_scale_range.second &&
          policy.crop_scale_range.second <= 1.0))
        throw ConfigError("augment: crop_scale_range must satisfy 0 < low <= high <= 1");
    ImageTensor out;
    out.data = img.data;
    out.range = ImageTensor::Range::unit;
    if (!policy.enabled) return out;

    const int64_t H = img.height(), W = img.width();
    const int64_t plane = H * W;
    Rng rng(seed);

    // random resized crop (area scale, square aspect)
    const double scale = rng.uniform(policy.crop_scale_range.first, policy.crop_scale_range.second);
    const double lin = std::sqrt(scale);
    const int64_t ch = std::max<int64_t>(1, static_cast<int64_t>(std::lround(static_cast<double>(H) * lin)));
    const int64_t cw = std::max<int64_t>(1, static_cast<int64_t>(std::lround(static_cast<double>(W) * lin)));
    const int64_t top = rng.uniform_int(H - ch + 1);
    const int64_t left = rng.uniform_int(W - cw + 1);
    if (ch != H || cw != W || top != 0 || left != 0) {
        Tensor t = Tensor::zeros({3, H, W});
        for (int64_t c = 0; c < 3; ++c)
            crop_resize(out.data.data() + c * plane, H, W, top, left, ch, cw, t.data() + c * plane, H, W);
        out.data = std::move(t);
    }

    const bool flip = rng.uniform() < policy.hflip_prob;
    if (flip) {
        Tensor t = Tensor::zeros({3, H, W});
        for (int64_t c = 0; c < 3; ++c) hflip(out.data.data() + c * plane, H, W, t.data() + c * plane);
        out.data = std::move(t);
    }

    const double angle = rng.uniform(-policy.rotation_max_degrees, policy.rotation_max_degrees);
    if (angle != 0.0) {
        Tensor t = Tensor::zeros({3, H, W});
        for (int64_t c = 0; c < 3; ++c) rotate_bilinear(out.data.data() + c * plane, H, W, t.data() + c * plane, angle);
        out.data = std::move(t);
    }

    const double bf = rng.uniform(1.0 - policy.jitter_brightness, 1.0 + policy.jitter_brightness);
    const double cf = rng.uniform(1.0 - policy.jitter_contrast, 1.0 + policy.jitter_contrast);
    if (bf != 1.0) {
        double* p = out.data.data();
        for (int64_t i = 0; i < out.data.size(); ++i) p[i] *= bf;
    }
    if (cf != 1.0) {
        const double m = out.data.mean();
        double* p = out.data.data();
        for (int64_t i = 0; i < out.data.size(); ++i) p[i] = m + (p[i] - m) * cf;
    }
    {
        double* p = out.data.data();
        for (int64_t i = 0; i < out.data.size(); ++i) p[i] = std::clamp(p[i], 0.0, 1.0);
    }
    return out;
}

}  // namespace stroke
