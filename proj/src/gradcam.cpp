#include "stroke/gradcam.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>

#include "stroke/errors.hpp"
#include "stroke/image_io.hpp"
#include "stroke/image_ops.hpp"

namespace stroke {

namespace {

/// Copies one capture into dense [C,h,w] activation/gradient tensors for
/// image 0 of the batch.
void extract_capture(const Tape& t, const SpatialCapture& cap, Tensor& acts, Tensor& grads) {
    const Tensor& v = t.val(cap.value);
    const Tensor& g = t.grad(cap.value);
    acts = Tensor({cap.channels, cap.h, cap.w});
    grads = Tensor({cap.channels, cap.h, cap.w});
    if (cap.kind == SpatialCapture::Kind::chw) {
        const int64_t n = cap.channels * cap.h * cap.w;
        std::copy(v.data(), v.data() + n, acts.data());
        std::copy(g.data(), g.data() + n, grads.data());
    } else {
        // tokens: [1, T, D] with T = h*w, D = channels
        const int64_t T = cap.h * cap.w, D = cap.channels;
        for (int64_t tok = 0; tok < T; ++tok)
            for (int64_t d = 0; d < D; ++d) {
                acts.data()[d * T + tok] = v.data()[tok * D + d];
                grads.data()[d * T + tok] = g.data()[tok * D + d];
            }
    }
}

Heatmap finish(Tensor raw, int64_t side, std::string layer, int target_class, Heatmap::Variant variant) {
    Heatmap h;
    h.layer_name = std::move(layer);
    h.target_class = target_class;
    h.variant = variant;
    h.values = Tensor({side, side});

    bool all_zero = true;
    for (int64_t i = 0; i < raw.size() && all_zero; ++i) all_zero = raw.data()[i] == 0.0;
    if (all_zero) {
        h.degenerate = true;
        return h;
    }
    bilinear_resize(raw.data(), raw.dim(0), raw.dim(1), h.values.data(), side, side);
    double lo = h.values.data()[0], hi = lo;
    for (int64_t i = 1; i < h.values.size(); ++i) {
        lo = std::min(lo, h.values.data()[i]);
        hi = std::max(hi, h.values.data()[i]);
    }
    if (hi == lo) {
        // constant positive map normalizes to all ones
        std::fill(h.values.data(), h.values.data() + h.values.size(), 1.0);
        return h;
    }
    for (int64_t i = 0; i < h.values.size(); ++i) h.values.data()[i] = (h.values.data()[i] - lo) / (hi - lo);
    return h;
}

Heatmap run_variant(Backbone& model, const ImageTensor& img, int target_class, const LayerProbe& probe,
                    Heatmap::Variant variant) {
    if (target_class < 0 || target_class >= model.num_classes())
        throw ConfigError("target class " + std::to_string(target_class) + " out of range");
    const LayerInfo* info = nullptr;
    for (const LayerInfo& l : model.layer_registry())
        if (l.name == probe.layer_name) info = &l;
    if (!info) throw ProbeError("layer '" + probe.layer_name + "' is not in the model registry");
    if (!info->spatial) throw ProbeError("layer '" + probe.layer_name + "' has no spatial grid");

    const int64_t side = model.config().image_side;
    const Tensor& plane = img.data;
    if (plane.rank() != 3 || plane.dim(0) != 3 || plane.dim(1) != side || plane.dim(2) != side)
        throw ShapeError("explain expects a [3," + std::to_string(side) + "," + std::to_string(side) + "] image, got " +
                         plane.shape_str());

    Tape t;
    Tensor batch({1, 3, side, side});
    std::copy(plane.data(), plane.data() + plane.size(), batch.data());
    // the input leaf carries requires_grad so captures keep gradients even
    // under a fully frozen parameter set
    Value x = t.leaf(std::move(batch), true);
    Forward fw = model.forward(t, x, false, 0);

    const SpatialCapture* cap = nullptr;
    for (const SpatialCapture& c : fw.captures)
        if (c.name == probe.layer_name) cap = &c;
    if (!cap) throw ProbeError("layer '" + probe.layer_name + "' produced no capture");

    Tensor seed({1, static_cast<int64_t>(model.num_classes())});
    seed.data()[target_class] = 1.0;
    t.backward(fw.logits, seed);

    Tensor acts, grads;
    extract_capture(t, *cap, acts, grads);
    Tensor raw = variant == Heatmap::Variant::gradcam ? gradcam_raw(acts, grads) : gradcampp_raw(acts, grads);
    return finish(std::move(raw), side, probe.layer_name, target_class, variant);
}

}  // namespace

const char* probe_depth_name(LayerProbe::Depth d) {
    switch (d) {
        case LayerProbe::Depth::early: return "early";
        case LayerProbe::Depth::mid: return "mid";
        case LayerProbe::Depth::deep: return "deep";
    }
    return "deep";
}

std::array<LayerProbe, 3> resolve_probes(const Backbone& model) {
    std::vector<const LayerInfo*> spatial;
    for (const LayerInfo& l : model.layer_registry())
        if (l.spatial) spatial.push_back(&l);
    if (spatial.size() < 3) {
        std::string have;
        for (const LayerInfo& l : model.layer_registry()) {
            if (!have.empty()) have += ", ";
            have += l.name + (l.spatial ? "" : " (non-spatial)");
        }
        throw ProbeError("need at least 3 spatial layers to probe, registry has: " + have);
    }
    auto named = [&](const char* want) -> const LayerInfo* {
        for (const LayerInfo* l : spatial)
            if (l->name == want) return l;
        return nullptr;
    };
    const LayerInfo* early = named("stem.conv1");
    const LayerInfo* mid = named("stages.1.blocks.1.conv.conv2_kxk");
    const LayerInfo* deep = named("stages.3.blocks.1.conv.conv2_kxk");
    if (!early) early = spatial.front();
    if (!mid) mid = spatial[spatial.size() / 2];
    if (!deep) deep = spatial.back();
    return {LayerProbe{LayerProbe::Depth::early, early->name}, LayerProbe{LayerProbe::Depth::mid, mid->name},
            LayerProbe{LayerProbe::Depth::deep, deep->name}};
}

Heatmap gradcam(Backbone& model, const ImageTensor& img, int target_class, const LayerProbe& probe) {
    return run_variant(model, img, target_class, probe, Heatmap::Variant::gradcam);
}

Heatmap gradcampp(Backbone& model, const ImageTensor& img, int target_class, const LayerProbe& probe) {
    return run_variant(model, img, target_class, probe, Heatmap::Variant::gradcampp);
}

Tensor gradcam_raw(const Tensor& acts, const Tensor& grads) {
    const int64_t C = acts.dim(0), h = acts.dim(1), w = acts.dim(2), hw = h * w;
    Tensor map({h, w});
    for (int64_t k = 0; k < C; ++k) {
        const double* g = grads.data() + k * hw;
        double wk = 0.0;
        for (int64_t i = 0; i < hw; ++i) wk += g[i];
        wk /= static_cast<double>(hw);
        const double* a = acts.data() + k * hw;
        for (int64_t i = 0; i < hw; ++i) map.data()[i] += wk * a[i];
    }
    for (int64_t i = 0; i < hw; ++i) map.data()[i] = std::max(0.0, map.data()[i]);
    return map;
}

Tensor gradcampp_raw(const Tensor& acts, const Tensor& grads) {
    const int64_t C = acts.dim(0), h = acts.dim(1), w = acts.dim(2), hw = h * w;
    Tensor map({h, w});
    for (int64_t k = 0; k < C; ++k) {
        const double* a = acts.data() + k * hw;
        const double* g = grads.data() + k * hw;
        double asum = 0.0;
        for (int64_t i = 0; i < hw; ++i) asum += a[i];
        double wk = 0.0;
        for (int64_t i = 0; i < hw; ++i) {
            const double g2 = g[i] * g[i];
            const double denom = 2.0 * g2 + asum * g2 * g[i];
            const double alpha = denom == 0.0 ? 0.0 : g2 / denom;
            wk += alpha * std::max(0.0, g[i]);
        }
        for (int64_t i = 0; i < hw; ++i) map.data()[i] += wk * a[i];
    }
    for (int64_t i = 0; i < hw; ++i) map.data()[i] = std::max(0.0, map.data()[i]);
    return map;
}

ImageTensor overlay(const Heatmap& h, const ImageTensor& img, double alpha) {
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("overlay alpha must lie in [0,1]");
    if (img.range != ImageTensor::Range::unit) throw OrderingError("overlay needs a unit-range image");
    const int64_t H = img.height(), W = img.width();
    if (h.values.dim(0) != H || h.values.dim(1) != W)
        throw ShapeError("heatmap " + h.values.shape_str() + " does not match image " + img.data.shape_str());
    ImageTensor out;
    out.data = Tensor({3, H, W});
    out.range = ImageTensor::Range::unit;
    for (int64_t i = 0; i < H * W; ++i) {
        const double t = h.values.data()[i];
        double r, g, b;
        if (t <= 0.5) {
            r = 0.0;
            g = 2.0 * t;
            b = 1.0 - 2.0 * t;
        } else {
            r = 2.0 * t - 1.0;
            g = 2.0 - 2.0 * t;
            b = 0.0;
        }
        const double cmap[3] = {r, g, b};
        for (int c = 0; c < 3; ++c)
            out.data.data()[c * H * W + i] = (1.0 - alpha) * img.data.data()[c * H * W + i] + alpha * cmap[c];
    }
    return out;
}

double localization_score(const Heatmap& h, const TruthBox& box, double mass_fraction) {
    if (mass_fraction <= 0.0 || mass_fraction > 1.0) throw ConfigError("mass_fraction must lie in (0,1]");
    const int64_t H = h.values.dim(0), W = h.values.dim(1);
    if (box.x0 < 0 || box.y0 < 0 || box.x1 > W || box.y1 > H || box.x0 >= box.x1 || box.y0 >= box.y1)
        throw ConfigError("truth box outside heatmap bounds");
    if (h.degenerate) return 0.0;

    // tier = all cells sharing one value; partially consumed tiers contribute
    // proportionally, so ties cannot bias the score
    std::map<double, std::pair<double, double>, std::greater<double>> tiers;  // value -> (mass, mass inside box)
    double total = 0.0;
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) {
            const double v = h.values.data()[y * W + x];
            if (v <= 0.0) continue;
            auto& t = tiers[v];
            t.first += v;
            if (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1) t.second += v;
            total += v;
        }
    if (total == 0.0) return 0.0;
    const double target = mass_fraction * total;
    double taken = 0.0, inside = 0.0;
    for (const auto& [value, t] : tiers) {
        if (taken + t.first <= target) {
            taken += t.first;
            inside += t.second;
            if (taken == target) break;
        } else {
            const double scale = (target - taken) / t.first;
            inside += scale * t.second;
            taken = target;
            break;
        }
    }
    return inside / target;
}

std::filesystem::path write_heatmap_files(const std::filesystem::path& dir, const std::string& image_stem,
                                          const Heatmap& h, const ImageTensor& base_img, double alpha) {
    std::filesystem::create_directories(dir);
    const std::string base =
        "heatmap_" + image_stem + "_" + h.layer_name + "_" + std::to_string(h.target_class);
    const std::filesystem::path png_path = dir / (base + ".png");
    ImageTensor ov = overlay(h, base_img, alpha);
    write_png_rgb(png_path, ov.data.data(), ov.height(), ov.width());

    const std::filesystem::path txt_path = dir / (base + ".txt");
    std::ofstream out(txt_path);
    if (!out) throw IoError("cannot write " + txt_path.string());
    const int64_t H = h.values.dim(0), W = h.values.dim(1);
    out << H << " " << W << "\n";
    char buf[64];
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            std::snprintf(buf, sizeof buf, "%.17g", h.values.data()[y * W + x]);
            out << buf << (x + 1 == W ? "" : " ");
        }
        out << "\n";
    }
    return png_path;
}

Tensor read_heatmap_grid(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    int64_t H = 0, W = 0;
    if (!(in >> H >> W) || H <= 0 || W <= 0) throw SchemaError("bad heatmap grid header in " + path.string());
    Tensor t({H, W});
    for (int64_t i = 0; i < H * W; ++i)
        if (!(in >> t.data()[i])) throw SchemaError("truncated heatmap grid in " + path.string());
    return t;
}

}  // namespace stroke
