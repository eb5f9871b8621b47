#include "stroke/toy_corpus.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <vector>

#include "json.hpp"
#include "stroke/errors.hpp"
#include "stroke/image_io.hpp"
#include "stroke/rng.hpp"

namespace stroke {

namespace fs = std::filesystem;

namespace {

struct Ellipse {
    double cx, cy, rx, ry;
};

// Base brain shared by every class at the same seed-index.
std::vector<double> render_base(int64_t side, Rng& rng, Ellipse& ell) {
    const double s = static_cast<double>(side);
    ell.cx = (s - 1.0) / 2.0;
    ell.cy = (s - 1.0) / 2.0;
    ell.rx = s * rng.uniform(0.38, 0.44);
    ell.ry = s * rng.uniform(0.32, 0.38);
    const double base = rng.uniform(0.45, 0.60);
    std::vector<double> img(static_cast<size_t>(side * side), 0.0);
    for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x) {
            const double nx = (static_cast<double>(x) - ell.cx) / ell.rx;
            const double ny = (static_cast<double>(y) - ell.cy) / ell.ry;
            const double nr = nx * nx + ny * ny;
            const double noise = rng.uniform(-0.02, 0.02);
            if (nr <= 1.0) img[static_cast<size_t>(y * side + x)] = std::clamp(base * (1.0 - 0.3 * nr) + noise, 0.0, 1.0);
        }
    return img;
}

TruthBox apply_blob(std::vector<double>& img, int64_t side, const Ellipse& ell, int label, Rng& rng) {
    const double r = static_cast<double>(side) * rng.uniform(0.09, 0.14);
    const double ax = std::max(1.0, ell.rx - r - 3.0);
    const double ay = std::max(1.0, ell.ry - r - 3.0);
    const double theta = rng.uniform(0.0, 6.283185307179586);
    const double t = std::sqrt(rng.uniform());
    const double px = ell.cx + t * std::cos(theta) * ax;
    const double py = ell.cy + t * std::sin(theta) * ay;
    for (int64_t y = 0; y < side; ++y)
        for (int64_t x = 0; x < side; ++x) {
            const double dx = static_cast<double>(x) - px;
            const double dy = static_cast<double>(y) - py;
            const double d2 = (dx * dx + dy * dy) / (r * r);
            if (d2 > 1.0) continue;
            const double f = 1.0 - d2;
            double& v = img[static_cast<size_t>(y * side + x)];
            if (label == 1)
                v = std::clamp(v + (0.95 - v) * f, 0.0, 1.0);  // hyperdense: bright
            else
                v = std::clamp(v * (1.0 - 0.85 * f), 0.0, 1.0);  // hypodense: dark
        }
    TruthBox box;
    box.label = label;
    box.x0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(px - r)));
    box.y0 = std::max<int64_t>(0, static_cast<int64_t>(std::floor(py - r)));
    box.x1 = std::min<int64_t>(side, static_cast<int64_t>(std::floor(px + r)) + 1);
    box.y1 = std::min<int64_t>(side, static_cast<int64_t>(std::floor(py + r)) + 1);
    return box;
}

}  // namespace

Manifest generate_toy_corpus(const fs::path& out_root, const std::array<int64_t, kNumClasses>& n_per_class,
                             int64_t image_side, uint64_t seed) {
    if (image_side < 32) throw ConfigError("toy corpus image_side must be >= 32");
    const fs::path root = fs::absolute(out_root);
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw IoError("cannot create toy corpus root " + root.string() + ": " + ec.message());

    Manifest m;
    m.root = root;
    nlohmann::json boxes = nlohmann::json::object();
    for (int c = 0; c < kNumClasses; ++c) {
        const fs::path dir = root / class_dir_name(c);
        fs::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        for (int64_t i = 0; i < n_per_class[static_cast<size_t>(c)]; ++i) {
            Rng base_rng(derive_seed(derive_seed(seed, "toy-base"), static_cast<uint64_t>(i)));
            Ellipse ell{};
            std::vector<double> img = render_base(image_side, base_rng, ell);
            char name[32];
            std::snprintf(name, sizeof(name), "toy_%04lld.png", static_cast<long long>(i));
            const std::string rel = std::string(class_dir_name(c)) + "/" + name;
            if (c != 0) {
                Rng blob_rng(derive_seed(derive_seed(seed, "toy-blob"), static_cast<uint64_t>(c),
                                         static_cast<uint64_t>(i)));
                TruthBox box = apply_blob(img, image_side, ell, c, blob_rng);
                boxes[rel] = {{"label", box.label}, {"x0", box.x0}, {"y0", box.y0}, {"x1", box.x1}, {"y1", box.y1}};
            }
            const fs::path file = dir / name;
            write_png_gray(file, img.data(), image_side, image_side);
            m.records.push_back(ImageRecord{file, c, ImageRecord::Origin::real, ImageRecord::Split::unassigned});
        }
    }
    m.retally();
    for (int c = 0; c < kNumClasses; ++c)
        if (m.class_counts[static_cast<size_t>(c)] == 0)
            throw EmptyClassError("toy corpus requested zero images for class " + std::string(class_dir_name(c)));

    nlohmann::json truth;
    truth["image_side"] = image_side;
    truth["boxes"] = std::move(boxes);
    std::ofstream f(root / "toy_truth.json", std::ios::trunc);
    if (!f) throw IoError("cannot write toy_truth.json under " + root.string());
    f << truth.dump(2) << '\n';
    return m;
}

std::map<std::string, TruthBox> read_toy_truth(const fs::path& json_path) {
    std::ifstream f(json_path);
    if (!f) throw IoError("cannot read " + json_path.string());
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw Error("toy_truth.json parse failure: " + std::string(e.what()));
    }
    std::map<std::string, TruthBox> out;
    for (const auto& [key, val] : j.at("boxes").items()) {
        TruthBox b;
        b.label = val.at("label").get<int>();
        b.x0 = val.at("x0").get<int64_t>();
        b.y0 = val.at("y0").get<int64_t>();
        b.x1 = val.at("x1").get<int64_t>();
        b.y1 = val.at("y1").get<int64_t>();
        out[key] = b;
    }
    return out;
}

}  // namespace stroke
