#include "stroke/manifest.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "stroke/errors.hpp"
#include "stroke/rng.hpp"

namespace stroke {

namespace fs = std::filesystem;

const char* class_dir_name(int label) {
    switch (label) {
        case 0: return "normal";
        case 1: return "hemorrhagic";
        case 2: return "ischemic";
        default: throw Error("label out of range: " + std::to_string(label));
    }
}

int label_from_dir_name(const std::string& name) {
    for (int c = 0; c < kNumClasses; ++c)
        if (name == class_dir_name(c)) return c;
    return -1;
}

void Manifest::retally() {
    class_counts.fill(0);
    for (const ImageRecord& r : records) class_counts[static_cast<size_t>(r.label)]++;
}

namespace {

bool has_png_signature(const fs::path& p) {
    static const unsigned char sig[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    std::ifstream f(p, std::ios::binary);
    if (!f) return false;
    unsigned char buf[8];
    f.read(reinterpret_cast<char*>(buf), 8);
    return f.gcount() == 8 && std::equal(buf, buf + 8, sig);
}

}  // namespace

Manifest scan_dataset(const fs::path& root) {
    Manifest m;
    m.root = root;
    for (int c = 0; c < kNumClasses; ++c) {
        const fs::path dir = root / class_dir_name(c);
        if (!fs::is_directory(dir))
            throw CorpusLayoutError("corpus root " + root.string() + " is missing the '" +
                                    std::string(class_dir_name(c)) + "' class directory");
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file()) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        int64_t kept = 0;
        for (const fs::path& p : files) {
            if (!has_png_signature(p)) {
                m.warnings.push_back("skipped non-PNG file: " + p.string());
                continue;
            }
            m.records.push_back(ImageRecord{p, c, ImageRecord::Origin::real, ImageRecord::Split::unassigned});
            ++kept;
        }
        if (kept == 0)
            throw EmptyClassError("class '" + std::string(class_dir_name(c)) + "' has no images under " +
                                  dir.string());
    }
    m.retally();
    return m;
}

std::pair<Manifest, Manifest> stratified_split(const Manifest& m, double train_fraction, uint64_t seed) {
    if (!(train_fraction > 0.0 && train_fraction < 1.0))
        throw ConfigError("train_fraction must lie in (0,1)");
    for (int c = 0; c < kNumClasses; ++c)
        if (m.class_counts[static_cast<size_t>(c)] < 2)
            throw StratificationError("class '" + std::string(class_dir_name(c)) +
                                      "' has fewer than 2 records; cannot stratify");
    Manifest train, test;
    train.root = test.root = m.root;
    for (int c = 0; c < kNumClasses; ++c) {
        std::vector<int64_t> idx;
        for (int64_t i = 0; i < m.total(); ++i)
            if (m.records[static_cast<size_t>(i)].label == c) idx.push_back(i);
        Rng rng(derive_seed(derive_seed(seed, "stratified-split"), static_cast<uint64_t>(c)));
        rng.shuffle(idx);
        const double n_c = static_cast<double>(idx.size());
        // round half away from zero, the convention std::round implements
        const int64_t test_c = static_cast<int64_t>(std::round((1.0 - train_fraction) * n_c));
        for (size_t i = 0; i < idx.size(); ++i) {
            ImageRecord r = m.records[static_cast<size_t>(idx[i])];
            if (static_cast<int64_t>(i) < test_c) {
                r.split = ImageRecord::Split::test;
                test.records.push_back(std::move(r));
            } else {
                r.split = ImageRecord::Split::train;
                train.records.push_back(std::move(r));
            }
        }
    }
    auto by_path = [](const ImageRecord& a, const ImageRecord& b) { return a.path < b.path; };
    std::sort(train.records.begin(), train.records.end(), by_path);
    std::sort(test.records.begin(), test.records.end(), by_path);
    train.retally();
    test.retally();
    return {std::move(train), std::move(test)};
}

ClassWeights class_weights(const Manifest& m) {
    ClassWeights cw;
    const double N = static_cast<double>(m.total());
    for (int c = 0; c < kNumClasses; ++c) {
        const int64_t n_c = m.class_counts[static_cast<size_t>(c)];
        if (n_c == 0)
            throw EmptyClassError("class '" + std::string(class_dir_name(c)) + "' has zero records");
        cw.w[static_cast<size_t>(c)] = N / (static_cast<double>(kNumClasses) * static_cast<double>(n_c));
    }
    return cw;
}

namespace {

const char* origin_str(ImageRecord::Origin o) { return o == ImageRecord::Origin::real ? "real" : "synthetic"; }
const char* split_str(ImageRecord::Split s) {
    switch (s) {
        case ImageRecord::Split::train: return "train";
        case ImageRecord::Split::test: return "test";
        default: return "unassigned";
    }
}

ImageRecord::Origin parse_origin(const std::string& s) {
    if (s == "real") return ImageRecord::Origin::real;
    if (s == "synthetic") return ImageRecord::Origin::synthetic;
    throw Error("manifest: unknown origin '" + s + "'");
}

ImageRecord::Split parse_split(const std::string& s) {
    if (s == "train") return ImageRecord::Split::train;
    if (s == "test") return ImageRecord::Split::test;
    if (s == "unassigned") return ImageRecord::Split::unassigned;
    throw Error("manifest: unknown split '" + s + "'");
}

}  // namespace

void write_manifest_csv(const Manifest& m, const fs::path& path) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write manifest: " + path.string());
    f << "path,label,origin,split\n";
    for (const ImageRecord& r : m.records)
        f << r.path.string() << ',' << r.label << ',' << origin_str(r.origin) << ',' << split_str(r.split) << '\n';
    if (!f) throw IoError("manifest write failed: " + path.string());
}

Manifest read_manifest_csv(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot read manifest: " + path.string());
    Manifest m;
    std::string line;
    if (!std::getline(f, line) || line != "path,label,origin,split")
        throw Error("manifest " + path.string() + " has an unexpected header");
    int64_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        // fields from the right, so a path may contain commas
        const size_t c3 = line.rfind(',');
        const size_t c2 = c3 == std::string::npos ? std::string::npos : line.rfind(',', c3 - 1);
        const size_t c1 = c2 == std::string::npos ? std::string::npos : line.rfind(',', c2 - 1);
        if (c1 == std::string::npos)
            throw Error("manifest " + path.string() + " line " + std::to_string(lineno) + ": expected 4 fields");
        ImageRecord r;
        r.path = line.substr(0, c1);
        const std::string label_s = line.substr(c1 + 1, c2 - c1 - 1);
        r.label = std::stoi(label_s);
        if (r.label < 0 || r.label >= kNumClasses)
            throw Error("manifest " + path.string() + " line " + std::to_string(lineno) + ": label out of range");
        r.origin = parse_origin(line.substr(c2 + 1, c3 - c2 - 1));
        r.split = parse_split(line.substr(c3 + 1));
        if (!fs::exists(r.path))
            throw IoError("manifest " + path.string() + " references a missing file: " + r.path.string());
        m.records.push_back(std::move(r));
    }
    m.retally();
    return m;
}

}  // namespace stroke
