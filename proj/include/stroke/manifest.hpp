#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace stroke {

inline constexpr int kNumClasses = 3;

/// Fixed label encoding: 0 = No Stroke, 1 = Hemorrhagic, 2 = Ischemic.
const char* class_dir_name(int label);
int label_from_dir_name(const std::string& name);  // -1 if unknown

struct ImageRecord {
    std::filesystem::path path;
    int label = 0;
    enum class Origin { real, synthetic } origin = Origin::real;
    enum class Split { train, test, unassigned } split = Split::unassigned;
};

struct Manifest {
    std::vector<ImageRecord> records;
    std::array<int64_t, kNumClasses> class_counts{};
    std::filesystem::path root;
    std::vector<std::string> warnings;  // skipped files, one line each

    int64_t total() const { return static_cast<int64_t>(records.size()); }
    void retally();
};

struct ClassWeights {
    std::array<double, kNumClasses> w{};
};

/// Walks `<root>/{normal,hemorrhagic,ischemic}`; files that are not decodable
/// PNGs are skipped with a warning record. Missing class directory or an
/// empty class is fatal.
Manifest scan_dataset(const std::filesystem::path& root);

/// Per class: test count = round-half-away-from-zero((1-train_fraction) * n_c),
/// membership chosen by a seeded shuffle within the class. Outputs are
/// disjoint and jointly cover the input.
std::pair<Manifest, Manifest> stratified_split(const Manifest& m, double train_fraction, uint64_t seed);

/// w_c = N / (3 * n_c); keeps sum(w_c * n_c) = N.
ClassWeights class_weights(const Manifest& m);

void write_manifest_csv(const Manifest& m, const std::filesystem::path& path);
Manifest read_manifest_csv(const std::filesystem::path& path);

}  // namespace stroke
