#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "stroke/errors.hpp"
#include "stroke/metrics.hpp"
#include "stroke/rng.hpp"
#include "test_util.hpp"

using namespace stroke;

namespace {

struct BruteMetrics {
    double acc;
    std::array<double, kNumClasses> prec, rec, f1;
    double macro_f1;
};

// Independent tallies straight from the pair list, no confusion matrix.
BruteMetrics brute_force(const std::vector<int>& preds, const std::vector<int>& labels) {
    BruteMetrics b{};
    int64_t correct = 0;
    for (size_t i = 0; i < preds.size(); ++i) correct += preds[i] == labels[i];
    b.acc = static_cast<double>(correct) / static_cast<double>(preds.size());
    double mf = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        int64_t tp = 0, fp = 0, fn = 0;
        for (size_t i = 0; i < preds.size(); ++i) {
            if (preds[i] == c && labels[i] == c) ++tp;
            if (preds[i] == c && labels[i] != c) ++fp;
            if (preds[i] != c && labels[i] == c) ++fn;
        }
        const double p = (tp + fp) ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
        const double r = (tp + fn) ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
        const double f = (p + r > 0) ? 2 * p * r / (p + r) : 0.0;
        b.prec[static_cast<size_t>(c)] = p;
        b.rec[static_cast<size_t>(c)] = r;
        b.f1[static_cast<size_t>(c)] = f;
        mf += f;
    }
    b.macro_f1 = mf / kNumClasses;
    return b;
}

}  // namespace

TEST_SUITE("metrics") {

TEST_CASE("published six-sample example") {
    const std::vector<int> labels{0, 0, 1, 1, 2, 2};
    const std::vector<int> preds{0, 1, 1, 1, 2, 0};
    ConfusionMatrix cm = confusion_matrix(preds, labels);
    CHECK(cm.counts[0][0] == 1);
    CHECK(cm.counts[0][1] == 1);
    CHECK(cm.counts[0][2] == 0);
    CHECK(cm.counts[1][0] == 0);
    CHECK(cm.counts[1][1] == 2);
    CHECK(cm.counts[1][2] == 0);
    CHECK(cm.counts[2][0] == 1);
    CHECK(cm.counts[2][1] == 0);
    CHECK(cm.counts[2][2] == 1);
    CHECK(cm.total() == 6);
    CHECK(cm.trace() == 4);

    EvalReport r = metrics_from_cm(cm);
    CHECK(r.accuracy == doctest::Approx(4.0 / 6.0).epsilon(1e-12));
    CHECK(r.per_class[1].precision == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(r.per_class[1].recall == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.per_class[1].f1 == doctest::Approx(0.8).epsilon(1e-12));
    CHECK(r.macro.f1 == doctest::Approx(0.655556).epsilon(1e-4));
}

TEST_CASE("confusion matrix rejects mismatched or out-of-range input") {
    CHECK_THROWS_AS(confusion_matrix({0, 1}, {0}), ConfigError);
    CHECK_THROWS_AS(confusion_matrix({0, 3}, {0, 1}), ConfigError);
    CHECK_THROWS_AS(confusion_matrix({0, -1}, {0, 1}), ConfigError);
    CHECK_THROWS_AS(confusion_matrix({}, {}), ConfigError);
}

TEST_CASE("brute-force oracle over random prediction sets") {
    Rng rng(17);
    for (int it = 0; it < 200; ++it) {
        const int64_t n = 1 + rng.uniform_int(50);
        std::vector<int> preds, labels;
        for (int64_t i = 0; i < n; ++i) {
            preds.push_back(static_cast<int>(rng.uniform_int(3)));
            labels.push_back(static_cast<int>(rng.uniform_int(3)));
        }
        EvalReport r = metrics_from_cm(confusion_matrix(preds, labels));
        BruteMetrics b = brute_force(preds, labels);
        CHECK(std::abs(r.accuracy - b.acc) <= 1e-12);
        double macro_f = 0;
        for (int c = 0; c < kNumClasses; ++c) {
            CHECK(std::abs(r.per_class[static_cast<size_t>(c)].precision - b.prec[static_cast<size_t>(c)]) <= 1e-12);
            CHECK(std::abs(r.per_class[static_cast<size_t>(c)].recall - b.rec[static_cast<size_t>(c)]) <= 1e-12);
            CHECK(std::abs(r.per_class[static_cast<size_t>(c)].f1 - b.f1[static_cast<size_t>(c)]) <= 1e-12);
            macro_f += r.per_class[static_cast<size_t>(c)].f1;
        }
        CHECK(std::abs(r.macro.f1 - macro_f / 3.0) <= 1e-12);
        CHECK(std::abs(r.macro.f1 - b.macro_f1) <= 1e-12);

        // micro-averaged precision and recall collapse to accuracy
        CHECK(std::abs(static_cast<double>(r.cm.trace()) / static_cast<double>(r.cm.total()) - r.accuracy) <= 1e-15);

        // every reported quantity stays in [0,1]
        for (int c = 0; c < kNumClasses; ++c) {
            const auto& pc = r.per_class[static_cast<size_t>(c)];
            for (double v : {pc.precision, pc.recall, pc.f1}) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
}

TEST_CASE("metrics are invariant to sample order") {
    Rng rng(23);
    std::vector<int> preds, labels;
    for (int i = 0; i < 40; ++i) {
        preds.push_back(static_cast<int>(rng.uniform_int(3)));
        labels.push_back(static_cast<int>(rng.uniform_int(3)));
    }
    EvalReport a = metrics_from_cm(confusion_matrix(preds, labels));

    std::vector<int64_t> idx(preds.size());
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    std::vector<int> p2, l2;
    for (int64_t i : idx) {
        p2.push_back(preds[static_cast<size_t>(i)]);
        l2.push_back(labels[static_cast<size_t>(i)]);
    }
    EvalReport b = metrics_from_cm(confusion_matrix(p2, l2));
    CHECK(a.accuracy == b.accuracy);
    CHECK(a.macro.f1 == b.macro.f1);
    CHECK(a.weighted.f1 == b.weighted.f1);
    CHECK(a.cm.counts == b.cm.counts);
}

TEST_CASE("absent class follows the 0/0 -> 0 convention") {
    // nothing is ever class 2
    EvalReport r = metrics_from_cm(confusion_matrix({0, 1, 0}, {0, 1, 1}));
    CHECK(r.per_class[2].precision == 0.0);
    CHECK(r.per_class[2].recall == 0.0);
    CHECK(r.per_class[2].f1 == 0.0);
}

TEST_CASE("weighted aggregate weights by class support") {
    const std::vector<int> labels{0, 0, 0, 1, 2, 2};
    const std::vector<int> preds{0, 0, 1, 1, 2, 2};
    EvalReport r = metrics_from_cm(confusion_matrix(preds, labels));
    double want = 0;
    for (int c = 0; c < kNumClasses; ++c) {
        int64_t support = 0;
        for (int l : labels) support += l == c;
        want += r.per_class[static_cast<size_t>(c)].f1 * static_cast<double>(support);
    }
    want /= static_cast<double>(labels.size());
    CHECK(r.weighted.f1 == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("report table renders fixed-width decimals") {
    EvalReport r = metrics_from_cm(confusion_matrix({0, 0, 1, 1, 2, 2, 0, 1, 2, 0}, {0, 0, 1, 1, 2, 2, 0, 1, 2, 1}));
    r.model_tag = "vit";
    r.augmentation_tag = "classical";
    r.loss = 1.0 / 3.0;
    std::string table = render_report({r}, ReportFormat::table);
    CHECK(table.find("| vit |") != std::string::npos);
    CHECK(table.find("classical") != std::string::npos);
    CHECK(table.find("0.9000") != std::string::npos);  // accuracy to four decimals
    CHECK(table.find("0.33") != std::string::npos);    // loss to two decimals
    CHECK(table.find("Accuracy") != std::string::npos);

    EvalReport perfect = metrics_from_cm(confusion_matrix({0, 1, 2}, {0, 1, 2}));
    perfect.model_tag = "maxvit";
    std::string t2 = render_report({perfect}, ReportFormat::table);
    CHECK(t2.find("1.0000") != std::string::npos);

    std::string js = render_report({r}, ReportFormat::json);
    auto parsed = nlohmann::json::parse(js);
    REQUIRE(parsed.is_array());
    CHECK(parsed.size() == 1);
}

TEST_CASE("report json round-trips through files") {
    testutil::TempDir dir;
    EvalReport r = metrics_from_cm(confusion_matrix({0, 1, 1, 2}, {0, 1, 2, 2}));
    r.model_tag = "tnt";
    r.augmentation_tag = "classical_cgan";
    r.loss = 0.731;
    const auto path = dir / "metrics.json";
    write_metrics_json(r, path);
    EvalReport back = read_metrics_json(path);
    CHECK(back.accuracy == r.accuracy);
    CHECK(back.loss == r.loss);
    CHECK(back.model_tag == r.model_tag);
    CHECK(back.augmentation_tag == r.augmentation_tag);
    CHECK(back.macro.f1 == r.macro.f1);
    CHECK(back.weighted.precision == r.weighted.precision);
    CHECK(back.cm.counts == r.cm.counts);
    for (int c = 0; c < kNumClasses; ++c) {
        CHECK(back.per_class[static_cast<size_t>(c)].precision == r.per_class[static_cast<size_t>(c)].precision);
        CHECK(back.per_class[static_cast<size_t>(c)].recall == r.per_class[static_cast<size_t>(c)].recall);
        CHECK(back.per_class[static_cast<size_t>(c)].f1 == r.per_class[static_cast<size_t>(c)].f1);
    }
}

TEST_CASE("confusion csv lists one row per true class") {
    testutil::TempDir dir;
    ConfusionMatrix cm = confusion_matrix({0, 1, 2, 0}, {0, 1, 2, 2});
    const auto path = dir / "cm.csv";
    write_confusion_csv(cm, path);
    std::ifstream f(path);
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(f, line))
        if (!line.empty()) lines.push_back(line);
    REQUIRE(lines.size() == 4);  // header + 3 classes
    CHECK(lines[0].find("normal") != std::string::npos);
    CHECK(lines[3].rfind("ischemic", 0) == 0);
}

}  // TEST_SUITE
