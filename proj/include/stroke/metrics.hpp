#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stroke/manifest.hpp"

namespace stroke {

struct ConfusionMatrix {
    // rows = true class, cols = predicted class
    std::array<std::array<int64_t, kNumClasses>, kNumClasses> counts{};

    int64_t total() const;
    int64_t trace() const;
};

struct ClassMetrics {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

struct EvalReport {
    ConfusionMatrix cm;
    double accuracy = 0.0;
    std::array<ClassMetrics, kNumClasses> per_class{};
    ClassMetrics macro;     // unweighted class mean (primary aggregate)
    ClassMetrics weighted;  // support-weighted mean, reported alongside
    double loss = 0.0;
    std::string model_tag;
    std::string augmentation_tag;
};

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels);

/// One-vs-rest precision/recall/F1 per class with the 0/0 -> 0 convention,
/// plus macro and support-weighted aggregates. Tags and loss pass through.
EvalReport metrics_from_cm(const ConfusionMatrix& cm);

enum class ReportFormat { table, json };

/// table: one markdown grid row per report with Accuracy/F1/Recall/Precision
/// at 4 decimals and Loss at 2. json: full per-class breakdown.
std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format);

nlohmann::json report_to_json(const EvalReport& r);
EvalReport report_from_json(const nlohmann::json& j);

void write_metrics_json(const EvalReport& r, const std::filesystem::path& path);
EvalReport read_metrics_json(const std::filesystem::path& path);
void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path);

}  // namespace stroke
