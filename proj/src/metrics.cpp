#include "stroke/metrics.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "stroke/errors.hpp"

namespace stroke {

namespace {

double safe_div(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

std::string fmt(double v, int places) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", places, v);
    return buf;
}

}  // namespace

int64_t ConfusionMatrix::total() const {
    int64_t s = 0;
    for (const auto& row : counts)
        for (int64_t v : row) s += v;
    return s;
}

int64_t ConfusionMatrix::trace() const {
    int64_t s = 0;
    for (int c = 0; c < kNumClasses; ++c) s += counts[c][c];
    return s;
}

ConfusionMatrix confusion_matrix(const std::vector<int>& preds, const std::vector<int>& labels) {
    if (preds.size() != labels.size())
        throw ConfigError("confusion_matrix: " + std::to_string(preds.size()) + " predictions vs " +
                          std::to_string(labels.size()) + " labels");
    if (preds.empty()) throw ConfigError("confusion_matrix: no samples");
    ConfusionMatrix cm;
    for (size_t i = 0; i < preds.size(); ++i) {
        const int t = labels[i], p = preds[i];
        if (t < 0 || t >= kNumClasses || p < 0 || p >= kNumClasses)
            throw ConfigError("confusion_matrix: class out of range at sample " + std::to_string(i));
        ++cm.counts[static_cast<size_t>(t)][static_cast<size_t>(p)];
    }
    return cm;
}

EvalReport metrics_from_cm(const ConfusionMatrix& cm) {
    const int64_t total = cm.total();
    if (total <= 0) throw ConfigError("metrics_from_cm: empty confusion matrix");
    for (const auto& row : cm.counts)
        for (int64_t v : row)
            if (v < 0) throw ConfigError("metrics_from_cm: negative count");

    EvalReport r;
    r.cm = cm;
    r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
    double support_sum = 0.0;
    for (int c = 0; c < kNumClasses; ++c) {
        const auto sc = static_cast<size_t>(c);
        double tp = static_cast<double>(cm.counts[sc][sc]);
        double fp = 0.0, fn = 0.0;
        for (int o = 0; o < kNumClasses; ++o) {
            if (o == c) continue;
            fp += static_cast<double>(cm.counts[static_cast<size_t>(o)][sc]);
            fn += static_cast<double>(cm.counts[sc][static_cast<size_t>(o)]);
        }
        ClassMetrics& m = r.per_class[sc];
        m.precision = safe_div(tp, tp + fp);
        m.recall = safe_div(tp, tp + fn);
        m.f1 = safe_div(2.0 * m.precision * m.recall, m.precision + m.recall);

        r.macro.precision += m.precision / kNumClasses;
        r.macro.recall += m.recall / kNumClasses;
        r.macro.f1 += m.f1 / kNumClasses;

        const double support = tp + fn;
        support_sum += support;
        r.weighted.precision += support * m.precision;
        r.weighted.recall += support * m.recall;
        r.weighted.f1 += support * m.f1;
    }
    r.weighted.precision = safe_div(r.weighted.precision, support_sum);
    r.weighted.recall = safe_div(r.weighted.recall, support_sum);
    r.weighted.f1 = safe_div(r.weighted.f1, support_sum);
    return r;
}

std::string render_report(const std::vector<EvalReport>& reports, ReportFormat format) {
    if (reports.empty()) throw ConfigError("render_report: no reports");
    if (format == ReportFormat::json) {
        nlohmann::json arr = nlohmann::json::array();
        for (const EvalReport& r : reports) arr.push_back(report_to_json(r));
        return arr.dump(2) + "\n";
    }
    std::ostringstream out;
    out << "| Model | Augmentation | Accuracy | Loss Value | F1-score | Recall | Precision |\n";
    out << "|---|---|---|---|---|---|---|\n";
    for (const EvalReport& r : reports) {
        out << "| " << r.model_tag << " | " << r.augmentation_tag << " | " << fmt(r.accuracy, 4) << " | "
            << fmt(r.loss, 2) << " | " << fmt(r.macro.f1, 4) << " | " << fmt(r.macro.recall, 4) << " | "
            << fmt(r.macro.precision, 4) << " |\n";
    }
    return out.str();
}

namespace {

nlohmann::json class_metrics_json(const ClassMetrics& m) {
    return {{"precision", m.precision}, {"recall", m.recall}, {"f1", m.f1}};
}

ClassMetrics class_metrics_from(const nlohmann::json& j) {
    return {j.at("precision").get<double>(), j.at("recall").get<double>(), j.at("f1").get<double>()};
}

}  // namespace

nlohmann::json report_to_json(const EvalReport& r) {
    nlohmann::json cm = nlohmann::json::array();
    for (const auto& row : r.cm.counts) cm.push_back(row);
    nlohmann::json per_class;
    for (int c = 0; c < kNumClasses; ++c)
        per_class[class_dir_name(c)] = class_metrics_json(r.per_class[static_cast<size_t>(c)]);
    return {{"model", r.model_tag},
            {"augmentation", r.augmentation_tag},
            {"accuracy", r.accuracy},
            {"loss", r.loss},
            {"confusion_matrix", cm},
            {"per_class", per_class},
            {"macro", class_metrics_json(r.macro)},
            {"weighted", class_metrics_json(r.weighted)}};
}

EvalReport report_from_json(const nlohmann::json& j) {
    EvalReport r;
    try {
        r.model_tag = j.at("model").get<std::string>();
        r.augmentation_tag = j.at("augmentation").get<std::string>();
        r.accuracy = j.at("accuracy").get<double>();
        r.loss = j.at("loss").get<double>();
        const auto& cm = j.at("confusion_matrix");
        for (int t = 0; t < kNumClasses; ++t)
            for (int p = 0; p < kNumClasses; ++p)
                r.cm.counts[static_cast<size_t>(t)][static_cast<size_t>(p)] =
                    cm.at(static_cast<size_t>(t)).at(static_cast<size_t>(p)).get<int64_t>();
        for (int c = 0; c < kNumClasses; ++c)
            r.per_class[static_cast<size_t>(c)] = class_metrics_from(j.at("per_class").at(class_dir_name(c)));
        r.macro = class_metrics_from(j.at("macro"));
        r.weighted = class_metrics_from(j.at("weighted"));
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("bad metrics json: ") + e.what());
    }
    return r;
}

void write_metrics_json(const EvalReport& r, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << report_to_json(r).dump(2) << "\n";
}

EvalReport read_metrics_json(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError("bad metrics json in " + path.string() + ": " + e.what());
    }
    return report_from_json(j);
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << "true\\pred";
    for (int p = 0; p < kNumClasses; ++p) out << "," << class_dir_name(p);
    out << "\n";
    for (int t = 0; t < kNumClasses; ++t) {
        out << class_dir_name(t);
        for (int p = 0; p < kNumClasses; ++p) out << "," << cm.counts[static_cast<size_t>(t)][static_cast<size_t>(p)];
        out << "\n";
    }
}

}  // namespace stroke
