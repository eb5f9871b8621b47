#include "stroke/pipeline.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numeric>

#include "stroke/archive.hpp"
#include "stroke/errors.hpp"
#include "stroke/rng.hpp"
#include "stroke/toy_corpus.hpp"

namespace fs = std::filesystem;

namespace stroke {

namespace {

const char* xai_variant_name(Heatmap::Variant v) {
    return v == Heatmap::Variant::gradcampp ? "gradcam++" : "gradcam";
}

Heatmap::Variant xai_variant_from_name(const std::string& s) {
    if (s == "gradcam") return Heatmap::Variant::gradcam;
    if (s == "gradcam++" || s == "gradcampp") return Heatmap::Variant::gradcampp;
    throw ConfigError("unknown xai variant '" + s + "' (expected gradcam or gradcam++)");
}

nlohmann::json policy_to_json(const AugmentPolicy& p) {
    return nlohmann::json{{"crop_scale_min", p.crop_scale_range.first},
                          {"crop_scale_max", p.crop_scale_range.second},
                          {"hflip_prob", p.hflip_prob},
                          {"rotation_max_degrees", p.rotation_max_degrees},
                          {"jitter_brightness", p.jitter_brightness},
                          {"jitter_contrast", p.jitter_contrast},
                          {"enabled", p.enabled}};
}

AugmentPolicy policy_from_json(const nlohmann::json& j) {
    AugmentPolicy p;
    p.crop_scale_range.first = j.value("crop_scale_min", p.crop_scale_range.first);
    p.crop_scale_range.second = j.value("crop_scale_max", p.crop_scale_range.second);
    p.hflip_prob = j.value("hflip_prob", p.hflip_prob);
    p.rotation_max_degrees = j.value("rotation_max_degrees", p.rotation_max_degrees);
    p.jitter_brightness = j.value("jitter_brightness", p.jitter_brightness);
    p.jitter_contrast = j.value("jitter_contrast", p.jitter_contrast);
    p.enabled = j.value("enabled", p.enabled);
    return p;
}

template <size_t N>
nlohmann::json array_to_json(const std::array<double, N>& a) {
    return nlohmann::json(std::vector<double>(a.begin(), a.end()));
}

template <size_t N>
void array_from_json(const nlohmann::json& j, std::array<double, N>& out) {
    if (!j.is_array() || j.size() != N) throw SchemaError("expected an array of " + std::to_string(N) + " numbers");
    for (size_t i = 0; i < N; ++i) out[i] = j.at(i).get<double>();
}

/// Missing prerequisite files are dependency errors that name both the file
/// and the subcommand that produces it.
void require_artifact(const fs::path& p, const std::string& producer) {
    if (!fs::exists(p)) throw DependencyError("missing " + p.string() + "; run `" + producer + "` first");
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("short write to " + path.string());
}

int argmax3(const double* v) {
    int best = 0;
    for (int c = 1; c < kNumClasses; ++c)
        if (v[c] > v[best]) best = c;
    return best;
}

}  // namespace

void ExperimentConfig::validate() const {
    if (!(data.train_fraction > 0.0 && data.train_fraction < 1.0))
        throw ConfigError("data.train_fraction must lie in (0,1)");
    if (data.toy.enabled) {
        for (int64_t n : data.toy.n_per_class)
            if (n <= 0) throw ConfigError("toy.n_per_class entries must be positive");
        if (data.toy.image_side < 8) throw ConfigError("toy.image_side must be at least 8");
    } else if (data.root.empty()) {
        throw ConfigError("data.root is empty and the toy corpus is disabled");
    }
    for (double s : normalize_std)
        if (s <= 0.0) throw ConfigError("normalize_std entries must be positive");
    if (output_dir.empty()) throw ConfigError("output_dir must be set");
    if (xai.sample_count <= 0) throw ConfigError("xai.sample_count must be positive");
    if (!(xai.alpha >= 0.0 && xai.alpha <= 1.0)) throw ConfigError("xai.alpha must lie in [0,1]");
    if (!(xai.mass_fraction > 0.0 && xai.mass_fraction <= 1.0))
        throw ConfigError("xai.mass_fraction must lie in (0,1]");
    gan.validate();
    train.validate();
    backbone.validate();
}

nlohmann::json experiment_to_json(const ExperimentConfig& cfg) {
    return nlohmann::json{
        {"data",
         {{"root", cfg.data.root.string()},
          {"train_fraction", cfg.data.train_fraction},
          {"toy",
           {{"enabled", cfg.data.toy.enabled},
            {"n_per_class",
             std::vector<int64_t>(cfg.data.toy.n_per_class.begin(), cfg.data.toy.n_per_class.end())},
            {"image_side", cfg.data.toy.image_side}}}}},
        {"preprocess",
         {{"augment", policy_to_json(cfg.augment)},
          {"normalize_mean", array_to_json(cfg.normalize_mean)},
          {"normalize_std", array_to_json(cfg.normalize_std)}}},
        {"gan", gan_config_to_json(cfg.gan)},
        {"train", train_config_to_json(cfg.train)},
        {"backbone", backbone_config_to_json(cfg.backbone)},
        {"external_weights", cfg.external_weights.string()},
        {"xai",
         {{"variant", xai_variant_name(cfg.xai.variant)},
          {"sample_count", cfg.xai.sample_count},
          {"alpha", cfg.xai.alpha},
          {"mass_fraction", cfg.xai.mass_fraction}}},
        {"output_dir", cfg.output_dir.string()},
        {"global_seed", cfg.global_seed}};
}

ExperimentConfig experiment_from_json(const nlohmann::json& j) {
    try {
        ExperimentConfig cfg;
        if (j.contains("data")) {
            const auto& d = j.at("data");
            cfg.data.root = d.value("root", std::string{});
            cfg.data.train_fraction = d.value("train_fraction", cfg.data.train_fraction);
            if (d.contains("toy")) {
                const auto& t = d.at("toy");
                cfg.data.toy.enabled = t.value("enabled", cfg.data.toy.enabled);
                if (t.contains("n_per_class")) {
                    const auto& n = t.at("n_per_class");
                    if (!n.is_array() || n.size() != static_cast<size_t>(kNumClasses))
                        throw SchemaError("toy.n_per_class must hold one count per class");
                    for (size_t i = 0; i < static_cast<size_t>(kNumClasses); ++i)
                        cfg.data.toy.n_per_class[i] = n.at(i).get<int64_t>();
                }
                cfg.data.toy.image_side = t.value("image_side", cfg.data.toy.image_side);
            }
        }
        if (j.contains("preprocess")) {
            const auto& p = j.at("preprocess");
            if (p.contains("augment")) cfg.augment = policy_from_json(p.at("augment"));
            if (p.contains("normalize_mean")) array_from_json(p.at("normalize_mean"), cfg.normalize_mean);
            if (p.contains("normalize_std")) array_from_json(p.at("normalize_std"), cfg.normalize_std);
        }
        if (j.contains("gan")) cfg.gan = gan_config_from_json(j.at("gan"));
        if (j.contains("train")) cfg.train = train_config_from_json(j.at("train"));
        if (j.contains("backbone")) cfg.backbone = backbone_config_from_json(j.at("backbone"));
        cfg.external_weights = j.value("external_weights", std::string{});
        if (j.contains("xai")) {
            const auto& x = j.at("xai");
            cfg.xai.variant = xai_variant_from_name(x.value("variant", std::string{xai_variant_name(cfg.xai.variant)}));
            cfg.xai.sample_count = x.value("sample_count", cfg.xai.sample_count);
            cfg.xai.alpha = x.value("alpha", cfg.xai.alpha);
            cfg.xai.mass_fraction = x.value("mass_fraction", cfg.xai.mass_fraction);
        }
        cfg.output_dir = j.value("output_dir", cfg.output_dir.string());
        cfg.global_seed = j.value("global_seed", cfg.global_seed);
        return cfg;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string{"experiment config: "} + e.what());
    }
}

ExperimentConfig load_experiment_config(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(path.string() + ": " + e.what());
    }
    return experiment_from_json(j);
}

void save_experiment_config(const ExperimentConfig& cfg, const fs::path& path) {
    write_text(path, experiment_to_json(cfg).dump(2) + "\n");
}

std::string run_tag(const ExperimentConfig& cfg) {
    return std::string{arch_name(cfg.backbone.arch)} + "_" + augmentation_name(cfg.train.augmentation);
}

RunPaths run_paths(const ExperimentConfig& cfg) {
    RunPaths p;
    p.run_dir = cfg.output_dir / run_tag(cfg);
    p.manifests = p.run_dir / "manifests";
    p.gan = p.run_dir / "gan";
    p.checkpoints = p.run_dir / "checkpoints";
    p.metrics = p.run_dir / "metrics";
    p.xai = p.run_dir / "xai";
    p.report = p.run_dir / "report";
    return p;
}

uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage) {
    return derive_seed(cfg.global_seed, stage);
}

RunLock::RunLock(const fs::path& run_dir) {
    fs::create_directories(run_dir);
    lock_path_ = run_dir / ".lock";
    const int fd = ::open(lock_path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
        if (errno == EEXIST)
            throw PolicyViolationError("run directory is locked by " + lock_path_.string() +
                                       "; remove the file if its owner is gone");
        throw IoError("cannot create lock file " + lock_path_.string() + ": " + std::strerror(errno));
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const ssize_t n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
}

RunLock::~RunLock() { ::unlink(lock_path_.c_str()); }

Manifest cmd_prepare(const ExperimentConfig& cfg) {
    cfg.validate();
    const RunPaths rp = run_paths(cfg);
    RunLock lock(rp.run_dir);
    fs::create_directories(rp.manifests);
    const uint64_t seed = stage_seed(cfg, "prepare");

    Manifest full;
    if (cfg.data.toy.enabled) {
        const fs::path corpus = cfg.data.root.empty() ? rp.run_dir / "corpus" : cfg.data.root;
        full = generate_toy_corpus(corpus, cfg.data.toy.n_per_class, cfg.data.toy.image_side,
                                   derive_seed(seed, "toy"));
    } else {
        full = scan_dataset(cfg.data.root);
    }

    auto [train_m, test_m] = stratified_split(full, cfg.data.train_fraction, derive_seed(seed, "split"));
    write_manifest_csv(train_m, rp.manifests / "manifest_train.csv");
    write_manifest_csv(test_m, rp.manifests / "manifest_test.csv");

    const ClassWeights w = class_weights(train_m);
    nlohmann::json weights, counts;
    for (int c = 0; c < kNumClasses; ++c) {
        weights[class_dir_name(c)] = w.w[static_cast<size_t>(c)];
        counts[class_dir_name(c)] = train_m.class_counts[static_cast<size_t>(c)];
    }
    write_text(rp.manifests / "weights.json",
               nlohmann::json{{"class_weights", weights}, {"train_class_counts", counts}}.dump(2) + "\n");
    return train_m;
}

GanState cmd_train_gan(const ExperimentConfig& cfg) {
    cfg.validate();
    const RunPaths rp = run_paths(cfg);
    RunLock lock(rp.run_dir);
    require_artifact(rp.manifests / "manifest_train.csv", "prepare");
    const Manifest train_m = read_manifest_csv(rp.manifests / "manifest_train.csv");
    cfg.gan.validate_against(train_m);
    fs::create_directories(rp.gan);

    GanState st = train_cgan(train_m, cfg.gan, stage_seed(cfg, "gan"), rp.gan);

    {
        std::ofstream out(rp.gan / "loss_history.csv");
        if (!out) throw IoError("cannot write " + (rp.gan / "loss_history.csv").string());
        out << "epoch,gen_loss,disc_loss\n";
        char buf[128];
        for (const auto& row : st.loss_history) {
            std::snprintf(buf, sizeof buf, "%lld,%.17g,%.17g\n", static_cast<long long>(row.epoch), row.gen_loss,
                          row.disc_loss);
            out << buf;
        }
    }
    {
        std::ofstream out(rp.gan / "probe_means.csv");
        if (!out) throw IoError("cannot write " + (rp.gan / "probe_means.csv").string());
        out << "epoch";
        for (int c : cfg.gan.minority_classes) out << ",gen_mean_" << class_dir_name(c) << ",real_mean_" << class_dir_name(c);
        out << "\n";
        char buf[64];
        for (size_t e = 0; e < st.gen_mean_history.size(); ++e) {
            out << (e + 1);
            for (int c : cfg.gan.minority_classes) {
                std::snprintf(buf, sizeof buf, ",%.17g,%.17g", st.gen_mean_history[e][static_cast<size_t>(c)],
                              st.real_mean[static_cast<size_t>(c)]);
                out << buf;
            }
            out << "\n";
        }
    }
    return st;
}

void cmd_synthesize(const ExperimentConfig& cfg) {
    cfg.validate();
    const RunPaths rp = run_paths(cfg);
    RunLock lock(rp.run_dir);
    require_artifact(rp.gan / "cgan.stk", "train-gan");
    GanConfig saved;
    GanState st = load_gan_checkpoint(rp.gan / "cgan.stk", saved);
    const uint64_t seed = stage_seed(cfg, "gan");
    for (int64_t epoch = saved.stabilization_epochs + 1; epoch <= saved.total_epochs(); ++epoch)
        synthesize_epoch(st.gen, saved, epoch, seed, rp.gan);
}

TrainState cmd_train(const ExperimentConfig& cfg) {
    cfg.validate();
    const RunPaths rp = run_paths(cfg);
    RunLock lock(rp.run_dir);
    require_artifact(rp.manifests / "manifest_train.csv", "prepare");
    require_artifact(rp.manifests / "manifest_test.csv", "prepare");
    Manifest train_m = read_manifest_csv(rp.manifests / "manifest_train.csv");
    const Manifest test_m = read_manifest_csv(rp.manifests / "manifest_test.csv");

    const bool wants_synthetic = cfg.train.augmentation == Augmentation::cgan ||
                                 cfg.train.augmentation == Augmentation::classical_cgan;
    if (wants_synthetic) {
        bool any = false;
        for (int c : cfg.gan.minority_classes) any = any || fs::exists(rp.gan / class_dir_name(c));
        if (!any) throw DependencyError("missing synthetic images under " + rp.gan.string() +
                                        "; run `train-gan` or `synthesize` first");
        train_m = merge_synthetic(train_m, rp.gan);
    }

    // the stage seed keeps train.seed live so config sweeps can vary it
    const uint64_t seed = derive_seed(stage_seed(cfg, "train"), cfg.train.seed);
    std::unique_ptr<Backbone> model;
    if (!cfg.external_weights.empty()) {
        if (!fs::exists(cfg.external_weights))
            throw DependencyError("external weights archive missing: " + cfg.external_weights.string());
        model = load_backbone(cfg.external_weights);
    } else {
        model = make_backbone(cfg.backbone, seed);
    }
    if (!model->has_head()) model->replace_head(seed);

    TrainConfig tc = cfg.train;
    tc.seed = seed;
    tc.augment_policy = cfg.augment;
    tc.normalize_mean = cfg.normalize_mean;
    tc.normalize_std = cfg.normalize_std;

    fs::create_directories(rp.checkpoints);
    TrainState st = fit(train_m, test_m, *model, tc, rp.checkpoints);
    write_history_csv(st.history, rp.checkpoints / "history.csv");
    return st;
}

EvalReport cmd_evaluate(const ExperimentConfig& cfg) {
    cfg.validate();
    const RunPaths rp = run_paths(cfg);
    RunLock lock(rp.run_dir);
    require_artifact(rp.checkpoints / "best.stk", "train");
    require_artifact(rp.manifests / "manifest_test.csv", "prepare");
    const Manifest test_m = read_manifest_csv(rp.manifests / "manifest_test.csv");
    std::unique_ptr<Backbone> model = load_backbone(rp.checkpoints / "best.stk");

    ClassWeights uniform;
    uniform.w = {1.0, 1.0, 1.0};
    const EvalOutput ev = run_inference(*model, test_m, cfg.train.batch_size, uniform, cfg.normalize_mean,
                                        cfg.normalize_std);
    const ConfusionMatrix cm = confusion_matrix(ev.predictions, ev.labels);
    EvalReport rep = metrics_from_cm(cm);
    // the reported loss echoes the checkpoint's own (class-weighted) eval
    // loss; an archive without history falls back to the plain mean CE
    rep.loss = ev.loss;
    {
        const Archive a = read_archive(rp.checkpoints / "best.stk");
        if (a.meta.contains("history") && a.meta.at("history").is_array() && !a.meta.at("history").empty())
            rep.loss = a.meta.at("history").back().value("eval_loss", ev.loss);
    }
    rep.model_tag = arch_name(cfg.backbone.arch);
    rep.augmentation_tag = augmentation_name(cfg.train.augmentation);

    fs::create_directories(rp.metrics);
    write_metrics_json(rep, rp.metrics / "metrics.json");
    write_confusion_csv(cm, rp.metrics / "confusion_matrix.csv");
    return rep;
}

void cmd_explain(const ExperimentConfig& cfg) {
    cfg.validate();
    const RunPaths rp = run_paths(cfg);
    RunLock lock(rp.run_dir);
    require_artifact(rp.checkpoints / "best.stk", "train");
    require_artifact(rp.manifests / "manifest_test.csv", "prepare");
    const Manifest test_m = read_manifest_csv(rp.manifests / "manifest_test.csv");
    if (test_m.records.empty()) throw ConfigError("test manifest is empty; nothing to explain");
    std::unique_ptr<Backbone> model = load_backbone(rp.checkpoints / "best.stk");
    const std::array<LayerProbe, 3> probes = resolve_probes(*model);
    const int64_t side = model->config().image_side;
    fs::create_directories(rp.xai);

    // seeded sample of test images, reported in manifest order
    std::vector<size_t> idx(test_m.records.size());
    std::iota(idx.begin(), idx.end(), size_t{0});
    Rng rng(derive_seed(stage_seed(cfg, "explain"), "sample"));
    rng.shuffle(idx);
    idx.resize(std::min<size_t>(idx.size(), static_cast<size_t>(cfg.xai.sample_count)));
    std::sort(idx.begin(), idx.end());

    // toy corpora carry blob boxes next to the class dirs; use them when present
    std::map<std::string, TruthBox> truth;
    {
        const fs::path truth_path = test_m.records.front().path.parent_path().parent_path() / "toy_truth.json";
        if (fs::exists(truth_path)) truth = read_toy_truth(truth_path);
    }

    nlohmann::json images = nlohmann::json::array();
    for (size_t i : idx) {
        const ImageRecord& rec = test_m.records[i];
        const ImageTensor unit = load_and_resize(rec.path, side);
        const ImageTensor std_img = normalize(unit, cfg.normalize_mean, cfg.normalize_std);

        int predicted;
        {
            Tape t;
            Tensor batch({1, 3, side, side});
            std::copy(std_img.data.data(), std_img.data.data() + std_img.data.size(), batch.data());
            Forward fw = model->forward(t, t.leaf(std::move(batch)));
            predicted = argmax3(t.val(fw.logits).data());
        }

        const std::string stem = rec.path.stem().string();
        const std::string truth_key = rec.path.parent_path().filename().string() + "/" + rec.path.filename().string();
        const auto box = truth.find(truth_key);

        nlohmann::json probe_rows = nlohmann::json::array();
        for (const LayerProbe& probe : probes) {
            const Heatmap h = cfg.xai.variant == Heatmap::Variant::gradcampp
                                  ? gradcampp(*model, std_img, predicted, probe)
                                  : gradcam(*model, std_img, predicted, probe);
            const fs::path overlay_path = write_heatmap_files(rp.xai, stem, h, unit, cfg.xai.alpha);
            nlohmann::json row{{"depth", probe_depth_name(probe.depth_tag)},
                               {"layer", probe.layer_name},
                               {"degenerate", h.degenerate},
                               {"overlay", overlay_path.filename().string()}};
            if (box != truth.end())
                row["localization"] = localization_score(h, box->second, cfg.xai.mass_fraction);
            probe_rows.push_back(std::move(row));
        }
        images.push_back(nlohmann::json{{"image", rec.path.filename().string()},
                                        {"true_label", class_dir_name(rec.label)},
                                        {"predicted", class_dir_name(predicted)},
                                        {"probes", std::move(probe_rows)}});
    }

    write_text(rp.xai / "xai_summary.json",
               nlohmann::json{{"variant", xai_variant_name(cfg.xai.variant)},
                              {"alpha", cfg.xai.alpha},
                              {"mass_fraction", cfg.xai.mass_fraction},
                              {"model", arch_name(cfg.backbone.arch)},
                              {"images", std::move(images)}}
                       .dump(2) +
                   "\n");
}

std::string cmd_report(const ExperimentConfig& cfg) {
    cfg.validate();
    const RunPaths rp = run_paths(cfg);
    RunLock lock(rp.run_dir);

    std::vector<fs::path> metric_files;
    for (const auto& entry : fs::directory_iterator(cfg.output_dir)) {
        if (!entry.is_directory()) continue;
        const fs::path m = entry.path() / "metrics" / "metrics.json";
        if (fs::exists(m)) metric_files.push_back(m);
    }
    if (metric_files.empty())
        throw DependencyError("no metrics.json under " + cfg.output_dir.string() + "; run `evaluate` first");
    std::sort(metric_files.begin(), metric_files.end());

    std::vector<EvalReport> reports;
    reports.reserve(metric_files.size());
    for (const fs::path& m : metric_files) reports.push_back(read_metrics_json(m));

    const std::string md = render_report(reports, ReportFormat::table);
    fs::create_directories(rp.report);
    write_text(rp.report / "report.md", md);
    write_text(rp.report / "report.json", render_report(reports, ReportFormat::json));
    return md;
}

}  // namespace stroke
