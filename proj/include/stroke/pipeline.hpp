#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>

#include "json.hpp"
#include "stroke/augment.hpp"
#include "stroke/backbone.hpp"
#include "stroke/cgan.hpp"
#include "stroke/gradcam.hpp"
#include "stroke/metrics.hpp"
#include "stroke/train.hpp"

namespace stroke {

struct ToyDataConfig {
    bool enabled = false;
    std::array<int64_t, kNumClasses> n_per_class{200, 100, 100};
    int64_t image_side = 64;
};

struct DataConfig {
    std::filesystem::path root;  // scanned corpus; toy target dir when toy is enabled
    double train_fraction = 0.8;
    ToyDataConfig toy;
};

struct XaiConfig {
    Heatmap::Variant variant = Heatmap::Variant::gradcampp;  // the reported heatmaps use ++
    int64_t sample_count = 5;  // test images to explain
    double alpha = 0.4;
    double mass_fraction = 0.1;
};

/// Everything one run needs. The preprocess policy and normalization
/// constants here are authoritative: `train` copies them over the equivalent
/// TrainConfig fields before fitting.
struct ExperimentConfig {
    DataConfig data;
    AugmentPolicy augment;
    std::array<double, 3> normalize_mean{0.5, 0.5, 0.5};
    std::array<double, 3> normalize_std{0.5, 0.5, 0.5};
    GanConfig gan;
    TrainConfig train;
    BackboneConfig backbone;
    std::filesystem::path external_weights;  // optional backbone archive; replaces fresh init when set
    XaiConfig xai;
    std::filesystem::path output_dir = "runs";
    uint64_t global_seed = 7;

    void validate() const;
};

nlohmann::json experiment_to_json(const ExperimentConfig& cfg);
ExperimentConfig experiment_from_json(const nlohmann::json& j);
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const ExperimentConfig& cfg, const std::filesystem::path& path);

/// `<arch>_<augmentation>`, echoing the report's row labels.
std::string run_tag(const ExperimentConfig& cfg);

struct RunPaths {
    std::filesystem::path run_dir;
    std::filesystem::path manifests;
    std::filesystem::path gan;  // checkpoint, loss curves, and the synthetic class dirs
    std::filesystem::path checkpoints;
    std::filesystem::path metrics;
    std::filesystem::path xai;
    std::filesystem::path report;
};

/// `<output_dir>/<run_tag>/{manifests,gan,checkpoints,metrics,xai,report}`.
/// Pure path arithmetic; nothing is created.
RunPaths run_paths(const ExperimentConfig& cfg);

/// Stage seeds fan out from the global seed as derive_seed(global_seed,
/// stage) for stage in {"prepare", "gan", "train", "explain"}, so each
/// subcommand is reproducible in isolation. The training stage folds
/// train.seed in on top, keeping that knob live.
uint64_t stage_seed(const ExperimentConfig& cfg, const std::string& stage);

/// Exclusive ownership of a run directory, held for the lifetime of the
/// object via a `.lock` file. A second concurrent holder is a policy
/// violation naming the lock path.
class RunLock {
  public:
    explicit RunLock(const std::filesystem::path& run_dir);
    ~RunLock();
    RunLock(const RunLock&) = delete;
    RunLock& operator=(const RunLock&) = delete;

  private:
    std::filesystem::path lock_path_;
};

/// Scan or synthesize the corpus, split it, and write
/// manifests/{manifest_train.csv,manifest_test.csv,weights.json}.
Manifest cmd_prepare(const ExperimentConfig& cfg);

/// Adversarial training on the train manifest; writes gan/cgan.stk, the
/// per-epoch loss and probe-mean curves, and the generation-phase images.
GanState cmd_train_gan(const ExperimentConfig& cfg);

/// Writes the full generation-phase image set from gan/cgan.stk with the
/// saved parameters. Filenames match the training run's output; pixel
/// content reflects the checkpoint rather than the mid-training snapshots.
void cmd_synthesize(const ExperimentConfig& cfg);

/// Fine-tune the configured backbone; writes checkpoints/{best.stk,history.csv}.
TrainState cmd_train(const ExperimentConfig& cfg);

/// Test-set pass over the best checkpoint; writes
/// metrics/{metrics.json,confusion_matrix.csv}.
EvalReport cmd_evaluate(const ExperimentConfig& cfg);

/// Heatmaps for a seeded sample of test images at the three resolved probe
/// depths; writes xai/ overlays plus xai_summary.json.
void cmd_explain(const ExperimentConfig& cfg);

/// Aggregates every sibling run's metrics.json under output_dir into
/// report/report.md (+ report.json); returns the markdown.
std::string cmd_report(const ExperimentConfig& cfg);

}  // namespace stroke
