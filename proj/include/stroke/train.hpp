#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "stroke/augment.hpp"
#include "stroke/backbone.hpp"
#include "stroke/manifest.hpp"

namespace stroke {

enum class Augmentation { none, classical, cgan, classical_cgan };
const char* augmentation_name(Augmentation a);
Augmentation augmentation_from_name(const std::string& s);

struct TrainConfig {
    std::string optimizer = "adam";
    double learning_rate = 3e-4;
    int64_t batch_size = 32;
    int64_t epochs = 50;
    double dropout = 0.04;
    FreezeMode freeze_mode = FreezeMode::head_only;
    bool use_class_weights = true;
    Augmentation augmentation = Augmentation::classical;
    uint64_t seed = 7;
    AugmentPolicy augment_policy{};
    std::array<double, 3> normalize_mean{0.5, 0.5, 0.5};
    std::array<double, 3> normalize_std{0.5, 0.5, 0.5};

    void validate() const;  // learning_rate 0 is allowed: it must be a null update
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct EpochStats {
    int64_t epoch = 0;  // 1-based, strictly increasing
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double eval_loss = 0.0;
    double eval_accuracy = 0.0;
};

struct TrainState {
    std::vector<EpochStats> history;
    int64_t best_epoch = -1;
    double best_eval_accuracy = 0.0;
    std::filesystem::path checkpoint_path;  // empty when fit ran without a checkpoint dir
};

/// Max-shifted softmax over one logit vector.
std::vector<double> softmax(const std::vector<double>& logits);

/// -w_label * log softmax(logits)_label, via log-sum-exp.
double weighted_cross_entropy(const std::vector<double>& logits, int label, const ClassWeights& weights);

/// Decode, optionally augment (unit range), then standardize one image.
ImageTensor prepare_image(const std::filesystem::path& path, int64_t side, bool do_augment,
                          const AugmentPolicy& policy, uint64_t aug_seed, const std::array<double, 3>& mean,
                          const std::array<double, 3>& std);

struct EvalOutput {
    std::vector<int> labels;
    std::vector<int> predictions;
    double loss = 0.0;      // weighted-mean cross entropy under `weights`
    double accuracy = 0.0;  // plain fraction correct
};

/// Deterministic evaluation pass in manifest order: no augmentation, no dropout.
EvalOutput run_inference(Backbone& model, const Manifest& m, int64_t batch_size, const ClassWeights& weights,
                         const std::array<double, 3>& mean, const std::array<double, 3>& std);

/// Fine-tuning loop. Requires a head; applies cfg.freeze_mode, then per epoch
/// runs a seeded shuffle -> minibatch -> forward -> weighted CE -> Adam
/// update, followed by an evaluation pass on test_m. The best-eval-accuracy
/// epoch (ties to the latest) is kept: its parameters are restored into the
/// model on return and written to `<checkpoint_dir>/best.stk` when a
/// directory is given. A non-finite loss restores the last good parameters
/// and raises NumericError.
TrainState fit(const Manifest& train_m, const Manifest& test_m, Backbone& model, const TrainConfig& cfg,
               const std::filesystem::path& checkpoint_dir = {});

void write_history_csv(const std::vector<EpochStats>& history, const std::filesystem::path& path);

}  // namespace stroke
