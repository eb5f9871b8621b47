#pragma once

#include <array>
#include <filesystem>
#include <vector>

#include "json.hpp"
#include "stroke/manifest.hpp"
#include "stroke/params.hpp"
#include "stroke/tape.hpp"

namespace stroke {

struct GanConfig {
    int64_t noise_dim = 100;
    int64_t gen_image_side = 64;  // must be 4 * 2^n so the transposed stack lands exactly
    int num_classes = kNumClasses;
    int64_t stabilization_epochs = 200;
    int64_t generation_epochs = 800;
    int64_t images_per_generation_epoch = 800;
    std::vector<int> minority_classes{1, 2};
    double learning_rate = 2e-4;
    int64_t batch_size = 32;
    int64_t base_channels = 32;   // width of both conv stacks
    int64_t label_embed_dim = 16; // generator label embedding width

    int64_t total_epochs() const { return stabilization_epochs + generation_epochs; }
    void validate() const;
    /// Additionally rejects minority classes absent from the manifest.
    void validate_against(const Manifest& m) const;
};

nlohmann::json gan_config_to_json(const GanConfig& cfg);
GanConfig gan_config_from_json(const nlohmann::json& j);

struct GanState {
    ParamStore gen;
    ParamStore disc;
    int64_t epoch = 0;
    enum class Phase { stabilization, generation, done } phase = Phase::stabilization;
    struct EpochLoss {
        int64_t epoch = 0;
        double gen_loss = 0.0;
        double disc_loss = 0.0;
    };
    std::vector<EpochLoss> loss_history;
    // per-class mean-intensity diagnostics (minority classes only; others 0)
    std::array<double, kNumClasses> real_mean{};
    std::vector<std::array<double, kNumClasses>> gen_mean_history;  // one row per epoch
};

const char* gan_phase_name(GanState::Phase p);

/// Phase after `completed_epochs` full epochs: stabilization iff
/// completed_epochs < stabilization_epochs, done iff >= total_epochs().
GanState::Phase phase_for(int64_t completed_epochs, const GanConfig& cfg);

/// Builds the two parameter sets with deterministic per-name init.
void init_gan_params(ParamStore& gen, ParamStore& disc, const GanConfig& cfg, uint64_t seed);

/// Graph-building batch forwards; stores must already be bound to the tape.
Value generator_batch(Tape& t, ParamStore& gen, const GanConfig& cfg, Value z, const std::vector<int64_t>& labels);
Value discriminator_logits(Tape& t, ParamStore& disc, const GanConfig& cfg, Value images,
                           const std::vector<int64_t>& labels);

/// Single-sample entry points. The generator maps (z, label) to a [1,S,S]
/// image in [0,1]; the discriminator returns P(real | img, label) in (0,1).
Tensor generator_forward(ParamStore& gen, const GanConfig& cfg, const std::vector<double>& z, int label);
double discriminator_forward(ParamStore& disc, const GanConfig& cfg, const Tensor& img, int label);

/// Writes one generation epoch's worth of images, split evenly across the
/// minority classes, as `<out>/<classdir>/ep%04lld_%03lld.png`.
void synthesize_epoch(ParamStore& gen, const GanConfig& cfg, int64_t epoch, uint64_t seed,
                      const std::filesystem::path& out_dir);

/// Two-phase adversarial training: alternating BCE updates every step, no
/// image output during stabilization, one synthesized batch per generation
/// epoch. Checkpoints to `<out_dir>/cgan.stk`. Non-finite loss aborts.
GanState train_cgan(const Manifest& train_manifest, const GanConfig& cfg, uint64_t seed,
                    const std::filesystem::path& out_dir);

void save_gan_checkpoint(const std::filesystem::path& path, const GanState& state, const GanConfig& cfg);
/// Restores parameters, epoch, phase, and loss history; config comes from the
/// archive and is returned through cfg_out.
GanState load_gan_checkpoint(const std::filesystem::path& path, GanConfig& cfg_out);

/// Appends synthetic records (origin=synthetic, split=train) found under the
/// per-class directories of synth_root. Only minority classes (1, 2) may
/// contain images; a populated `normal` directory is a policy violation.
/// merge_count_per_class < 0 means "equalize": take just enough per class,
/// newest epochs first, to match the largest current class count.
Manifest merge_synthetic(const Manifest& train_manifest, const std::filesystem::path& synth_root,
                         int64_t merge_count_per_class = -1);

}  // namespace stroke
