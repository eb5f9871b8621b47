#include <cstdint>
#include <cstdio>
#include <exception>
#include <string>

#include "CLI11.hpp"
#include "stroke/errors.hpp"
#include "stroke/pipeline.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string output_dir;
    uint64_t seed = 0;
    bool seed_set = false;
};

stroke::ExperimentConfig load_config(const CommonArgs& a) {
    stroke::ExperimentConfig cfg = stroke::load_experiment_config(a.config_path);
    if (a.seed_set) cfg.global_seed = a.seed;
    if (!a.output_dir.empty()) cfg.output_dir = a.output_dir;
    return cfg;
}

CLI::App* add_subcommand(CLI::App& app, CommonArgs& a, const char* name, const char* desc) {
    CLI::App* sub = app.add_subcommand(name, desc);
    sub->add_option("--config", a.config_path, "experiment config file (json)")
        ->required()
        ->check(CLI::ExistingFile);
    sub->add_option("--seed", a.seed, "override global_seed")->each([&a](const std::string&) { a.seed_set = true; });
    sub->add_option("--output-dir", a.output_dir, "override output_dir");
    return sub;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"stroke triage pipeline: data prep, cGAN synthesis, fine-tuning, evaluation, explanation"};
    app.require_subcommand(1);
    CommonArgs a;

    add_subcommand(app, a, "prepare", "scan or synthesize the corpus, split it, write manifests + class weights")
        ->callback([&a] {
            const stroke::ExperimentConfig cfg = load_config(a);
            const stroke::Manifest train_m = stroke::cmd_prepare(cfg);
            const stroke::RunPaths rp = stroke::run_paths(cfg);
            std::printf("prepare: %lld train images (", static_cast<long long>(train_m.total()));
            for (int c = 0; c < stroke::kNumClasses; ++c)
                std::printf("%s%s=%lld", c ? ", " : "", stroke::class_dir_name(c),
                            static_cast<long long>(train_m.class_counts[static_cast<size_t>(c)]));
            std::printf(") -> %s\n", rp.manifests.string().c_str());
        });

    add_subcommand(app, a, "train-gan", "two-phase adversarial training; writes checkpoint, curves, images")
        ->callback([&a] {
            const stroke::ExperimentConfig cfg = load_config(a);
            const stroke::GanState st = stroke::cmd_train_gan(cfg);
            const stroke::RunPaths rp = stroke::run_paths(cfg);
            const double g = st.loss_history.empty() ? 0.0 : st.loss_history.back().gen_loss;
            const double d = st.loss_history.empty() ? 0.0 : st.loss_history.back().disc_loss;
            std::printf("train-gan: %lld epochs, final gen_loss=%.6f disc_loss=%.6f -> %s\n",
                        static_cast<long long>(st.epoch), g, d, (rp.gan / "cgan.stk").string().c_str());
        });

    add_subcommand(app, a, "synthesize", "regenerate the generation-phase images from the saved checkpoint")
        ->callback([&a] {
            const stroke::ExperimentConfig cfg = load_config(a);
            stroke::cmd_synthesize(cfg);
            std::printf("synthesize: wrote images under %s\n", stroke::run_paths(cfg).gan.string().c_str());
        });

    add_subcommand(app, a, "train", "fine-tune the configured backbone on the prepared manifests")
        ->callback([&a] {
            const stroke::ExperimentConfig cfg = load_config(a);
            const stroke::TrainState st = stroke::cmd_train(cfg);
            std::printf("train: best epoch %lld, eval_accuracy=%.6f -> %s\n",
                        static_cast<long long>(st.best_epoch), st.best_eval_accuracy,
                        st.checkpoint_path.string().c_str());
        });

    add_subcommand(app, a, "evaluate", "test-set metrics for the best checkpoint")->callback([&a] {
        const stroke::ExperimentConfig cfg = load_config(a);
        const stroke::EvalReport rep = stroke::cmd_evaluate(cfg);
        std::printf("evaluate: accuracy=%.6f macro_f1=%.6f loss=%.6f -> %s\n", rep.accuracy, rep.macro.f1, rep.loss,
                    (stroke::run_paths(cfg).metrics / "metrics.json").string().c_str());
    });

    add_subcommand(app, a, "explain", "heatmap overlays at three probe depths for sampled test images")
        ->callback([&a] {
            const stroke::ExperimentConfig cfg = load_config(a);
            stroke::cmd_explain(cfg);
            std::printf("explain: wrote overlays + xai_summary.json under %s\n",
                        stroke::run_paths(cfg).xai.string().c_str());
        });

    add_subcommand(app, a, "report", "aggregate every run's metrics into one table")->callback([&a] {
        const stroke::ExperimentConfig cfg = load_config(a);
        std::fputs(stroke::cmd_report(cfg).c_str(), stdout);
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const stroke::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 2;
    }
    return 0;
}
