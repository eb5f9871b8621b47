#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <set>

#include "stroke/cgan.hpp"
#include "stroke/errors.hpp"
#include "stroke/image_io.hpp"
#include "stroke/rng.hpp"
#include "stroke/toy_corpus.hpp"
#include "test_util.hpp"

using namespace stroke;
namespace fs = std::filesystem;

namespace {

GanConfig tiny_cfg() {
    GanConfig cfg;
    cfg.noise_dim = 16;
    cfg.gen_image_side = 32;
    cfg.stabilization_epochs = 1;
    cfg.generation_epochs = 2;
    cfg.images_per_generation_epoch = 4;
    cfg.batch_size = 4;
    cfg.base_channels = 4;
    cfg.label_embed_dim = 4;
    return cfg;
}

std::vector<double> noise(const GanConfig& cfg, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> z(static_cast<size_t>(cfg.noise_dim));
    for (auto& v : z) v = rng.normal();
    return z;
}

int64_t count_pngs(const fs::path& dir) {
    if (!fs::exists(dir)) return 0;
    int64_t n = 0;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.path().extension() == ".png") ++n;
    return n;
}

}  // namespace

TEST_SUITE("cgan") {

TEST_CASE("config validation") {
    GanConfig cfg = tiny_cfg();
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.total_epochs() == 3);

    GanConfig bad = cfg;
    bad.gen_image_side = 48;  // not 4 * 2^n
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.noise_dim = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.minority_classes = {0};
    CHECK_THROWS_AS(bad.validate(), PolicyViolationError);
    bad = cfg;
    bad.minority_classes = {};
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.batch_size = 0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = cfg;
    bad.learning_rate = 0.0;
    CHECK_THROWS_AS(bad.validate(), ConfigError);

    nlohmann::json j = gan_config_to_json(cfg);
    GanConfig back = gan_config_from_json(j);
    CHECK(back.noise_dim == cfg.noise_dim);
    CHECK(back.gen_image_side == cfg.gen_image_side);
    CHECK(back.stabilization_epochs == cfg.stabilization_epochs);
    CHECK(back.generation_epochs == cfg.generation_epochs);
    CHECK(back.images_per_generation_epoch == cfg.images_per_generation_epoch);
    CHECK(back.minority_classes == cfg.minority_classes);
    CHECK(back.base_channels == cfg.base_channels);
    CHECK(back.label_embed_dim == cfg.label_embed_dim);
}

TEST_CASE("phase schedule is a pure function of completed epochs") {
    GanConfig cfg = tiny_cfg();
    cfg.stabilization_epochs = 3;
    cfg.generation_epochs = 2;
    CHECK(phase_for(0, cfg) == GanState::Phase::stabilization);
    CHECK(phase_for(2, cfg) == GanState::Phase::stabilization);
    CHECK(phase_for(3, cfg) == GanState::Phase::generation);
    CHECK(phase_for(4, cfg) == GanState::Phase::generation);
    CHECK(phase_for(5, cfg) == GanState::Phase::done);
    CHECK(phase_for(99, cfg) == GanState::Phase::done);
    CHECK(std::string(gan_phase_name(GanState::Phase::generation)) == "generation");
}

TEST_CASE("generator output shape, range, and determinism") {
    GanConfig cfg = tiny_cfg();
    ParamStore gen, disc;
    init_gan_params(gen, disc, cfg, 7);

    auto z = noise(cfg, 11);
    Tensor img = generator_forward(gen, cfg, z, 1);
    CHECK(img.shape() == std::vector<int64_t>{1, 32, 32});
    CHECK(img.min() >= 0.0);
    CHECK(img.max() <= 1.0);

    Tensor again = generator_forward(gen, cfg, z, 1);
    CHECK(img.bit_equal(again));

    // label conditioning must reach the output
    Tensor other_label = generator_forward(gen, cfg, z, 2);
    CHECK_FALSE(img.bit_equal(other_label));
    // as must the noise vector
    Tensor other_noise = generator_forward(gen, cfg, noise(cfg, 12), 1);
    CHECK_FALSE(img.bit_equal(other_noise));
}

TEST_CASE("discriminator yields a probability and uses its label channel") {
    GanConfig cfg = tiny_cfg();
    ParamStore gen, disc;
    init_gan_params(gen, disc, cfg, 8);

    Tensor img = testutil::random_tensor({1, 32, 32}, 21, 0.0, 1.0);
    double p1 = discriminator_forward(disc, cfg, img, 1);
    CHECK(p1 > 0.0);
    CHECK(p1 < 1.0);
    CHECK(p1 == discriminator_forward(disc, cfg, img, 1));
    CHECK(p1 != discriminator_forward(disc, cfg, img, 2));
}

TEST_CASE("parameter init is seed-deterministic") {
    GanConfig cfg = tiny_cfg();
    ParamStore g1, d1, g2, d2, g3, d3;
    init_gan_params(g1, d1, cfg, 5);
    init_gan_params(g2, d2, cfg, 5);
    init_gan_params(g3, d3, cfg, 6);
    REQUIRE(g1.names() == g2.names());
    for (const auto& name : g1.names()) CHECK(g1.get(name).value.bit_equal(g2.get(name).value));
    for (const auto& name : d1.names()) CHECK(d1.get(name).value.bit_equal(d2.get(name).value));
    bool any_diff = false;
    for (const auto& name : g1.names())
        if (!g1.get(name).value.bit_equal(g3.get(name).value)) any_diff = true;
    CHECK(any_diff);
}

TEST_CASE("synthesize_epoch writes the declared census") {
    GanConfig cfg = tiny_cfg();
    cfg.images_per_generation_epoch = 6;
    ParamStore gen, disc;
    init_gan_params(gen, disc, cfg, 9);

    testutil::TempDir dir;
    synthesize_epoch(gen, cfg, 3, 77, dir);

    const fs::path hem = dir / class_dir_name(1);
    const fs::path isc = dir / class_dir_name(2);
    CHECK(count_pngs(hem) == 3);
    CHECK(count_pngs(isc) == 3);
    CHECK(fs::exists(hem / "ep0003_000.png"));
    CHECK(fs::exists(hem / "ep0003_002.png"));
    CHECK(fs::exists(isc / "ep0003_000.png"));
    CHECK_FALSE(fs::exists(dir / class_dir_name(0)));

    ImageU8 loaded = read_png(hem / "ep0003_000.png");
    CHECK(loaded.width == 32);
    CHECK(loaded.height == 32);

    // same seed regenerates byte-identical files
    testutil::TempDir dir2;
    synthesize_epoch(gen, cfg, 3, 77, dir2);
    ImageU8 a = read_png(hem / "ep0003_001.png");
    ImageU8 b = read_png(fs::path(dir2) / class_dir_name(1) / "ep0003_001.png");
    CHECK(a.pixels == b.pixels);
}

TEST_CASE("training runs the full schedule and is reproducible") {
    testutil::TempDir corpus;
    generate_toy_corpus(corpus, {6, 5, 5}, 32, 31);
    Manifest m = scan_dataset(corpus);

    GanConfig cfg = tiny_cfg();
    testutil::TempDir out1;
    GanState s1 = train_cgan(m, cfg, 13, out1);

    CHECK(s1.epoch == cfg.total_epochs());
    CHECK(s1.phase == GanState::Phase::done);
    REQUIRE(s1.loss_history.size() == static_cast<size_t>(cfg.total_epochs()));
    CHECK(s1.loss_history.front().epoch == 1);
    CHECK(s1.loss_history.back().epoch == 3);
    for (const auto& row : s1.loss_history) {
        CHECK(std::isfinite(row.gen_loss));
        CHECK(std::isfinite(row.disc_loss));
    }
    REQUIRE(s1.gen_mean_history.size() == static_cast<size_t>(cfg.total_epochs()));
    for (int c : cfg.minority_classes) {
        CHECK(s1.real_mean[static_cast<size_t>(c)] > 0.0);
        for (const auto& row : s1.gen_mean_history) CHECK(std::isfinite(row[static_cast<size_t>(c)]));
    }

    // stabilization epoch 1 emits nothing; generation epochs 2 and 3 each emit
    // images_per_generation_epoch files, evenly split across minority classes
    for (int c : cfg.minority_classes) {
        const fs::path cd = fs::path(out1) / class_dir_name(c);
        CHECK(count_pngs(cd) == 4);
        CHECK(fs::exists(cd / "ep0002_000.png"));
        CHECK(fs::exists(cd / "ep0002_001.png"));
        CHECK(fs::exists(cd / "ep0003_000.png"));
        CHECK(fs::exists(cd / "ep0003_001.png"));
        CHECK_FALSE(fs::exists(cd / "ep0001_000.png"));
    }
    CHECK(count_pngs(fs::path(out1) / class_dir_name(0)) == 0);
    CHECK(fs::exists(fs::path(out1) / "cgan.stk"));

    testutil::TempDir out2;
    GanState s2 = train_cgan(m, cfg, 13, out2);
    REQUIRE(s2.loss_history.size() == s1.loss_history.size());
    for (size_t i = 0; i < s1.loss_history.size(); ++i) {
        CHECK(s1.loss_history[i].gen_loss == s2.loss_history[i].gen_loss);
        CHECK(s1.loss_history[i].disc_loss == s2.loss_history[i].disc_loss);
    }
    for (const auto& name : s1.gen.names()) CHECK(s1.gen.get(name).value.bit_equal(s2.gen.get(name).value));

    testutil::TempDir out3;
    GanState s3 = train_cgan(m, cfg, 14, out3);
    bool differs = false;
    for (size_t i = 0; i < s1.loss_history.size(); ++i)
        if (s1.loss_history[i].gen_loss != s3.loss_history[i].gen_loss) differs = true;
    CHECK(differs);

    {
        INFO("checkpoint round-trip restores everything");
        GanConfig cfg_back;
        GanState r = load_gan_checkpoint(fs::path(out1) / "cgan.stk", cfg_back);
        CHECK(cfg_back.noise_dim == cfg.noise_dim);
        CHECK(cfg_back.gen_image_side == cfg.gen_image_side);
        CHECK(cfg_back.stabilization_epochs == cfg.stabilization_epochs);
        CHECK(r.epoch == s1.epoch);
        CHECK(r.phase == s1.phase);
        REQUIRE(r.loss_history.size() == s1.loss_history.size());
        for (size_t i = 0; i < s1.loss_history.size(); ++i) {
            CHECK(r.loss_history[i].epoch == s1.loss_history[i].epoch);
            CHECK(r.loss_history[i].gen_loss == s1.loss_history[i].gen_loss);
            CHECK(r.loss_history[i].disc_loss == s1.loss_history[i].disc_loss);
        }
        REQUIRE(r.gen.names() == s1.gen.names());
        for (const auto& name : s1.gen.names()) CHECK(r.gen.get(name).value.bit_equal(s1.gen.get(name).value));
        REQUIRE(r.disc.names() == s1.disc.names());
        for (const auto& name : s1.disc.names()) CHECK(r.disc.get(name).value.bit_equal(s1.disc.get(name).value));

        // restored generator regenerates the checkpointed epoch's images exactly
        Tensor from_run = generator_forward(s1.gen, cfg, noise(cfg, 99), 2);
        Tensor from_ckpt = generator_forward(r.gen, cfg_back, noise(cfg, 99), 2);
        CHECK(from_run.bit_equal(from_ckpt));
    }

    {
        INFO("rejects minority classes missing from the manifest");
        Manifest only_normal;
        for (const auto& rec : m.records)
            if (rec.label == 0) only_normal.records.push_back(rec);
        only_normal.retally();
        CHECK_THROWS_AS(cfg.validate_against(only_normal), ConfigError);
        CHECK_NOTHROW(cfg.validate_against(m));
    }
}

}  // TEST_SUITE
