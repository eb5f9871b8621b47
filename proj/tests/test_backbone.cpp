#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "stroke/backbone.hpp"
#include "stroke/errors.hpp"
#include "stroke/train.hpp"
#include "test_util.hpp"

using namespace stroke;

namespace {

BackboneConfig small_vit() {
    BackboneConfig cfg;
    cfg.arch = BackboneConfig::Arch::vit;
    cfg.image_side = 32;
    cfg.patch_size = 8;
    cfg.embed_dim = 16;
    cfg.depth = 2;
    cfg.heads = 4;
    return cfg;
}

Tensor run_logits(Backbone& model, const Tensor& img) {
    Tape t;
    auto fw = model.forward(t, t.leaf(img));
    return t.val(fw.logits);
}

}  // namespace

TEST_SUITE("backbone") {

TEST_CASE("config validation rejects inconsistent geometry") {
    BackboneConfig cfg = small_vit();
    cfg.patch_size = 7;  // does not divide 32
    CHECK_THROWS_AS(make_backbone(cfg, 1), ConfigError);

    cfg = small_vit();
    cfg.heads = 5;  // does not divide 16
    CHECK_THROWS_AS(make_backbone(cfg, 1), ConfigError);

    cfg = small_vit();
    cfg.arch = BackboneConfig::Arch::tnt;
    cfg.inner_patch_size = 3;  // does not divide patch 8
    CHECK_THROWS_AS(make_backbone(cfg, 1), ConfigError);

    cfg = small_vit();
    cfg.depth = 0;
    CHECK_THROWS_AS(make_backbone(cfg, 1), ConfigError);

    cfg = small_vit();
    cfg.dropout = 1.5;
    CHECK_THROWS_AS(make_backbone(cfg, 1), ConfigError);
}

TEST_CASE("arch names round-trip") {
    for (auto a : {BackboneConfig::Arch::vit, BackboneConfig::Arch::tnt, BackboneConfig::Arch::convnext,
                   BackboneConfig::Arch::maxvit})
        CHECK(arch_from_name(arch_name(a)) == a);
    CHECK_THROWS_AS(arch_from_name("resnet"), ConfigError);
}

TEST_CASE("backbone config json round-trips") {
    BackboneConfig cfg = small_vit();
    cfg.arch = BackboneConfig::Arch::maxvit;
    cfg.window_size = 2;
    cfg.depth = 3;
    cfg.dropout = 0.1;
    BackboneConfig back = backbone_config_from_json(backbone_config_to_json(cfg));
    CHECK(back.arch == cfg.arch);
    CHECK(back.image_side == cfg.image_side);
    CHECK(back.patch_size == cfg.patch_size);
    CHECK(back.embed_dim == cfg.embed_dim);
    CHECK(back.depth == cfg.depth);
    CHECK(back.heads == cfg.heads);
    CHECK(back.window_size == cfg.window_size);
    CHECK(back.dropout == cfg.dropout);
}

TEST_CASE("vit token count follows side/patch squared") {
    BackboneConfig cfg = small_vit();
    cfg.image_side = 224;
    cfg.patch_size = 16;
    cfg.embed_dim = 8;
    cfg.heads = 2;
    cfg.depth = 1;
    auto model = make_backbone(cfg, 3);
    CHECK(model->params().get("pos_embed").value.dim(0) == 196);

    cfg.image_side = 32;
    cfg.patch_size = 8;
    auto small = make_backbone(cfg, 3);
    CHECK(small->params().get("pos_embed").value.dim(0) == 16);
}

TEST_CASE("zero image with zero positions embeds to the projection bias") {
    auto model = make_backbone(small_vit(), 5);
    model->replace_head(5);
    auto& bias = model->params().get("patch_embed.bias");
    Rng rng(6);
    for (int64_t i = 0; i < bias.value.size(); ++i) bias.value[i] = rng.uniform(-1.0, 1.0);

    Tape t;
    auto fw = model->forward(t, t.leaf(Tensor::zeros({1, 3, 32, 32})));
    REQUIRE_FALSE(fw.captures.empty());
    CHECK(fw.captures[0].name == "patch_embed");
    const Tensor& tok = t.val(fw.captures[0].value);  // [1,16,16]
    REQUIRE(tok.rank() == 3);
    for (int64_t tk = 0; tk < tok.dim(1); ++tk)
        for (int64_t d = 0; d < tok.dim(2); ++d)
            CHECK(tok[tk * tok.dim(2) + d] == bias.value[d]);
}

TEST_CASE("attention probability rows sum to one") {
    for (auto arch : {BackboneConfig::Arch::vit, BackboneConfig::Arch::tnt, BackboneConfig::Arch::maxvit}) {
        BackboneConfig cfg = small_vit();
        cfg.arch = arch;
        if (arch == BackboneConfig::Arch::tnt) cfg.inner_patch_size = 4;
        if (arch == BackboneConfig::Arch::maxvit) cfg.window_size = 2, cfg.depth = 2;
        auto model = make_backbone(cfg, 7);
        model->replace_head(7);
        Tape t;
        auto fw = model->forward(t, t.leaf(testutil::random_tensor({2, 3, 32, 32}, 8, 0.0, 1.0)));
        REQUIRE_FALSE(fw.attn_probs.empty());
        for (Value p : fw.attn_probs) {
            const Tensor& a = t.val(p);
            const int64_t n = a.dim(a.rank() - 1);
            const int64_t rows = a.size() / n;
            for (int64_t r = 0; r < rows; ++r) {
                double s = 0;
                for (int64_t j = 0; j < n; ++j) s += a[r * n + j];
                CHECK(std::abs(s - 1.0) <= 1e-6);
            }
        }
    }
}

TEST_CASE("single-token attention is the 1x1 identity row") {
    BackboneConfig cfg = small_vit();
    cfg.image_side = 32;
    cfg.patch_size = 32;  // one patch, one token
    cfg.depth = 1;
    auto model = make_backbone(cfg, 9);
    model->replace_head(9);
    Tape t;
    auto fw = model->forward(t, t.leaf(testutil::random_tensor({1, 3, 32, 32}, 10, 0.0, 1.0)));
    REQUIRE_FALSE(fw.attn_probs.empty());
    for (Value p : fw.attn_probs) {
        const Tensor& a = t.val(p);
        for (int64_t i = 0; i < a.size(); ++i) CHECK(a[i] == 1.0);
    }
}

TEST_CASE("initialization is seed-deterministic per parameter name") {
    auto m1 = make_backbone(small_vit(), 42);
    auto m2 = make_backbone(small_vit(), 42);
    auto m3 = make_backbone(small_vit(), 43);
    bool any_diff = false;
    for (Parameter* p : m1->params().all()) {
        CHECK(m2->params().get(p->name).value.bit_equal(p->value));
        if (!m3->params().get(p->name).value.bit_equal(p->value)) any_diff = true;
    }
    CHECK(any_diff);
}

TEST_CASE("forward is deterministic; dropout is seeded") {
    BackboneConfig cfg = small_vit();
    cfg.dropout = 0.3;
    auto model = make_backbone(cfg, 11);
    model->replace_head(11);
    Tensor img = testutil::random_tensor({1, 3, 32, 32}, 12, 0.0, 1.0);

    CHECK(run_logits(*model, img).bit_equal(run_logits(*model, img)));

    auto train_logits = [&](uint64_t seed) {
        Tape t;
        auto fw = model->forward(t, t.leaf(img), true, seed);
        return t.val(fw.logits);
    };
    CHECK(train_logits(5).bit_equal(train_logits(5)));
    CHECK_FALSE(train_logits(5).bit_equal(train_logits(6)));
}

TEST_CASE("tnt with zeroed fuse projections reduces to the weight-tied vit") {
    BackboneConfig tc = small_vit();
    tc.arch = BackboneConfig::Arch::tnt;
    tc.inner_patch_size = 4;
    auto tnt = make_backbone(tc, 21);
    tnt->replace_head(22);

    auto vit = make_backbone(small_vit(), 23);
    vit->replace_head(24);

    // tie every shared outer parameter, zero the inner-to-outer projections
    for (Parameter* p : vit->params().all()) p->value = tnt->params().get(p->name).value;
    for (Parameter* p : tnt->params().all())
        if (p->name.rfind("fuse.", 0) == 0) p->value.zero();

    for (int i = 0; i < 3; ++i) {
        Tensor img = testutil::random_tensor({2, 3, 32, 32}, 30 + static_cast<uint64_t>(i), 0.0, 1.0);
        Tensor lt = run_logits(*tnt, img);
        Tensor lv = run_logits(*vit, img);
        REQUIRE(lt.same_shape(lv));
        for (int64_t j = 0; j < lt.size(); ++j) CHECK(std::abs(lt[j] - lv[j]) <= 1e-6);
    }
}

TEST_CASE("convnext block with zeroed pointwise output is a residual identity") {
    BackboneConfig cfg;
    cfg.arch = BackboneConfig::Arch::convnext;
    cfg.image_side = 32;
    cfg.patch_size = 4;
    cfg.embed_dim = 12;
    cfg.depth = 2;
    cfg.heads = 1;
    cfg.kernel_size = 7;
    auto model = make_backbone(cfg, 31);
    model->replace_head(31);
    for (Parameter* p : model->params().all())
        if (p->name.find(".pw2.weight") != std::string::npos) p->value.zero();

    Tape t;
    auto fw = model->forward(t, t.leaf(testutil::random_tensor({1, 3, 32, 32}, 32, 0.0, 1.0)));
    REQUIRE(fw.captures.size() == 3);  // stem + 2 blocks
    const Tensor& stem = t.val(fw.captures[0].value);
    for (size_t i = 1; i < fw.captures.size(); ++i) {
        const Tensor& blk = t.val(fw.captures[i].value);
        REQUIRE(blk.same_shape(stem));
        for (int64_t j = 0; j < blk.size(); ++j) CHECK(blk[j] == stem[j]);
    }
}

TEST_CASE("convnext stem grid and feature dim follow the config") {
    BackboneConfig cfg;
    cfg.arch = BackboneConfig::Arch::convnext;
    cfg.image_side = 64;
    cfg.patch_size = 8;
    cfg.embed_dim = 10;
    cfg.depth = 1;
    cfg.heads = 1;
    auto model = make_backbone(cfg, 33);
    model->replace_head(33);
    CHECK(model->feature_dim() == 10);
    const auto& reg = model->layer_registry();
    REQUIRE(reg.size() == 2);
    CHECK(reg[0].name == "stem");
    CHECK(reg[0].h == 8);
    Tape t;
    auto fw = model->forward(t, t.leaf(testutil::random_tensor({2, 3, 64, 64}, 34, 0.0, 1.0)));
    CHECK(t.val(fw.features).shape() == std::vector<int64_t>{2, 10});
    CHECK(t.val(fw.logits).shape() == std::vector<int64_t>{2, 3});
}

TEST_CASE("maxvit partitions: published 56x56 example and random bijectivity") {
    auto win = window_partition_order(56, 56, 7);
    auto grd = grid_partition_order(56, 56, 7);
    CHECK(win.size() == 56 * 56);
    CHECK(grd.size() == 56 * 56);
    // 64 windows of 49 tokens: first window covers the top-left 7x7 block
    for (int64_t r = 0; r < 7; ++r)
        for (int64_t cidx = 0; cidx < 7; ++cidx) CHECK(win[static_cast<size_t>(r * 7 + cidx)] == r * 56 + cidx);
    // 49 groups of 64 tokens: group 0 holds offset (0,0) of every window
    for (int64_t wr = 0; wr < 8; ++wr)
        for (int64_t wc = 0; wc < 8; ++wc)
            CHECK(grd[static_cast<size_t>(wr * 8 + wc)] == (wr * 7) * 56 + wc * 7);

    Rng rng(35);
    for (int it = 0; it < 30; ++it) {
        const int64_t P = 1 + rng.uniform_int(6);
        const int64_t h = P * (1 + rng.uniform_int(5));
        const int64_t w = P * (1 + rng.uniform_int(5));
        for (auto* fn : {&window_partition_order, &grid_partition_order}) {
            auto perm = (*fn)(h, w, P);
            REQUIRE(static_cast<int64_t>(perm.size()) == h * w);
            std::set<int64_t> seen(perm.begin(), perm.end());
            CHECK(static_cast<int64_t>(seen.size()) == h * w);  // bijective
            CHECK(*seen.begin() == 0);
            CHECK(*seen.rbegin() == h * w - 1);
            auto inv = inverse_permutation(perm);
            for (size_t i = 0; i < perm.size(); ++i) CHECK(inv[static_cast<size_t>(perm[i])] == static_cast<int64_t>(i));
        }
    }
    CHECK_THROWS_AS(window_partition_order(10, 10, 3), ShapeError);
    CHECK_THROWS_AS(grid_partition_order(9, 12, 4), ShapeError);
}

TEST_CASE("maxvit forward produces finite logits and spatial captures") {
    BackboneConfig cfg;
    cfg.arch = BackboneConfig::Arch::maxvit;
    cfg.image_side = 32;
    cfg.embed_dim = 8;
    cfg.depth = 2;
    cfg.heads = 2;
    cfg.window_size = 2;
    auto model = make_backbone(cfg, 41);
    model->replace_head(41);
    Tape t;
    auto fw = model->forward(t, t.leaf(testutil::random_tensor({1, 3, 32, 32}, 42, 0.0, 1.0)));
    CHECK(t.val(fw.logits).all_finite());
    REQUIRE(fw.captures.size() >= 3);
    CHECK(fw.captures[0].name == "stem.conv1");
    for (const auto& cap : fw.captures) {
        CHECK(cap.h > 0);
        CHECK(cap.w > 0);
        CHECK(cap.channels > 0);
    }
}

TEST_CASE("registry names are stable across seeds and match captures") {
    for (auto arch : {BackboneConfig::Arch::vit, BackboneConfig::Arch::tnt, BackboneConfig::Arch::convnext,
                      BackboneConfig::Arch::maxvit}) {
        BackboneConfig cfg = small_vit();
        cfg.arch = arch;
        if (arch == BackboneConfig::Arch::tnt) cfg.inner_patch_size = 4;
        if (arch == BackboneConfig::Arch::maxvit) cfg.window_size = 2;
        auto m1 = make_backbone(cfg, 1);
        auto m2 = make_backbone(cfg, 2);
        REQUIRE(m1->layer_registry().size() == m2->layer_registry().size());
        for (size_t i = 0; i < m1->layer_registry().size(); ++i)
            CHECK(m1->layer_registry()[i].name == m2->layer_registry()[i].name);

        m1->replace_head(1);
        Tape t;
        auto fw = m1->forward(t, t.leaf(testutil::random_tensor({1, 3, 32, 32}, 3, 0.0, 1.0)));
        REQUIRE(fw.captures.size() == m1->layer_registry().size());
        for (size_t i = 0; i < fw.captures.size(); ++i)
            CHECK(fw.captures[i].name == m1->layer_registry()[i].name);
    }
}

TEST_CASE("head replacement, freezing, and the trainable count identity") {
    auto model = make_backbone(small_vit(), 51);
    CHECK_FALSE(model->has_head());
    Tape t0;
    CHECK_THROWS_AS(model->forward(t0, t0.leaf(Tensor::zeros({1, 3, 32, 32}))), Error);

    model->replace_head(52);
    CHECK(model->has_head());
    CHECK(model->num_classes() == 3);
    const int64_t F = model->feature_dim();
    CHECK(model->params().get("head.weight").value.size() == 3 * F);

    model->apply_freeze(FreezeMode::head_only);
    CHECK(model->params().trainable_count() == F * 3 + 3);
    for (const Parameter* p : model->params().all())
        if (p->name.rfind("head.", 0) != 0) CHECK_FALSE(p->trainable);

    model->apply_freeze(FreezeMode::full);
    CHECK(model->params().trainable_count() == model->params().total_count());

    // head at 128 features: 128*3+3 = 387 parameters
    BackboneConfig big = small_vit();
    big.embed_dim = 128;
    big.heads = 4;
    big.depth = 1;
    auto wide = make_backbone(big, 53);
    wide->replace_head(53);
    CHECK(wide->params().get("head.weight").value.size() + wide->params().get("head.bias").value.size() == 387);
}

TEST_CASE("zeroed head yields the uniform softmax") {
    auto model = make_backbone(small_vit(), 61);
    model->replace_head(61);
    model->params().get("head.weight").value.zero();
    model->params().get("head.bias").value.zero();
    Tensor logits = run_logits(*model, testutil::random_tensor({1, 3, 32, 32}, 62, 0.0, 1.0));
    std::vector<double> lv(logits.data(), logits.data() + logits.size());
    auto probs = softmax(lv);
    for (double p : probs) CHECK(p == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("replace_head is idempotent in count and reseeds weights") {
    auto model = make_backbone(small_vit(), 71);
    model->replace_head(72);
    Tensor w1 = model->params().get("head.weight").value;
    const int64_t total = model->params().total_count();
    model->replace_head(73);
    CHECK(model->params().total_count() == total);
    CHECK_FALSE(model->params().get("head.weight").value.bit_equal(w1));
    model->replace_head(72);
    CHECK(model->params().get("head.weight").value.bit_equal(w1));
}

TEST_CASE("forward rejects wrong image geometry") {
    auto model = make_backbone(small_vit(), 81);
    model->replace_head(81);
    Tape t;
    CHECK_THROWS_AS(model->forward(t, t.leaf(Tensor::zeros({1, 3, 16, 16}))), ShapeError);
    CHECK_THROWS_AS(model->forward(t, t.leaf(Tensor::zeros({1, 1, 32, 32}))), ShapeError);
}

}  // TEST_SUITE
